#include "ovocc/params.hpp"

#include <algorithm>
#include <cmath>

#include "ovocc/error.hpp"

namespace ovocc {

ad::Var ParamSet::add(const std::string& name, const std::string& component, Tensor init,
                      bool trainable) {
  if (find(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  ad::Var v(std::move(init), trainable);
  params_.push_back({name, component, v, trainable});
  return v;
}

void ParamSet::extend(const ParamSet& other) {
  for (const auto& p : other.params()) {
    if (find(p.name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + p.name);
    params_.push_back(p);
  }
}

const Param* ParamSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Param& ParamSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error(ErrorCode::kInvalidArgument, "unknown parameter " + name);
}

void ParamSet::set_trainable(const std::string& component_prefix, bool trainable) {
  for (auto& p : params_) {
    if (p.component.rfind(component_prefix, 0) == 0) {
      p.trainable = trainable;
      p.var.node()->requires_grad = trainable;
      if (!trainable) p.var.zero_grad();
    }
  }
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::map<std::string, Tensor> ParamSet::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& p : params_) out.emplace(p.name, p.var.value());
  return out;
}

void ParamSet::load(const std::map<std::string, Tensor>& values) {
  for (const auto& [name, t] : values) {
    Param& p = get(name);
    if (p.var.value().shape() != t.shape()) {
      throw Error(ErrorCode::kShapeMismatch, "parameter " + name + " has shape " +
                                                 shape_str(p.var.value().shape()) +
                                                 ", checkpoint " + shape_str(t.shape()));
    }
    p.var.mutable_value() = t;
  }
}

Census parameter_census(const ParamSet& params) {
  std::map<std::string, CensusRow> rows;
  Census c;
  for (const auto& p : params.params()) {
    auto& r = rows[p.component];
    r.component = p.component;
    const std::size_t n = p.var.value().size();
    r.total += n;
    c.total += n;
    if (p.trainable) {
      r.trainable += n;
      c.trainable += n;
    }
  }
  for (auto& [_, r] : rows) c.components.push_back(r);
  return c;
}

void Optimizer::step(ParamSet& params) {
  ++t_;
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  for (auto& p : params.params()) {
    if (!p.trainable) continue;
    const Tensor& g = p.var.grad();
    if (g.size() != p.var.value().size()) continue;
    Tensor& w = p.var.mutable_value();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
    } else {
      auto [it, inserted] = moments_.try_emplace(p.name, Tensor(w.shape()), Tensor(w.shape()));
      Tensor& m = it->second.first;
      Tensor& v = it->second.second;
      const double c1 = 1.0 - std::pow(kB1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(kB2, static_cast<double>(t_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = kB1 * m[i] + (1 - kB1) * g[i];
        v[i] = kB2 * v[i] + (1 - kB2) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
    p.var.zero_grad();
  }
}

}  // namespace ovocc
