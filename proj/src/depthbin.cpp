#include "ovocc/depthbin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ovocc/error.hpp"
#include "ovocc/ops.hpp"
#include "ovocc/random.hpp"

namespace ovocc::depthbin {

namespace {
constexpr double kFloor = 1e-300;
}

using ad::Var;

std::size_t DepthMap::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Var lora_linear(const Var& x, const Var& base_weight, const Var& base_bias,
                const LoraAdapter& adapter) {
  const Shape& w = base_weight.shape();
  const Shape& down = adapter.down.shape();
  const Shape& up = adapter.up.shape();
  if (w.size() != 2 || down.size() != 2 || up.size() != 2 || down[1] != w[1] ||
      up[0] != w[0] || down[0] != up[1] || down[0] != adapter.rank) {
    throw Error(ErrorCode::kShapeMismatch, "lora_linear: base " + shape_str(w) + " down " +
                                               shape_str(down) + " up " + shape_str(up));
  }
  Var base = ad::linear(x, base_weight, base_bias);
  Var delta = ad::linear(ad::linear(x, adapter.down, Var()), adapter.up, Var());
  return ad::add(base, ad::scale(delta, adapter.scale));
}

Var relative_to_metric(const Var& rel, const R2mParams& r2m) {
  for (double v : rel.value().vec()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteInput, "relative depth is not finite");
  }
  const Shape shape = rel.shape();
  Shape col = shape;
  col.push_back(1);
  Var r = ad::reshape(rel, col);
  Var hidden = ad::silu(ad::linear(r, r2m.w1, r2m.b1));
  Var mlp = ad::reshape(ad::linear(hidden, r2m.w2, r2m.b2), shape);
  return ad::softplus(ad::add(ad::scale_shift(rel, r2m.s, r2m.t), mlp));
}

Var metric_to_bin(const Var& depth, const BinSpec& bins) {
  bins.validate();
  const Tensor& d = depth.value();
  const std::size_t n = bins.n_bins;
  Shape shape = d.shape();
  shape.push_back(n);
  Tensor out(shape);
  std::vector<double> h(n);
  for (std::size_t i = 0; i < d.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      h[j] = -bins.beta * std::abs(d[i] - bins.center(j));
      mx = std::max(mx, h[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      h[j] = std::exp(h[j] - mx);
      z += h[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = h[j] / z;
  }
  auto dn = depth.node();
  Tensor probs = out;
  return ad::make_op(std::move(out), {depth}, [dn, probs = std::move(probs), bins, n](ad::Node& self) {
    const Tensor& d = dn->value;
    Tensor g(d.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      // dp_j/dd = p_j (a_j - sum_k p_k a_k), a_j = -beta * sign(d - c_j).
      double abar = 0.0, gp = 0.0, gpa = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double diff = d[i] - bins.center(j);
        const double a = diff > 0 ? -bins.beta : (diff < 0 ? bins.beta : 0.0);
        const double p = probs[i * n + j];
        abar += p * a;
        gp += self.grad[i * n + j] * p;
        gpa += self.grad[i * n + j] * p * a;
      }
      g[i] = gpa - gp * abar;
    }
    ad::accumulate(dn, g);
  });
}

BinTarget gt_bin_onehot(const DepthMap& d_hat, const BinSpec& bins) {
  bins.validate();
  const std::size_t n = bins.n_bins;
  const Tensor& d = d_hat.values;
  Shape shape = d.shape();
  shape.push_back(n);
  BinTarget t{Tensor(shape), std::vector<std::uint8_t>(d.size(), 0)};
  const double half = 0.5 * bins.width;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d_hat.mask.empty() && !d_hat.mask[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[i] - bins.center(j)) <= half) {
        t.onehot[i * n + j] = 1.0;
        t.coverage[i] = 1;
        break;
      }
    }
  }
  return t;
}

Var silog_loss(const Var& depth, const DepthMap& d_hat, double alpha) {
  const Tensor& d = depth.value();
  if (d.size() != d_hat.values.size() || d_hat.mask.size() != d.size()) {
    throw Error(ErrorCode::kShapeMismatch, "silog_loss: prediction " + shape_str(d.shape()) +
                                               " vs target " + shape_str(d_hat.values.shape()));
  }
  std::vector<double> g(d.size(), 0.0);
  double n = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d_hat.mask[i]) continue;
    if (!(d[i] > 0) || !(d_hat.values[i] > 0)) {
      throw Error(ErrorCode::kNonPositiveDepth, "silog_loss needs positive depths");
    }
    g[i] = std::log(d[i]) - std::log(d_hat.values[i]);
    n += 1.0;
    s1 += g[i];
    s2 += g[i] * g[i];
  }
  if (n == 0.0) throw Error(ErrorCode::kEmptyMask, "silog_loss: no pixels with ground truth");
  const double mean_g = s1 / n;
  const double inner = std::max(0.0, s2 / n - alpha * mean_g * mean_g);
  const double loss = std::sqrt(inner);
  auto dn = depth.node();
  auto mask = d_hat.mask;
  return ad::make_op(Tensor::scalar(loss), {depth},
                     [dn, g = std::move(g), mask = std::move(mask), n, mean_g, alpha,
                      loss](ad::Node& self) {
                       Tensor grad(dn->value.shape());
                       if (loss > 1e-300) {
                         const double up = self.grad[0];
                         for (std::size_t i = 0; i < grad.size(); ++i) {
                           if (!mask[i]) continue;
                           grad[i] = up * (g[i] - alpha * mean_g) / (n * loss) / dn->value[i];
                         }
                       }
                       ad::accumulate(dn, grad);
                     });
}

Var bin_ce_loss(const Var& probs, const BinTarget& target) {
  const Tensor& p = probs.value();
  if (!p.same_shape(target.onehot)) {
    throw Error(ErrorCode::kShapeMismatch, "bin_ce_loss: prediction " + shape_str(p.shape()) +
                                               " vs target " + shape_str(target.onehot.shape()));
  }
  const std::size_t nb = p.last_dim(), pixels = p.rows();
  if (target.coverage.size() != pixels) {
    throw Error(ErrorCode::kShapeMismatch, "bin_ce_loss: coverage size");
  }

  std::vector<std::size_t> idx(pixels, nb);
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (!target.coverage[i]) continue;
    for (std::size_t j = 0; j < nb; ++j) {
      if (target.onehot[i * nb + j] > 0.5) idx[i] = j;
    }
    if (idx[i] == nb) continue;
    total += -std::log(std::max(p[i * nb + idx[i]], kFloor));
    count += 1.0;
  }
  if (count == 0.0) throw Error(ErrorCode::kEmptyCoverage, "bin_ce_loss: no covered pixels");
  auto pn = probs.node();
  return ad::make_op(Tensor::scalar(total / count), {probs},
                     [pn, idx = std::move(idx), nb, count](ad::Node& self) {
                       Tensor g(pn->value.shape());
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         if (idx[i] == nb) continue;
                         const double pv = std::max(pn->value[i * nb + idx[i]], kFloor);
                         g[i * nb + idx[i]] = -self.grad[0] / (count * pv);
                       }
                       ad::accumulate(pn, g);
                     });
}

Var weighted_sum(const Var& a, const Var& b, LossWeights w) {
  if (w.first < 0 || w.second < 0) {
    throw Error(ErrorCode::kInvalidArgument, "loss weights must be non-negative");
  }
  return ad::add(ad::scale(a, w.first), ad::scale(b, w.second));
}

DepthModel::DepthModel(const DepthModelConfig& cfg) : cfg_(cfg) {
  cfg_.bins.validate();
  Rng rng(cfg.seed);
  const std::vector<std::size_t> dims = {cfg.in_channels, cfg.hidden, cfg.hidden, 1};
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    const std::string base = "depth.backbone.l" + std::to_string(l);
    weights_.push_back(params_.add(base + ".weight", "depth.backbone",
                                   rng.normal_tensor({out, in}, 1.0 / std::sqrt(double(in))), false));
    biases_.push_back(params_.add(base + ".bias", "depth.backbone",
                                  rng.normal_tensor({out}, 0.1), false));
    const std::size_t rank = std::min({cfg.lora_rank, in, out});
    if (rank < 1) throw Error(ErrorCode::kInvalidArgument, "LoRA rank must be >= 1");
    const std::string lb = "depth.lora.l" + std::to_string(l);
    LoraAdapter a;
    a.rank = rank;
    a.scale = cfg.lora_scale;
    a.down = params_.add(lb + ".down", "depth.lora",
                         rng.normal_tensor({rank, in}, 1.0 / std::sqrt(double(in))), cfg.lora_enabled);
    a.up = params_.add(lb + ".up", "depth.lora", Tensor({out, rank}), cfg.lora_enabled);
    lora_.push_back(a);
  }
  r2m_.s = params_.add("depth.r2m.s", "depth.r2m", Tensor::scalar(1.0), true);
  // Start near the middle of the bin range: outside it the bin similarities
  // do not depend on depth at all.
  const double mid = 0.5 * (cfg_.bins.lower_edge() + cfg_.bins.upper_edge());
  r2m_.t = params_.add("depth.r2m.t", "depth.r2m", Tensor::scalar(mid + std::log(-std::expm1(-mid))), true);
  r2m_.w1 = params_.add("depth.r2m.w1", "depth.r2m", rng.normal_tensor({cfg.r2m_hidden, 1}, 1.0), true);
  r2m_.b1 = params_.add("depth.r2m.b1", "depth.r2m", rng.normal_tensor({cfg.r2m_hidden}, 0.5), true);
  r2m_.w2 = params_.add("depth.r2m.w2", "depth.r2m", Tensor({1, cfg.r2m_hidden}), true);
  r2m_.b2 = params_.add("depth.r2m.b2", "depth.r2m", Tensor({1}), true);
}

Tensor DepthModel::pool_image(const Tensor& image) const {
  return ad::avg_pool(ad::constant(image), cfg_.downsample).value();
}

Var DepthModel::relative(const Tensor& pooled) const {
  if (pooled.rank() != 4 || pooled.dim(3) != cfg_.in_channels) {
    throw Error(ErrorCode::kShapeMismatch, "depth model input " + shape_str(pooled.shape()));
  }
  Var x = ad::constant(pooled);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    x = cfg_.lora_enabled ? lora_linear(x, weights_[l], biases_[l], lora_[l])
                          : ad::linear(x, weights_[l], biases_[l]);
    if (l + 1 < weights_.size()) x = ad::silu(x);
  }
  return ad::reshape(x, {pooled.dim(0), pooled.dim(1), pooled.dim(2)});
}

Var DepthModel::metric(const Tensor& pooled) const {
  return relative_to_metric(relative(pooled), r2m_);
}

BinDepthMap DepthModel::predict_bins(const Tensor& image) const {
  return {metric_to_bin(metric(pool_image(image)), cfg_.bins).value()};
}

}  // namespace ovocc::depthbin
