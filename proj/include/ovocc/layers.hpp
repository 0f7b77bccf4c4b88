#pragma once

#include <string>

#include "ovocc/ops.hpp"
#include "ovocc/params.hpp"
#include "ovocc/random.hpp"

namespace ovocc {

// Fully connected layer over the last axis.
struct Dense {
  ad::Var w;  // (out, in)
  ad::Var b;  // (out)
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, w, b); }
  std::size_t in() const { return w.shape()[1]; }
  std::size_t out() const { return w.shape()[0]; }
};

// Weights ~ N(0, gain^2 / in); biases zero. gain = 0 gives an all-zero layer.
inline Dense make_dense(ParamSet& ps, const std::string& name, const std::string& component,
                        std::size_t in, std::size_t out, Rng& rng, bool trainable,
                        double gain = 1.0) {
  Tensor w = rng.normal_tensor({out, in}, gain / std::sqrt(static_cast<double>(in)));
  return {ps.add(name + ".weight", component, std::move(w), trainable),
          ps.add(name + ".bias", component, Tensor({out}), trainable)};
}

// Two dense layers with a GELU between them.
struct Mlp {
  Dense fc1, fc2;
  ad::Var operator()(const ad::Var& x) const { return fc2(ad::gelu(fc1(x))); }
};

inline Mlp make_mlp(ParamSet& ps, const std::string& name, const std::string& component,
                    std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
                    bool trainable, double out_gain = 1.0) {
  Dense a = make_dense(ps, name + ".fc1", component, in, hidden, rng, trainable);
  Dense b = make_dense(ps, name + ".fc2", component, hidden, out, rng, trainable, out_gain);
  return {a, b};
}

}  // namespace ovocc
