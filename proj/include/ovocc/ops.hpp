#pragma once

#include <cstddef>

#include "ovocc/ad.hpp"

namespace ovocc::ad {

Var constant(Tensor value);

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

// b has one entry per element of the trailing axis of x.
Var add_bias(const Var& x, const Var& b);

// y = x W^T + b over the trailing axis; W is (out, in), b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var silu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var concat_last(const Var& a, const Var& b);
Var slice_last(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);

// x: (N, H, W, Ci); w: (kh, kw, Ci, Co); b: (Co) or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad);

// x: (H, W, Z, Ci); w: (k, k, k, Ci, Co) with odd k; zero "same" padding.
Var conv3d(const Var& x, const Var& w, const Var& b);

// Half-pixel bilinear resize of (N, H, W, C) to (N, out_h, out_w, C).
Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);

// Non-overlapping k x k average pooling of (N, H, W, C).
Var avg_pool(const Var& x, std::size_t k);

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace ovocc::ad

namespace ovocc::ad {

// y = s * x + t with scalar Vars s and t.
Var scale_shift(const Var& x, const Var& s, const Var& t);

}  // namespace ovocc::ad
