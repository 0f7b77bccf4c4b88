#include "ovocc/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "ovocc/error.hpp"

namespace ovocc::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) +
                                               " vs " + shape_str(b.shape()));
  }
}

template <class F, class D>
Var unary(const Var& x, F f, D df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, df](Node& self) {
    Tensor g(xn->value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * df(xn->value[i]);
    accumulate(xn, g);
  });
}

double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    accumulate(an, self.grad);
    accumulate(bn, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    accumulate(an, self.grad);
    if (bn->requires_grad) {
      Tensor g = self.grad;
      for (double& v : g.vec()) v = -v;
      accumulate(bn, g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      Tensor g(an->value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * bn->value[i];
      accumulate(an, g);
    }
    if (bn->requires_grad) {
      Tensor g(bn->value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * an->value[i];
      accumulate(bn, g);
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_bias(const Var& x, const Var& b) {
  const std::size_t c = x.value().last_dim();
  if (b.value().size() != c) {
    throw Error(ErrorCode::kShapeMismatch, "add_bias: bias " + shape_str(b.shape()) +
                                               " vs input " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const std::size_t rows = out.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] += b.value()[k];
  }
  auto xn = x.node(), bn = b.node();
  return make_op(std::move(out), {x, b}, [xn, bn, rows, c](Node& self) {
    accumulate(xn, self.grad);
    if (bn->requires_grad) {
      Tensor g(bn->value.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < c; ++k) g[k] += self.grad[r * c + k];
      }
      accumulate(bn, g);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.last_dim() != wv.dim(1)) {
    throw Error(ErrorCode::kShapeMismatch, "linear: input " + shape_str(xv.shape()) +
                                               " weight " + shape_str(wv.shape()));
  }
  const std::size_t rows = xv.rows(), in = wv.dim(1), out_dim = wv.dim(0);
  if (b.defined() && b.value().size() != out_dim) {
    throw Error(ErrorCode::kShapeMismatch, "linear: bias " + shape_str(b.shape()));
  }
  Shape oshape = xv.shape();
  if (oshape.empty()) oshape.push_back(out_dim);
  else oshape.back() = out_dim;
  Tensor out(oshape);
  MapMat y(out.ptr(), rows, out_dim);
  y.noalias() = CMapMat(xv.ptr(), rows, in) * CMapMat(wv.ptr(), out_dim, in).transpose();
  if (b.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < out_dim; ++k) out[r * out_dim + k] += b.value()[k];
  }
  auto xn = x.node(), wn = w.node();
  std::shared_ptr<Node> bn = b.defined() ? b.node() : nullptr;
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(std::move(out), inputs, [xn, wn, bn, rows, in, out_dim](Node& self) {
    CMapMat gy(self.grad.ptr(), rows, out_dim);
    if (xn->requires_grad) {
      Tensor gx(xn->value.shape());
      MapMat(gx.ptr(), rows, in).noalias() = gy * CMapMat(wn->value.ptr(), out_dim, in);
      accumulate(xn, gx);
    }
    if (wn->requires_grad) {
      Tensor gw(wn->value.shape());
      MapMat(gw.ptr(), out_dim, in).noalias() =
          gy.transpose() * CMapMat(xn->value.ptr(), rows, in);
      accumulate(wn, gw);
    }
    if (bn && bn->requires_grad) {
      Tensor gb(bn->value.shape());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < out_dim; ++k) gb[k] += self.grad[r * out_dim + k];
      accumulate(bn, gb);
    }
  });
}

Var silu(const Var& x) {
  return unary(
      x, [](double v) { return v * sigm(v); },
      [](double v) {
        const double s = sigm(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return sigm(v); },
      [](double v) {
        const double s = sigm(v);
        return s * (1.0 - s);
      });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v) { return sigm(v); });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.last_dim(), rows = xv.rows();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw Error(ErrorCode::kShapeMismatch, "layer_norm: affine size mismatch");
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.ptr() + r * c;
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += row[k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) {
      const double h = (row[k] - mu) * inv_std[r];
      xhat[r * c + k] = h;
      out[r * c + k] = gamma.value()[k] * h + beta.value()[k];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op(std::move(out), {x, gamma, beta},
                 [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                  c](Node& self) {
                   const Tensor& gy = self.grad;
                   if (gn->requires_grad || bn->requires_grad) {
                     Tensor gg(gn->value.shape()), gb(bn->value.shape());
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t k = 0; k < c; ++k) {
                         gg[k] += gy[r * c + k] * xhat[r * c + k];
                         gb[k] += gy[r * c + k];
                       }
                     accumulate(gn, gg);
                     accumulate(bn, gb);
                   }
                   if (xn->requires_grad) {
                     Tensor gx(xn->value.shape());
                     const double inv_c = 1.0 / static_cast<double>(c);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t k = 0; k < c; ++k) {
                         const double dh = gy[r * c + k] * gn->value[k];
                         m1 += dh;
                         m2 += dh * xhat[r * c + k];
                       }
                       m1 *= inv_c;
                       m2 *= inv_c;
                       for (std::size_t k = 0; k < c; ++k) {
                         const double dh = gy[r * c + k] * gn->value[k];
                         gx[r * c + k] = inv_std[r] * (dh - m1 - xhat[r * c + k] * m2);
                       }
                     }
                     accumulate(xn, gx);
                   }
                 });
}

Var concat_last(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows() || av.rank() != bv.rank()) {
    throw Error(ErrorCode::kShapeMismatch, "concat_last: " + shape_str(av.shape()) + " vs " +
                                               shape_str(bv.shape()));
  }
  for (std::size_t i = 0; i + 1 < av.rank(); ++i) {
    if (av.dim(i) != bv.dim(i)) {
      throw Error(ErrorCode::kShapeMismatch, "concat_last: leading dims differ");
    }
  }
  const std::size_t rows = av.rows(), ca = av.last_dim(), cb = bv.last_dim();
  Shape shape = av.shape();
  shape.back() = ca + cb;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.ptr() + r * ca, ca, out.ptr() + r * (ca + cb));
    std::copy_n(bv.ptr() + r * cb, cb, out.ptr() + r * (ca + cb) + ca);
  }
  auto an = a.node(), bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn, rows, ca, cb](Node& self) {
    if (an->requires_grad) {
      Tensor g(an->value.shape());
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(self.grad.ptr() + r * (ca + cb), ca, g.ptr() + r * ca);
      accumulate(an, g);
    }
    if (bn->requires_grad) {
      Tensor g(bn->value.shape());
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(self.grad.ptr() + r * (ca + cb) + ca, cb, g.ptr() + r * cb);
      accumulate(bn, g);
    }
  });
}

Var slice_last(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  const std::size_t c = av.last_dim();
  if (begin >= end || end > c) {
    throw Error(ErrorCode::kIndexOutOfRange, "slice_last: bad range");
  }
  const std::size_t rows = av.rows(), n = end - begin;
  Shape shape = av.shape();
  shape.back() = n;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.ptr() + r * c + begin, n, out.ptr() + r * n);
  auto an = a.node();
  return make_op(std::move(out), {a}, [an, rows, c, begin, n](Node& self) {
    Tensor g(an->value.shape());
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(self.grad.ptr() + r * n, n, g.ptr() + r * c + begin);
    accumulate(an, g);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  auto an = a.node();
  return make_op(std::move(out), {a}, [an](Node& self) {
    accumulate(an, self.grad.reshaped(an->value.shape()));
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(2) != xv.dim(3) || stride == 0) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d: input " + shape_str(xv.shape()) +
                                               " weight " + shape_str(wv.shape()));
  }
  const std::size_t n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), ci = xv.dim(3);
  const std::size_t kh = wv.dim(0), kw = wv.dim(1), co = wv.dim(3);
  if (h + 2 * pad < kh || wd + 2 * pad < kw) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d: kernel larger than padded input");
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t rows = n * oh * ow, kdim = kh * kw * ci;
  // im2col with zero padding.
  Tensor cols(Shape{rows, kdim});
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* dst = cols.ptr() + ((bi * oh + oy) * ow + ox) * kdim;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            double* d = dst + (ky * kw + kx) * ci;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) {
              std::fill_n(d, ci, 0.0);
            } else {
              std::copy_n(xv.ptr() + ((bi * h + iy) * wd + ix) * ci, ci, d);
            }
          }
        }
      }
  Tensor out(Shape{n, oh, ow, co});
  MapMat(out.ptr(), rows, co).noalias() = CMapMat(cols.ptr(), rows, kdim) * CMapMat(wv.ptr(), kdim, co);
  if (b.defined()) {
    if (b.value().size() != co) throw Error(ErrorCode::kShapeMismatch, "conv2d: bias size");
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < co; ++k) out[r * co + k] += b.value()[k];
  }
  auto xn = x.node(), wn = w.node();
  std::shared_ptr<Node> bn = b.defined() ? b.node() : nullptr;
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(
      std::move(out), inputs,
      [xn, wn, bn, cols = std::move(cols), n, h, wd, ci, kh, kw, co, oh, ow, stride, pad, rows,
       kdim](Node& self) {
        CMapMat gy(self.grad.ptr(), rows, co);
        if (wn->requires_grad) {
          Tensor gw(wn->value.shape());
          MapMat(gw.ptr(), kdim, co).noalias() = CMapMat(cols.ptr(), rows, kdim).transpose() * gy;
          accumulate(wn, gw);
        }
        if (bn && bn->requires_grad) {
          Tensor gb(bn->value.shape());
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < co; ++k) gb[k] += self.grad[r * co + k];
          accumulate(bn, gb);
        }
        if (xn->requires_grad) {
          Tensor gcols(Shape{rows, kdim});
          MapMat(gcols.ptr(), rows, kdim).noalias() = gy * CMapMat(wn->value.ptr(), kdim, co).transpose();
          Tensor gx(xn->value.shape());
          for (std::size_t bi = 0; bi < n; ++bi)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const double* src = gcols.ptr() + ((bi * oh + oy) * ow + ox) * kdim;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                    double* d = gx.ptr() + ((bi * h + iy) * wd + ix) * ci;
                    const double* s = src + (ky * kw + kx) * ci;
                    for (std::size_t c = 0; c < ci; ++c) d[c] += s[c];
                  }
                }
              }
          accumulate(xn, gx);
        }
      });
}

Var conv3d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 5 || wv.dim(0) != wv.dim(1) || wv.dim(1) != wv.dim(2) ||
      wv.dim(0) % 2 == 0 || wv.dim(3) != xv.dim(3)) {
    throw Error(ErrorCode::kShapeMismatch, "conv3d: input " + shape_str(xv.shape()) +
                                               " weight " + shape_str(wv.shape()));
  }
  const std::size_t h = xv.dim(0), wd = xv.dim(1), z = xv.dim(2), ci = xv.dim(3);
  const std::size_t k = wv.dim(0), co = wv.dim(4), p = k / 2;
  const std::size_t hp = h + 2 * p, wp = wd + 2 * p, zp = z + 2 * p;
  auto pidx = [wp, zp](std::size_t i, std::size_t j, std::size_t l) {
    return (i * wp + j) * zp + l;
  };
  // Zero-padded copy: a kernel offset becomes a constant shift of the flat
  // padded index, so each tap is a single GEMM over a contiguous row range.
  Tensor xpad(Shape{hp * wp * zp, ci});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wd; ++j)
      std::copy_n(xv.ptr() + (i * wd + j) * z * ci, z * ci, xpad.ptr() + pidx(i + p, j + p, p) * ci);
  const std::size_t r0 = pidx(p, p, p);
  const std::size_t nrows = pidx(h + p - 1, wd + p - 1, z + p - 1) + 1 - r0;
  std::vector<long> offsets;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t bb = 0; bb < k; ++bb)
      for (std::size_t c = 0; c < k; ++c)
        offsets.push_back((static_cast<long>(a) - static_cast<long>(p)) * static_cast<long>(wp * zp) +
                          (static_cast<long>(bb) - static_cast<long>(p)) * static_cast<long>(zp) +
                          (static_cast<long>(c) - static_cast<long>(p)));
  RowMat ypad = RowMat::Zero(nrows, co);
  for (std::size_t o = 0; o < offsets.size(); ++o) {
    const double* src = xpad.ptr() + (static_cast<long>(r0) + offsets[o]) * static_cast<long>(ci);
    ypad.noalias() += CMapMat(src, nrows, ci) * CMapMat(wv.ptr() + o * ci * co, ci, co);
  }
  Tensor out(Shape{h, wd, z, co});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wd; ++j)
      for (std::size_t l = 0; l < z; ++l) {
        const std::size_t row = pidx(i + p, j + p, l + p) - r0;
        double* dst = out.ptr() + ((i * wd + j) * z + l) * co;
        for (std::size_t c = 0; c < co; ++c) dst[c] = ypad(row, c);
        if (b.defined()) {
          for (std::size_t c = 0; c < co; ++c) dst[c] += b.value()[c];
        }
      }
  if (b.defined() && b.value().size() != co) {
    throw Error(ErrorCode::kShapeMismatch, "conv3d: bias size");
  }
  auto xn = x.node(), wn = w.node();
  std::shared_ptr<Node> bn = b.defined() ? b.node() : nullptr;
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op(
      std::move(out), inputs,
      [xn, wn, bn, xpad = std::move(xpad), offsets = std::move(offsets), h, wd, z, ci, co, p, r0,
       nrows, pidx](Node& self) {
        RowMat gpad = RowMat::Zero(nrows, co);
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < wd; ++j)
            for (std::size_t l = 0; l < z; ++l) {
              const std::size_t row = pidx(i + p, j + p, l + p) - r0;
              const double* src = self.grad.ptr() + ((i * wd + j) * z + l) * co;
              for (std::size_t c = 0; c < co; ++c) gpad(row, c) = src[c];
            }
        if (bn && bn->requires_grad) {
          Tensor gb(bn->value.shape());
          const std::size_t voxels = h * wd * z;
          for (std::size_t v = 0; v < voxels; ++v)
            for (std::size_t c = 0; c < co; ++c) gb[c] += self.grad[v * co + c];
          accumulate(bn, gb);
        }
        if (wn->requires_grad) {
          Tensor gw(wn->value.shape());
          for (std::size_t o = 0; o < offsets.size(); ++o) {
            const double* src = xpad.ptr() + (static_cast<long>(r0) + offsets[o]) * static_cast<long>(ci);
            MapMat(gw.ptr() + o * ci * co, ci, co).noalias() = CMapMat(src, nrows, ci).transpose() * gpad;
          }
          accumulate(wn, gw);
        }
        if (xn->requires_grad) {
          Tensor gxpad(Shape{xpad.dim(0), ci});
          for (std::size_t o = 0; o < offsets.size(); ++o) {
            double* dst = gxpad.ptr() + (static_cast<long>(r0) + offsets[o]) * static_cast<long>(ci);
            MapMat(dst, nrows, ci).noalias() +=
                gpad * CMapMat(wn->value.ptr() + o * ci * co, ci, co).transpose();
          }
          Tensor gx(xn->value.shape());
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < wd; ++j)
              std::copy_n(gxpad.ptr() + pidx(i + p, j + p, p) * ci, z * ci,
                          gx.ptr() + (i * wd + j) * z * ci);
          accumulate(xn, gx);
        }
      });
}

namespace {

struct Interp {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Interp> interp_axis(std::size_t in, std::size_t out) {
  std::vector<Interp> r(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    r[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return r;
}

}  // namespace

Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || out_h == 0 || out_w == 0) {
    throw Error(ErrorCode::kShapeMismatch, "resize_bilinear: input " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), c = xv.dim(3);
  auto ry = interp_axis(h, out_h);
  auto rx = interp_axis(wd, out_w);
  Tensor out(Shape{n, out_h, out_w, c});
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& a = ry[oy];
        const auto& bb = rx[ox];
        const double w00 = (1 - a.w1) * (1 - bb.w1), w01 = (1 - a.w1) * bb.w1;
        const double w10 = a.w1 * (1 - bb.w1), w11 = a.w1 * bb.w1;
        const double* p00 = xv.ptr() + ((bi * h + a.i0) * wd + bb.i0) * c;
        const double* p01 = xv.ptr() + ((bi * h + a.i0) * wd + bb.i1) * c;
        const double* p10 = xv.ptr() + ((bi * h + a.i1) * wd + bb.i0) * c;
        const double* p11 = xv.ptr() + ((bi * h + a.i1) * wd + bb.i1) * c;
        double* dst = out.ptr() + ((bi * out_h + oy) * out_w + ox) * c;
        for (std::size_t k = 0; k < c; ++k)
          dst[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
      }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, ry, rx, n, h, wd, c, out_h, out_w](Node& self) {
    Tensor g(xn->value.shape());
    for (std::size_t bi = 0; bi < n; ++bi)
      for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& a = ry[oy];
          const auto& bb = rx[ox];
          const double w00 = (1 - a.w1) * (1 - bb.w1), w01 = (1 - a.w1) * bb.w1;
          const double w10 = a.w1 * (1 - bb.w1), w11 = a.w1 * bb.w1;
          const double* src = self.grad.ptr() + ((bi * out_h + oy) * out_w + ox) * c;
          double* p00 = g.ptr() + ((bi * h + a.i0) * wd + bb.i0) * c;
          double* p01 = g.ptr() + ((bi * h + a.i0) * wd + bb.i1) * c;
          double* p10 = g.ptr() + ((bi * h + a.i1) * wd + bb.i0) * c;
          double* p11 = g.ptr() + ((bi * h + a.i1) * wd + bb.i1) * c;
          for (std::size_t k = 0; k < c; ++k) {
            p00[k] += w00 * src[k];
            p01[k] += w01 * src[k];
            p10[k] += w10 * src[k];
            p11[k] += w11 * src[k];
          }
        }
    accumulate(xn, g);
  });
}

Var avg_pool(const Var& x, std::size_t k) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || k == 0 || xv.dim(1) % k != 0 || xv.dim(2) % k != 0) {
    throw Error(ErrorCode::kShapeMismatch, "avg_pool: input " + shape_str(xv.shape()) +
                                               " not divisible by " + std::to_string(k));
  }
  const std::size_t n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), c = xv.dim(3);
  const std::size_t oh = h / k, ow = wd / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out(Shape{n, oh, ow, c});
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx) {
        const double* src = xv.ptr() + ((bi * h + y) * wd + xx) * c;
        double* dst = out.ptr() + ((bi * oh + y / k) * ow + xx / k) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += inv * src[ch];
      }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, n, h, wd, c, k, oh, ow, inv](Node& self) {
    Tensor g(xn->value.shape());
    for (std::size_t bi = 0; bi < n; ++bi)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < wd; ++xx) {
          const double* src = self.grad.ptr() + ((bi * oh + y / k) * ow + xx / k) * c;
          double* dst = g.ptr() + ((bi * h + y) * wd + xx) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = inv * src[ch];
        }
    accumulate(xn, g);
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().vec()) s += v;
  auto xn = x.node();
  return make_op(Tensor::scalar(s), {x}, [xn](Node& self) {
    accumulate(xn, Tensor(xn->value.shape(), self.grad[0]));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

}  // namespace ovocc::ad

namespace ovocc::ad {

Var scale_shift(const Var& x, const Var& s, const Var& t) {
  if (s.value().size() != 1 || t.value().size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "scale_shift expects scalar s and t");
  }
  const double sv = s.value()[0], tv = t.value()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * x.value()[i] + tv;
  auto xn = x.node(), sn = s.node(), tn = t.node();
  return make_op(std::move(out), {x, s, t}, [xn, sn, tn](Node& self) {
    const double sv = sn->value[0];
    if (xn->requires_grad) {
      Tensor g(xn->value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = sv * self.grad[i];
      accumulate(xn, g);
    }
    double gs = 0.0, gt = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gs += self.grad[i] * xn->value[i];
      gt += self.grad[i];
    }
    accumulate(sn, Tensor(sn->value.shape(), gs));
    accumulate(tn, Tensor(tn->value.shape(), gt));
  });
}

}  // namespace ovocc::ad
