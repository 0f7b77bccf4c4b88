#include "ovocc/lift.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ovocc/error.hpp"
#include "ovocc/random.hpp"

namespace ovocc::lift {

using geometry::FrustumGrid;
using geometry::VoxelGridSpec;

namespace {

void check_inputs(const Tensor& f, const Tensor& d, std::size_t cameras, std::size_t bins,
                  std::size_t rows, std::size_t cols) {
  if (f.rank() != 4 || d.rank() != 4 || f.dim(0) != cameras || f.dim(1) != rows ||
      f.dim(2) != cols || d.dim(0) != cameras || d.dim(1) != rows || d.dim(2) != cols ||
      d.dim(3) != bins) {
    throw Error(ErrorCode::kShapeMismatch,
                "lift_splat: features " + shape_str(f.shape()) + ", bins " + shape_str(d.shape()) +
                    " vs frustum (" + std::to_string(cameras) + ", " + std::to_string(bins) +
                    ", " + std::to_string(rows) + ", " + std::to_string(cols) + ")");
  }
}

// Pixel and bin of a flat frustum index (camera, bin, row, col).
inline void split(std::size_t p, std::size_t bins, std::size_t rows, std::size_t cols,
                  std::size_t& pixel, std::size_t& bin) {
  const std::size_t col = p % cols;
  std::size_t rest = p / cols;
  const std::size_t row = rest % rows;
  rest /= rows;
  bin = rest % bins;
  const std::size_t cam = rest / bins;
  pixel = (cam * rows + row) * cols + col;
}

}  // namespace

PoolIndex precompute_pool_index(const FrustumGrid& frustum, const VoxelGridSpec& grid) {
  PoolIndex idx;
  idx.cameras = frustum.cameras;
  idx.bins = frustum.bins;
  idx.rows = frustum.rows;
  idx.cols = frustum.cols;
  idx.dims = grid.dims;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> keyed;  // (voxel, flat)
  keyed.reserve(frustum.size());
  for (std::size_t p = 0; p < frustum.size(); ++p) {
    if (!frustum.valid[p]) continue;
    const auto v = grid.locate(frustum.points[p]);
    if (!v) continue;
    keyed.emplace_back(static_cast<std::uint32_t>(grid.flat(*v)), static_cast<std::uint32_t>(p));
  }
  std::sort(keyed.begin(), keyed.end());
  idx.order.reserve(keyed.size());
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    if (i == 0 || keyed[i].first != keyed[i - 1].first) {
      if (i > 0) idx.interval_end.push_back(static_cast<std::uint32_t>(i));
      idx.interval_start.push_back(static_cast<std::uint32_t>(i));
      idx.interval_voxel.push_back(keyed[i].first);
    }
    idx.order.push_back(keyed[i].second);
  }
  if (!keyed.empty()) idx.interval_end.push_back(static_cast<std::uint32_t>(keyed.size()));
  return idx;
}

Tensor lift_splat_forward(const Tensor& f, const Tensor& d, const PoolIndex& idx) {
  check_inputs(f, d, idx.cameras, idx.bins, idx.rows, idx.cols);
  const std::size_t c = f.dim(3);
  Tensor out({idx.dims[0], idx.dims[1], idx.dims[2], c});
  std::vector<double> acc(c);
  for (std::size_t iv = 0; iv < idx.intervals(); ++iv) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::uint32_t k = idx.interval_start[iv]; k < idx.interval_end[iv]; ++k) {
      std::size_t pixel, bin;
      split(idx.order[k], idx.bins, idx.rows, idx.cols, pixel, bin);
      const double w = d[pixel * idx.bins + bin];
      const double* fp = f.ptr() + pixel * c;
      for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += fp[ch] * w;
    }
    std::copy(acc.begin(), acc.end(), out.ptr() + std::size_t(idx.interval_voxel[iv]) * c);
  }
  return out;
}

std::pair<Tensor, Tensor> lift_splat_backward(const LiftState& state, const Tensor& grad) {
  if (!state.index || state.f_sem.empty() || state.d_prime.empty()) {
    throw Error(ErrorCode::kMissingForwardState, "lift_splat_backward without a forward pass");
  }
  const PoolIndex& idx = *state.index;
  const Tensor& f = state.f_sem;
  const Tensor& d = state.d_prime;
  const std::size_t c = f.dim(3);
  if (grad.size() != idx.voxels() * c) {
    throw Error(ErrorCode::kShapeMismatch, "lift_splat_backward: gradient " + shape_str(grad.shape()));
  }
  Tensor gf(f.shape()), gd(d.shape());
  for (std::size_t iv = 0; iv < idx.intervals(); ++iv) {
    const double* g = grad.ptr() + std::size_t(idx.interval_voxel[iv]) * c;
    for (std::uint32_t k = idx.interval_start[iv]; k < idx.interval_end[iv]; ++k) {
      std::size_t pixel, bin;
      split(idx.order[k], idx.bins, idx.rows, idx.cols, pixel, bin);
      const double w = d[pixel * idx.bins + bin];
      const double* fp = f.ptr() + pixel * c;
      double* gfp = gf.ptr() + pixel * c;
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        gfp[ch] += w * g[ch];
        dot += fp[ch] * g[ch];
      }
      gd[pixel * idx.bins + bin] += dot;
    }
  }
  return {std::move(gf), std::move(gd)};
}

ad::Var lift_splat(const ad::Var& f_sem, const ad::Var& d_prime, const PoolIndex& index) {
  Tensor out = lift_splat_forward(f_sem.value(), d_prime.value(), index);
  auto fn = f_sem.node(), dn = d_prime.node();
  const PoolIndex* ip = &index;
  return ad::make_op(std::move(out), {f_sem, d_prime}, [fn, dn, ip](ad::Node& self) {
    auto [gf, gd] = lift_splat_backward(LiftState{ip, fn->value, dn->value}, self.grad);
    ad::accumulate(fn, gf);
    ad::accumulate(dn, gd);
  });
}

LiftedVolume lift_volume(const Tensor& f_sem, const Tensor& d_prime, const PoolIndex& index) {
  LiftedVolume v{lift_splat_forward(f_sem, d_prime, index),
                 std::vector<std::uint32_t>(index.voxels(), 0)};
  for (std::size_t iv = 0; iv < index.intervals(); ++iv) {
    v.hit_count[index.interval_voxel[iv]] = index.interval_end[iv] - index.interval_start[iv];
  }
  return v;
}

Tensor lift_splat_naive(const Tensor& f, const Tensor& d, const FrustumGrid& frustum,
                        const VoxelGridSpec& grid) {
  check_inputs(f, d, frustum.cameras, frustum.bins, frustum.rows, frustum.cols);
  const std::size_t c = f.dim(3);
  Tensor out({grid.dims[0], grid.dims[1], grid.dims[2], c});
  for (std::size_t cam = 0; cam < frustum.cameras; ++cam)
    for (std::size_t b = 0; b < frustum.bins; ++b)
      for (std::size_t r = 0; r < frustum.rows; ++r)
        for (std::size_t col = 0; col < frustum.cols; ++col) {
          const auto v = grid.locate(frustum.points[frustum.flat(cam, b, r, col)]);
          if (!v) continue;
          const std::size_t pixel = (cam * frustum.rows + r) * frustum.cols + col;
          const double w = d[pixel * frustum.bins + b];
          double* o = out.ptr() + grid.flat(*v) * c;
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += f[pixel * c + ch] * w;
        }
  return out;
}

BenchResult bench_pool(std::size_t repeats, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  const VoxelGridSpec grid = VoxelGridSpec::occ3d();
  const geometry::CameraRig rig =
      geometry::make_surround_rig(6, geometry::Vec3(0.0, 0.0, 1.5), {256, 704}, 70.0 * M_PI / 180.0, 0.0);
  const depthbin::BinSpec bins{16, 2.0, 2.5, 10.0};
  const FrustumGrid frustum = geometry::build_frustum(rig, grid, bins, 32, 88);
  Rng rng(seed);
  const Tensor f = rng.normal_tensor({6, 32, 88, 16}, 1.0);
  const Tensor d = rng.uniform_tensor({6, 32, 88, 16}, 0.0, 1.0);

  BenchResult r;
  r.points = frustum.size();
  auto t0 = clock::now();
  const PoolIndex idx = precompute_pool_index(frustum, grid);
  r.index_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  Tensor fast, naive;
  t0 = clock::now();
  for (std::size_t i = 0; i < repeats; ++i) naive = lift_splat_naive(f, d, frustum, grid);
  r.naive_seconds = std::chrono::duration<double>(clock::now() - t0).count() / double(repeats);
  t0 = clock::now();
  for (std::size_t i = 0; i < repeats; ++i) fast = lift_splat_forward(f, d, idx);
  r.fast_seconds = std::chrono::duration<double>(clock::now() - t0).count() / double(repeats);
  r.identical = fast == naive;
  return r;
}

}  // namespace ovocc::lift
