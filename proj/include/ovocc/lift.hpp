#pragma once

#include <cstdint>
#include <vector>

#include "ovocc/ad.hpp"
#include "ovocc/geometry.hpp"

namespace ovocc::lift {

// Valid frustum points grouped by target voxel. Within an interval the
// points are in ascending flat frustum order, which fixes the summation
// order of the pooled sums.
struct PoolIndex {
  std::size_t cameras = 0, bins = 0, rows = 0, cols = 0;
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::uint32_t> order;           // flat frustum indices
  std::vector<std::uint32_t> interval_start;  // into order
  std::vector<std::uint32_t> interval_end;    // exclusive
  std::vector<std::uint32_t> interval_voxel;  // flat voxel id

  std::size_t points() const { return cameras * bins * rows * cols; }
  std::size_t intervals() const { return interval_voxel.size(); }
  std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
};

PoolIndex precompute_pool_index(const geometry::FrustumGrid& frustum,
                                const geometry::VoxelGridSpec& grid);

struct LiftedVolume {
  Tensor values;                        // (H, W, Z, C)
  std::vector<std::uint32_t> hit_count; // per voxel
};

// Forward data kept for the backward pass.
struct LiftState {
  const PoolIndex* index = nullptr;
  Tensor f_sem;    // (camera, row, col, C)
  Tensor d_prime;  // (camera, row, col, bin)
};

// Sum pooling of f_sem(pixel) * d'(pixel, bin) into voxels. Throws ShapeMismatch.
Tensor lift_splat_forward(const Tensor& f_sem, const Tensor& d_prime, const PoolIndex& index);

// Gradients w.r.t. (f_sem, d_prime). Throws MissingForwardState when the
// state does not hold a forward pass.
std::pair<Tensor, Tensor> lift_splat_backward(const LiftState& state, const Tensor& grad_volume);

// Differentiable wrapper; `index` must outlive the graph.
ad::Var lift_splat(const ad::Var& f_sem, const ad::Var& d_prime, const PoolIndex& index);

LiftedVolume lift_volume(const Tensor& f_sem, const Tensor& d_prime, const PoolIndex& index);

// Oracle: visits every (camera, bin, row, col) in flat order, locates its
// voxel directly and scatters.
Tensor lift_splat_naive(const Tensor& f_sem, const Tensor& d_prime,
                        const geometry::FrustumGrid& frustum, const geometry::VoxelGridSpec& grid);

struct BenchResult {
  std::size_t points = 0;
  double naive_seconds = 0.0;
  double fast_seconds = 0.0;
  double index_seconds = 0.0;
  bool identical = false;
  double naive_points_per_sec() const { return points / naive_seconds; }
  double fast_points_per_sec() const { return points / fast_seconds; }
  double speedup() const { return naive_seconds / fast_seconds; }
};

// Times both paths on a benchmark-scale setup (200 x 200 x 16 grid, six
// cameras, 32 x 88 features, 16 bins, 16 channels).
BenchResult bench_pool(std::size_t repeats = 3, std::uint64_t seed = 1);

}  // namespace ovocc::lift
