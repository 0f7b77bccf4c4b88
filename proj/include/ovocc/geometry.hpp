#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "ovocc/bin_spec.hpp"

namespace ovocc::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageSize&) const = default;
};

// Pinhole camera. Extrinsics map world to camera: p_cam = R * p_world + t,
// with camera axes x right, y down, z forward. Pixel (u, v) = (column, row),
// pixel centres at half-integers.
struct Camera {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  ImageSize image_size;

  static Camera from_params(double fx, double fy, double cx, double cy, const Mat3& rotation,
                            const Vec3& translation, ImageSize size);

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }
  Vec3 center() const { return -rotation.transpose() * translation; }

  // Camera for the same view rendered at 1/factor resolution; low-res pixel
  // centres coincide with the centres of factor x factor high-res blocks.
  Camera downsampled(std::size_t factor) const;

  // Throws InvalidArgument when R is not orthonormal, focal lengths are not
  // positive, or the image is empty.
  void validate() const;
};

struct CameraRig {
  std::vector<Camera> cameras;
  std::size_t size() const { return cameras.size(); }
  void validate() const;
  CameraRig downsampled(std::size_t factor) const;
};

// Rotation for a camera looking along yaw (radians from +x towards +y),
// pitched down by `pitch` radians.
Mat3 look_rotation(double yaw, double pitch);

// `count` cameras at `center`, evenly spaced in yaw, each with the given
// horizontal field of view (radians).
CameraRig make_surround_rig(std::size_t count, const Vec3& center, ImageSize size,
                            double horizontal_fov, double pitch);

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

// nullopt signals BehindCamera (camera-frame depth <= 0).
std::optional<Projection> project_point(const Vec3& p, const Camera& cam);

// Throws NonPositiveDepth for depth <= 0.
Vec3 unproject_pixel(const Vec2& pixel, double depth, const Camera& cam);

struct VoxelIndex {
  std::size_t i = 0, j = 0, k = 0;
  bool operator==(const VoxelIndex&) const = default;
};

// Axis-aligned voxel grid with half-open voxels [lo, hi).
struct VoxelGridSpec {
  std::array<std::size_t, 3> dims{1, 1, 1};
  Vec3 range_min = Vec3::Zero();
  Vec3 range_max = Vec3::Ones();
  Vec3 voxel_size = Vec3::Ones();

  static VoxelGridSpec make(std::array<std::size_t, 3> dims, const Vec3& range_min,
                            const Vec3& range_max);
  // 200 x 200 x 16, x/y in [-40, 40], z in [-1.0, 5.4], 0.4 m voxels.
  static VoxelGridSpec occ3d();

  void validate() const;
  std::size_t count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t flat(const VoxelIndex& v) const { return (v.i * dims[1] + v.j) * dims[2] + v.k; }
  VoxelIndex unflat(std::size_t f) const;
  bool contains(const Vec3& p) const;
  // Voxel owning p, or nullopt outside [range_min, range_max).
  std::optional<VoxelIndex> locate(const Vec3& p) const;
  bool operator==(const VoxelGridSpec& o) const;
};

// Throws IndexOutOfRange when index is outside dims.
Vec3 voxel_center(const VoxelGridSpec& grid, const VoxelIndex& index);

// Lifted sample positions, indexed (camera, bin, row, col).
struct FrustumGrid {
  std::size_t cameras = 0, bins = 0, rows = 0, cols = 0;
  std::vector<Vec3> points;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return points.size(); }
  std::size_t flat(std::size_t cam, std::size_t bin, std::size_t row, std::size_t col) const {
    return ((cam * bins + bin) * rows + row) * cols + col;
  }
};

// Feature cell (r, c) maps to the centre of its pixel block; each bin
// centre depth yields one point. Points outside the half-open grid range are
// invalid. Throws InvalidArgument unless the feature size divides the image.
FrustumGrid build_frustum(const CameraRig& cams, const VoxelGridSpec& grid,
                          const depthbin::BinSpec& bins, std::size_t feat_h, std::size_t feat_w);

}  // namespace ovocc::geometry
