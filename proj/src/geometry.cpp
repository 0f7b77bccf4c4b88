#include "ovocc/geometry.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "ovocc/error.hpp"

namespace ovocc {

void depthbin::BinSpec::validate() const {
  if (n_bins < 2) throw Error(ErrorCode::kInvalidArgument, "BinSpec needs at least 2 bins");
  if (!(width > 0)) throw Error(ErrorCode::kInvalidArgument, "BinSpec width must be > 0");
  if (!(beta > 0)) throw Error(ErrorCode::kInvalidArgument, "BinSpec beta must be > 0");
}

namespace geometry {

Camera Camera::from_params(double fx, double fy, double cx, double cy, const Mat3& rotation,
                           const Vec3& translation, ImageSize size) {
  Camera c;
  c.intrinsics << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  c.rotation = rotation;
  c.translation = translation;
  c.image_size = size;
  return c;
}

Camera Camera::downsampled(std::size_t factor) const {
  if (factor == 0 || image_size.height % factor || image_size.width % factor) {
    throw Error(ErrorCode::kInvalidArgument,
                "downsample factor " + std::to_string(factor) + " does not divide image size");
  }
  const double f = static_cast<double>(factor);
  Camera c = *this;
  c.intrinsics(0, 0) /= f;
  c.intrinsics(1, 1) /= f;
  c.intrinsics(0, 2) /= f;
  c.intrinsics(1, 2) /= f;
  c.image_size = {image_size.height / factor, image_size.width / factor};
  return c;
}

void Camera::validate() const {
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-9)) {
    throw Error(ErrorCode::kInvalidArgument, "camera rotation is not orthonormal");
  }
  if (!(fx() > 0) || !(fy() > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "camera focal lengths must be positive");
  }
  if (image_size.height == 0 || image_size.width == 0) {
    throw Error(ErrorCode::kInvalidArgument, "camera image size must be positive");
  }
}

void CameraRig::validate() const {
  if (cameras.empty()) throw Error(ErrorCode::kInvalidArgument, "camera rig is empty");
  for (const auto& c : cameras) c.validate();
}

CameraRig CameraRig::downsampled(std::size_t factor) const {
  CameraRig r;
  for (const auto& c : cameras) r.cameras.push_back(c.downsampled(factor));
  return r;
}

Mat3 look_rotation(double yaw, double pitch) {
  const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
                     -std::sin(pitch));
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return r;
}

CameraRig make_surround_rig(std::size_t count, const Vec3& center, ImageSize size,
                            double horizontal_fov, double pitch) {
  CameraRig rig;
  const double fx = 0.5 * static_cast<double>(size.width) / std::tan(0.5 * horizontal_fov);
  for (std::size_t c = 0; c < count; ++c) {
    const double yaw = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(count);
    const Mat3 r = look_rotation(yaw, pitch);
    rig.cameras.push_back(Camera::from_params(fx, fx, 0.5 * static_cast<double>(size.width),
                                              0.5 * static_cast<double>(size.height), r,
                                              -r * center, size));
  }
  return rig;
}

std::optional<Projection> project_point(const Vec3& p, const Camera& cam) {
  const Vec3 pc = cam.rotation * p + cam.translation;
  if (!(pc.z() > 0)) return std::nullopt;
  const Vec3 uvw = cam.intrinsics * pc;
  return Projection{Vec2(uvw.x() / uvw.z(), uvw.y() / uvw.z()), pc.z()};
}

Vec3 unproject_pixel(const Vec2& pixel, double depth, const Camera& cam) {
  if (!(depth > 0)) {
    throw Error(ErrorCode::kNonPositiveDepth, "depth " + std::to_string(depth));
  }
  const Vec3 pc((pixel.x() - cam.cx()) / cam.fx() * depth,
                (pixel.y() - cam.cy()) / cam.fy() * depth, depth);
  return cam.rotation.transpose() * (pc - cam.translation);
}

VoxelGridSpec VoxelGridSpec::make(std::array<std::size_t, 3> dims, const Vec3& range_min,
                                  const Vec3& range_max) {
  VoxelGridSpec g;
  g.dims = dims;
  g.range_min = range_min;
  g.range_max = range_max;
  for (int a = 0; a < 3; ++a) {
    g.voxel_size[a] = (range_max[a] - range_min[a]) / static_cast<double>(dims[a]);
  }
  g.validate();
  return g;
}

VoxelGridSpec VoxelGridSpec::occ3d() {
  return make({200, 200, 16}, Vec3(-40, -40, -1.0), Vec3(40, 40, 5.4));
}

void VoxelGridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw Error(ErrorCode::kInvalidArgument, "grid dims must be >= 1");
    if (!(voxel_size[a] > 0)) throw Error(ErrorCode::kInvalidArgument, "voxel size must be > 0");
    const double extent = range_max[a] - range_min[a];
    if (std::abs(static_cast<double>(dims[a]) * voxel_size[a] - extent) > 1e-9) {
      throw Error(ErrorCode::kInvalidArgument, "dims * voxel_size != range extent");
    }
  }
}

VoxelIndex VoxelGridSpec::unflat(std::size_t f) const {
  VoxelIndex v;
  v.k = f % dims[2];
  f /= dims[2];
  v.j = f % dims[1];
  v.i = f / dims[1];
  return v;
}

bool VoxelGridSpec::contains(const Vec3& p) const {
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] >= range_min[a] && p[a] < range_max[a])) return false;
  }
  return true;
}

std::optional<VoxelIndex> VoxelGridSpec::locate(const Vec3& p) const {
  if (!contains(p)) return std::nullopt;
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - range_min[a]) / voxel_size[a]);
    idx[a] = std::min(static_cast<std::size_t>(std::max(f, 0.0)), dims[a] - 1);
  }
  return VoxelIndex{idx[0], idx[1], idx[2]};
}

bool VoxelGridSpec::operator==(const VoxelGridSpec& o) const {
  return dims == o.dims && range_min == o.range_min && range_max == o.range_max;
}

Vec3 voxel_center(const VoxelGridSpec& grid, const VoxelIndex& index) {
  const std::array<std::size_t, 3> idx{index.i, index.j, index.k};
  Vec3 c;
  for (int a = 0; a < 3; ++a) {
    if (idx[a] >= grid.dims[a]) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "voxel index " + std::to_string(idx[a]) + " on axis " + std::to_string(a));
    }
    c[a] = grid.range_min[a] + (static_cast<double>(idx[a]) + 0.5) * grid.voxel_size[a];
  }
  return c;
}

FrustumGrid build_frustum(const CameraRig& cams, const VoxelGridSpec& grid,
                          const depthbin::BinSpec& bins, std::size_t feat_h, std::size_t feat_w) {
  FrustumGrid f;
  f.cameras = cams.size();
  f.bins = bins.n_bins;
  f.rows = feat_h;
  f.cols = feat_w;
  f.points.resize(f.cameras * f.bins * feat_h * feat_w);
  f.valid.resize(f.points.size(), 0);
  for (std::size_t c = 0; c < f.cameras; ++c) {
    const Camera& cam = cams.cameras[c];
    if (feat_h == 0 || feat_w == 0 || cam.image_size.height % feat_h ||
        cam.image_size.width % feat_w) {
      throw Error(ErrorCode::kInvalidArgument, "feature size must divide image size");
    }
    const double bh = static_cast<double>(cam.image_size.height / feat_h);
    const double bw = static_cast<double>(cam.image_size.width / feat_w);
    for (std::size_t b = 0; b < f.bins; ++b) {
      const double depth = bins.center(b);
      for (std::size_t r = 0; r < feat_h; ++r) {
        for (std::size_t col = 0; col < feat_w; ++col) {
          const Vec2 px((static_cast<double>(col) + 0.5) * bw, (static_cast<double>(r) + 0.5) * bh);
          const std::size_t idx = f.flat(c, b, r, col);
          f.points[idx] = unproject_pixel(px, depth, cam);
          f.valid[idx] = grid.contains(f.points[idx]) ? 1 : 0;
        }
      }
    }
  }
  return f;
}

}  // namespace geometry
}  // namespace ovocc
