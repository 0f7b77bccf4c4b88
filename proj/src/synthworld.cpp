#include "ovocc/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ovocc/error.hpp"
#include "ovocc/random.hpp"

namespace ovocc::synthworld {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_class(ClassId id, const vocab::ClassEmbeddingTable& table, const char* what) {
  if (id == vocab::kFree || id > table.size()) {
    throw Error(ErrorCode::kUnknownClass, std::string(what) + " class id " + std::to_string(id));
  }
}

// Slab test against [lo, hi]; t0 is clamped to 0. entry_axis is the axis of
// the face crossed at t0 (-1 when the origin is inside).
bool slab(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d, double& t0, double& t1,
          int& entry_axis) {
  t0 = 0.0;
  t1 = kInf;
  entry_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] >= hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      entry_axis = a;
    }
    t1 = std::min(t1, tb);
  }
  return t0 < t1;
}

// Visits voxels along the ray in order; visit(flat, t_entry, axis) returns
// true to stop.
template <class Visit>
void traverse(const geometry::VoxelGridSpec& g, const Vec3& o, const Vec3& d, Visit&& visit) {
  double t0, t1;
  int axis;
  if (!slab(g.range_min, g.range_max, o, d, t0, t1, axis)) return;
  std::array<long, 3> idx{}, step{};
  std::array<double, 3> t_next{};
  const Vec3 p = o + d * t0;
  for (int a = 0; a < 3; ++a) {
    const long n = static_cast<long>(g.dims[a]);
    if (a == axis) {
      idx[a] = d[a] > 0 ? 0 : n - 1;
    } else {
      idx[a] = std::clamp(static_cast<long>(std::floor((p[a] - g.range_min[a]) / g.voxel_size[a])), 0L, n - 1);
    }
    step[a] = d[a] > 0 ? 1 : -1;
  }
  auto boundary = [&](int a) {
    if (d[a] == 0.0) return kInf;
    const double edge = g.range_min[a] + static_cast<double>(idx[a] + (step[a] > 0 ? 1 : 0)) * g.voxel_size[a];
    return (edge - o[a]) / d[a];
  };
  for (int a = 0; a < 3; ++a) t_next[a] = boundary(a);
  if (axis < 0) axis = 2;
  double t = t0;
  for (;;) {
    const std::size_t flat = (static_cast<std::size_t>(idx[0]) * g.dims[1] + static_cast<std::size_t>(idx[1])) *
                                 g.dims[2] + static_cast<std::size_t>(idx[2]);
    if (visit(flat, t, axis)) return;
    int a = 0;
    if (t_next[1] < t_next[a]) a = 1;
    if (t_next[2] < t_next[a]) a = 2;
    t = t_next[a];
    if (t >= t1) return;
    idx[a] += step[a];
    if (idx[a] < 0 || idx[a] >= static_cast<long>(g.dims[a])) return;
    t_next[a] = boundary(a);
    axis = a;
  }
}

const std::map<std::string, std::array<std::uint8_t, 3>>& palette() {
  static const std::map<std::string, std::array<std::uint8_t, 3>> p = {
      {"others", {0, 0, 0}},           {"barrier", {255, 120, 50}},   {"bicycle", {255, 192, 203}},
      {"bus", {255, 255, 0}},          {"car", {0, 150, 245}},        {"const. veh.", {0, 255, 255}},
      {"motorcycle", {200, 180, 0}},   {"pedestrian", {255, 0, 0}},   {"traffic cone", {255, 240, 150}},
      {"trailer", {135, 60, 0}},       {"truck", {160, 32, 240}},     {"driv. surf.", {255, 0, 255}},
      {"other flat", {139, 137, 137}}, {"sidewalk", {75, 0, 75}},     {"terrain", {150, 240, 80}},
      {"manmade", {230, 230, 250}},    {"vegetation", {0, 175, 0}}};
  return p;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  return out;
}

}  // namespace

World generate_scene(const SceneSpec& spec, const geometry::VoxelGridSpec& grid,
                     const vocab::ClassEmbeddingTable& table) {
  grid.validate();
  if (spec.ground_class != vocab::kFree) check_class(spec.ground_class, table, "ground");
  for (const RosterEntry& r : spec.roster) {
    check_class(r.class_id, table, "roster");
    if (!(r.share >= 0.0 && r.share <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "roster share " + std::to_string(r.share));
    }
    for (int a = 0; a < 3; ++a) {
      if (r.size_min[a] == 0 || r.size_min[a] > r.size_max[a] || r.size_max[a] > grid.dims[a]) {
        throw Error(ErrorCode::kInvalidArgument, "roster box size range");
      }
    }
  }
  for (const Box& b : spec.boxes) {
    check_class(b.class_id, table, "box");
    for (int a = 0; a < 3; ++a) {
      if (!(b.min[a] < b.max[a])) throw Error(ErrorCode::kInvalidArgument, "empty box");
      if (b.min[a] < grid.range_min[a] - 1e-9 || b.max[a] > grid.range_max[a] + 1e-9) {
        throw Error(ErrorCode::kBoxOutOfRange, "box outside grid range on axis " + std::to_string(a));
      }
    }
  }

  World w;
  w.grid = grid;
  w.classes.assign(grid.count(), vocab::kFree);
  const auto [nx, ny, nz] = grid.dims;
  auto at = [&](std::size_t i, std::size_t j, std::size_t k) -> ClassId& {
    return w.classes[(i * ny + j) * nz + k];
  };

  std::size_t base = 0;  // first layer above the ground
  if (spec.ground_class != vocab::kFree) {
    for (std::size_t k = 0; k < nz; ++k) {
      const double zc = grid.range_min.z() + (static_cast<double>(k) + 0.5) * grid.voxel_size.z();
      if (!(zc < spec.ground_height)) break;
      base = k + 1;
      for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) at(i, j, k) = spec.ground_class;
    }
  }

  Rng rng(spec.seed);
  std::vector<std::uint8_t> taken(nx * ny, 0);  // columns holding a roster box
  for (const RosterEntry& r : spec.roster) {
    const double target = r.share * static_cast<double>(grid.count());
    std::size_t placed = 0;
    for (std::size_t attempt = 0; attempt < spec.max_attempts && static_cast<double>(placed) < target;
         ++attempt) {
      std::array<std::size_t, 3> size{};
      for (int a = 0; a < 3; ++a) size[a] = r.size_min[a] + rng.below(r.size_max[a] - r.size_min[a] + 1);
      if (rng.below(2) == 1) std::swap(size[0], size[1]);
      if (size[0] > nx || size[1] > ny) continue;
      const std::size_t i0 = rng.below(nx - size[0] + 1), j0 = rng.below(ny - size[1] + 1);
      const std::size_t k1 = std::min(nz, base + size[2]);
      if (k1 <= base) continue;
      // Nearest xy point of the footprint to the origin.
      const double x0 = grid.range_min.x() + static_cast<double>(i0) * grid.voxel_size.x();
      const double x1 = x0 + static_cast<double>(size[0]) * grid.voxel_size.x();
      const double y0 = grid.range_min.y() + static_cast<double>(j0) * grid.voxel_size.y();
      const double y1 = y0 + static_cast<double>(size[1]) * grid.voxel_size.y();
      const double cx = std::clamp(0.0, x0, x1), cy = std::clamp(0.0, y0, y1);
      if (std::hypot(cx, cy) < spec.clear_radius) continue;
      // Keep a one-voxel gap to earlier boxes.
      bool clash = false;
      for (std::size_t i = (i0 == 0 ? 0 : i0 - 1); i < std::min(nx, i0 + size[0] + 1) && !clash; ++i)
        for (std::size_t j = (j0 == 0 ? 0 : j0 - 1); j < std::min(ny, j0 + size[1] + 1); ++j)
          if (taken[i * ny + j]) {
            clash = true;
            break;
          }
      if (clash) continue;
      for (std::size_t i = i0; i < i0 + size[0]; ++i)
        for (std::size_t j = j0; j < j0 + size[1]; ++j) {
          taken[i * ny + j] = 1;
          for (std::size_t k = base; k < k1; ++k) at(i, j, k) = r.class_id;
        }
      placed += size[0] * size[1] * (k1 - base);
    }
  }

  for (const Box& b : spec.boxes) {
    std::array<std::size_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      auto first_centre_at_or_above = [&](double v) {
        const double f = std::ceil((v - grid.range_min[a]) / grid.voxel_size[a] - 0.5);
        return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(grid.dims[a])));
      };
      lo[a] = first_centre_at_or_above(b.min[a]);
      hi[a] = first_centre_at_or_above(b.max[a]);
    }
    for (std::size_t i = lo[0]; i < hi[0]; ++i)
      for (std::size_t j = lo[1]; j < hi[1]; ++j)
        for (std::size_t k = lo[2]; k < hi[2]; ++k) at(i, j, k) = b.class_id;
  }

  w.occupied.resize(grid.count());
  for (std::size_t f = 0; f < grid.count(); ++f) w.occupied[f] = w.classes[f] != vocab::kFree;
  return w;
}

RayHit cast_exact(const World& world, const Vec3& origin, const Vec3& dir) {
  RayHit h;
  traverse(world.grid, origin, dir, [&](std::size_t flat, double t, int axis) {
    if (!world.is_occupied(flat)) return false;
    h = RayHit{true, t, flat, axis};
    return true;
  });
  return h;
}

RayHit cast_march(const World& world, const Vec3& origin, const Vec3& dir, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "march step must be positive");
  const auto& g = world.grid;
  double t0, t1;
  int axis;
  if (!slab(g.range_min, g.range_max, origin, dir, t0, t1, axis)) return {};
  const double dt = step / dir.norm();
  for (double t = t0 + 1e-9; t < t1; t += dt) {
    const auto v = g.locate(origin + dir * t);
    if (!v) continue;
    const std::size_t flat = g.flat(*v);
    if (!world.is_occupied(flat)) continue;
    // Face axis from the voxel's own slab entry.
    const Vec3 lo = geometry::voxel_center(g, *v) - 0.5 * g.voxel_size;
    double a0, a1;
    int face;
    slab(lo, lo + g.voxel_size, origin, dir, a0, a1, face);
    return RayHit{true, t, flat, face < 0 ? 2 : face};
  }
  return {};
}

Vec3 pixel_ray(const geometry::Camera& cam, std::size_t row, std::size_t col) {
  const Vec3 pc((static_cast<double>(col) + 0.5 - cam.cx()) / cam.fx(),
                (static_cast<double>(row) + 0.5 - cam.cy()) / cam.fy(), 1.0);
  return cam.rotation.transpose() * pc;
}

std::vector<View> render_views(const World& world, const geometry::CameraRig& cams,
                               const RenderOptions& opts) {
  cams.validate();
  if (opts.label_noise < 0.0 || opts.label_noise > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "label noise must lie in [0, 1]");
  }
  if (opts.label_noise > 0.0 && opts.noise_classes.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "label noise needs replacement classes");
  }
  const double step = opts.step_fraction * world.grid.voxel_size.minCoeff();
  Rng rng(opts.noise_seed);
  std::vector<View> views;
  for (const auto& cam : cams.cameras) {
    View v;
    v.size = cam.image_size;
    const std::size_t n = v.size.height * v.size.width;
    v.depth.assign(n, 0.0);
    v.truth.assign(n, vocab::kFree);
    v.hit.assign(n, 0);
    v.face.assign(n, 0);
    const Vec3 origin = cam.center();
    for (std::size_t r = 0; r < v.size.height; ++r) {
      for (std::size_t c = 0; c < v.size.width; ++c) {
        const Vec3 dir = pixel_ray(cam, r, c);
        const RayHit h = opts.exact ? cast_exact(world, origin, dir) : cast_march(world, origin, dir, step);
        if (!h.hit) continue;
        const std::size_t p = r * v.size.width + c;
        v.depth[p] = h.t;
        v.truth[p] = world.classes[h.voxel];
        v.hit[p] = 1;
        v.face[p] = static_cast<std::uint8_t>(h.axis);
      }
    }
    v.seg = v.truth;
    if (opts.label_noise > 0.0) {
      for (std::size_t p = 0; p < n; ++p) {
        if (!v.hit[p]) continue;
        const double u = rng.uniform();
        const auto pick = rng.below(opts.noise_classes.size());
        if (u < opts.label_noise) v.seg[p] = opts.noise_classes[pick];
      }
    }
    views.push_back(std::move(v));
  }
  return views;
}

Mask visibility_mask(const World& world, const geometry::CameraRig& cams) {
  cams.validate();
  Mask vis(world.grid.count(), 0);
  for (const auto& cam : cams.cameras) {
    const Vec3 origin = cam.center();
    for (std::size_t r = 0; r < cam.image_size.height; ++r) {
      for (std::size_t c = 0; c < cam.image_size.width; ++c) {
        traverse(world.grid, origin, pixel_ray(cam, r, c), [&](std::size_t flat, double, int) {
          vis[flat] = 1;
          return world.is_occupied(flat);
        });
      }
    }
  }
  return vis;
}

std::array<std::uint8_t, 3> class_color(ClassId class_id, const vocab::ClassEmbeddingTable& table) {
  if (class_id == vocab::kFree) return {0, 0, 0};
  const auto& name = table.superclass_name(table.entry(class_id).superclass_id);
  const auto it = palette().find(name);
  return it == palette().end() ? std::array<std::uint8_t, 3>{128, 128, 128} : it->second;
}

Tensor synthesize_images(const std::vector<View>& views, const vocab::ClassEmbeddingTable& table) {
  if (views.empty()) throw Error(ErrorCode::kInvalidArgument, "no views");
  const auto size = views.front().size;
  Tensor img({views.size(), size.height, size.width, 4});
  static constexpr double kShade[3] = {0.85, 0.7, 1.0};
  static constexpr double kSky[3] = {0.55, 0.7, 0.9};
  for (std::size_t n = 0; n < views.size(); ++n) {
    const View& v = views[n];
    if (!(v.size == size)) throw Error(ErrorCode::kShapeMismatch, "views differ in size");
    for (std::size_t p = 0; p < size.height * size.width; ++p) {
      double* px = img.data().data() + (n * size.height * size.width + p) * 4;
      if (!v.hit[p]) {
        for (int ch = 0; ch < 3; ++ch) px[ch] = kSky[ch];
        px[3] = 0.0;
        continue;
      }
      const auto rgb = class_color(v.truth[p], table);
      for (int ch = 0; ch < 3; ++ch) px[ch] = kShade[v.face[p]] * rgb[ch] / 255.0;
      px[3] = std::exp(-v.depth[p] / 4.0);
    }
  }
  return img;
}

depthbin::DepthMap depth_targets(const std::vector<View>& views) {
  if (views.empty()) throw Error(ErrorCode::kInvalidArgument, "no views");
  const auto size = views.front().size;
  depthbin::DepthMap d;
  d.values = Tensor({views.size(), size.height, size.width});
  d.mask.assign(d.values.size(), 0);
  for (std::size_t n = 0; n < views.size(); ++n) {
    if (!(views[n].size == size)) throw Error(ErrorCode::kShapeMismatch, "views differ in size");
    for (std::size_t p = 0; p < size.height * size.width; ++p) {
      const std::size_t f = n * size.height * size.width + p;
      d.values[f] = views[n].depth[p];
      d.mask[f] = views[n].hit[p];
    }
  }
  return d;
}

void write_depth_pgm(const std::string& path, const View& view) {
  std::ofstream out = open_out(path);
  out << "P5\n" << view.size.width << ' ' << view.size.height << "\n65535\n";
  for (double d : view.depth) {
    const auto mm = static_cast<std::uint16_t>(std::clamp(std::lround(d * 1000.0), 0L, 65535L));
    out.put(static_cast<char>(mm >> 8));
    out.put(static_cast<char>(mm & 0xff));
  }
}

void write_seg_ppm(const std::string& path, const View& view, const vocab::ClassEmbeddingTable& table) {
  std::ofstream out = open_out(path);
  out << "P6\n" << view.size.width << ' ' << view.size.height << "\n255\n";
  for (ClassId c : view.seg) {
    const auto rgb = class_color(c, table);
    out.write(reinterpret_cast<const char*>(rgb.data()), 3);
  }
}

geometry::VoxelGridSpec toy_grid() {
  return geometry::VoxelGridSpec::make({50, 50, 8}, Vec3(-5.0, -5.0, 0.0), Vec3(5.0, 5.0, 1.6));
}

geometry::CameraRig toy_rig() {
  return geometry::make_surround_rig(4, Vec3(0.0, 0.0, 1.0), {64, 176}, M_PI / 2.0, 12.0 * M_PI / 180.0);
}

SceneSpec toy_scene(const vocab::ClassEmbeddingTable& table, std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.ground_height = 0.2;
  s.ground_class = table.id_of("road");
  s.clear_radius = 1.2;
  s.roster = {
      {table.id_of("building"), 0.08, {5, 5, 5}, {9, 9, 7}},
      {table.id_of("car"), 0.05, {5, 3, 3}, {7, 3, 3}},
      {table.id_of("tree"), 0.03, {2, 2, 5}, {2, 2, 7}},
      {table.id_of("bicycle"), 0.0025, {2, 1, 2}, {3, 1, 2}},
  };
  return s;
}

}  // namespace ovocc::synthworld
