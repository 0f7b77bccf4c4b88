#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ovocc/depthbin.hpp"
#include "ovocc/geometry.hpp"
#include "ovocc/vocab.hpp"

namespace ovocc::synthworld {

using geometry::Vec3;
using vocab::ClassId;
using Mask = std::vector<std::uint8_t>;

// Voxels whose centre lies in [min, max) take class_id.
struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  ClassId class_id = vocab::kFree;
};

// Randomly placed boxes of one class, added until the class covers `share`
// of all grid voxels (or placement attempts run out). Sizes are in voxels.
struct RosterEntry {
  ClassId class_id = vocab::kFree;
  double share = 0.0;
  std::array<std::size_t, 3> size_min{1, 1, 1};
  std::array<std::size_t, 3> size_max{1, 1, 1};
};

struct SceneSpec {
  std::uint64_t seed = 0;
  // Voxels with centre below this height are ground (skipped when the
  // ground class is free).
  double ground_height = 0.0;
  ClassId ground_class = vocab::kFree;
  std::vector<RosterEntry> roster;
  std::vector<Box> boxes;  // placed after the roster, overwriting
  double clear_radius = 0.0;  // no roster box within this xy distance of the origin
  std::size_t max_attempts = 4000;
};

struct World {
  geometry::VoxelGridSpec grid;
  std::vector<ClassId> classes;  // gt class grid, 0 = free
  Mask occupied;                 // gt binary grid

  bool is_occupied(std::size_t flat) const { return occupied[flat] != 0; }
};

// Throws BoxOutOfRange for boxes outside the grid range, UnknownClass for
// ids outside the table and InvalidArgument for empty boxes or bad shares.
World generate_scene(const SceneSpec& spec, const geometry::VoxelGridSpec& grid,
                     const vocab::ClassEmbeddingTable& table);

struct RayHit {
  bool hit = false;
  double t = 0.0;  // ray parameter at the entry into the hit voxel
  std::size_t voxel = 0;
  int axis = 2;    // axis of the entered face
};

// Exact voxel traversal of origin + t * dir for t >= 0.
RayHit cast_exact(const World& world, const Vec3& origin, const Vec3& dir);
// Fixed-step sampling; t of the first sample inside an occupied voxel.
RayHit cast_march(const World& world, const Vec3& origin, const Vec3& dir, double step);

// Ray through the pixel centre (col + 0.5, row + 0.5), scaled so that the
// ray parameter equals camera-frame depth.
Vec3 pixel_ray(const geometry::Camera& cam, std::size_t row, std::size_t col);

struct View {
  geometry::ImageSize size;
  std::vector<double> depth;         // camera-frame depth, 0 on miss
  std::vector<ClassId> truth;        // class of the first hit, 0 on miss
  std::vector<ClassId> seg;          // segmentation labels (truth plus optional noise)
  Mask hit;
  std::vector<std::uint8_t> face;    // entered face axis of the hit
};

struct RenderOptions {
  bool exact = true;          // false: fixed-step marching only
  double step_fraction = 0.25;  // march step as a fraction of the smallest voxel side
  double label_noise = 0.0;   // probability a hit pixel gets a random label
  std::uint64_t noise_seed = 0;
  std::vector<ClassId> noise_classes;  // replacement labels
};

std::vector<View> render_views(const World& world, const geometry::CameraRig& cams,
                               const RenderOptions& opts = {});

// Voxels first hit by some pixel ray, plus free voxels crossed before any hit.
Mask visibility_mask(const World& world, const geometry::CameraRig& cams);

// Per-class fixed colour, keyed by the superclass order of the benchmark
// legend; free is black.
std::array<std::uint8_t, 3> class_color(ClassId class_id, const vocab::ClassEmbeddingTable& table);

// (N, H, W, 4): shaded class colour in [0, 1] and exp(-depth / 4) haze,
// sky pixels have zero haze.
Tensor synthesize_images(const std::vector<View>& views, const vocab::ClassEmbeddingTable& table);

// Depth targets (N, H, W) with hit mask.
depthbin::DepthMap depth_targets(const std::vector<View>& views);

// Depth in millimetres as 16-bit PGM; class colours as PPM.
void write_depth_pgm(const std::string& path, const View& view);
void write_seg_ppm(const std::string& path, const View& view, const vocab::ClassEmbeddingTable& table);

// Default desk-scale world: 50 x 50 x 8 voxels of 0.2 m, four surround
// cameras at 64 x 176, road ground and car / building / tree boxes with a
// rare bicycle class.
geometry::VoxelGridSpec toy_grid();
geometry::CameraRig toy_rig();
SceneSpec toy_scene(const vocab::ClassEmbeddingTable& table, std::uint64_t seed);

}  // namespace ovocc::synthworld
