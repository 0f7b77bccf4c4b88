#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ovocc/backbone.hpp"
#include "ovocc/bin_spec.hpp"
#include "ovocc/depthbin.hpp"
#include "ovocc/error.hpp"
#include "ovocc/geometry.hpp"
#include "ovocc/occupancy.hpp"
#include "ovocc/trainer.hpp"

// INI run configuration. Every section must be present (it may be empty);
// keys are optional and fall back to the defaults below. Unknown sections
// or keys, malformed values and inconsistent settings throw ConfigError.
namespace ovocc::config {

using geometry::Mat3;
using geometry::Vec3;

struct CameraSection {
  enum class Layout { kSurround, kExplicit };
  Layout layout = Layout::kSurround;
  // Surround layout: `count` cameras evenly spaced in yaw.
  std::size_t count = 4;
  Vec3 center = Vec3(0.0, 0.0, 1.0);
  std::size_t image_height = 64, image_width = 176;
  double hfov_deg = 90.0;
  double pitch_deg = 12.0;  // downwards
  // Explicit layout: one line per camera.
  std::vector<geometry::Camera> cameras;
};

struct Stage1Section {
  trainer::TrainConfig train;        // stage 1, SGD
  depthbin::DepthModelConfig model;  // bins come from [bins]
};

struct Stage2Section {
  trainer::TrainConfig train;  // stage 2, Adam; `hsa` follows [hsa] enabled
  occupancy::OccConfig model;  // in_channels / embed_dim are derived
};

struct VocabSection {
  std::size_t dim = 32;
  std::uint64_t seed = 1;
  std::string embeddings;    // OVE1 file; empty: seeded pseudo provider
  std::string subclass_map;  // tab-separated file; empty: built-in division
  std::string templates;     // one template per line; empty: built-in 14
  std::vector<std::string> classes;  // empty: every subclass of the map
  bool strict = true;
};

struct RosterSpec {
  std::string name;
  double share = 0.0;
  std::array<std::size_t, 3> size_min{1, 1, 1}, size_max{1, 1, 1};
};

struct BoxSpec {
  std::string name;
  Vec3 min = Vec3::Zero(), max = Vec3::Zero();
};

struct SceneSection {
  std::uint64_t seed = 0;
  std::string ground_class = "road";
  double ground_height = 0.2;
  double clear_radius = 1.2;
  std::size_t max_attempts = 4000;
  std::vector<RosterSpec> roster;  // defaults to the toy roster
  std::vector<BoxSpec> boxes;
  bool exact_render = true;
  double step_fraction = 0.25;
  double label_noise = 0.0;
  std::uint64_t noise_seed = 0;
  std::vector<std::string> noise_classes;
};

struct EvalSection {
  double tau = 0.5;
  std::vector<std::string> candidates;  // empty: every table class
  std::vector<std::string> queries;     // empty: every class present in the ground truth
};

struct RunConfig {
  std::filesystem::path base_dir;  // directory of the config file, not serialized
  geometry::VoxelGridSpec grid;
  CameraSection cameras;
  depthbin::BinSpec bins;
  backbone::VitConfig vit;  // image size and channels follow [cameras]
  backbone::HsaConfig hsa;
  Stage1Section stage1;
  Stage2Section stage2;
  VocabSection vocab;
  SceneSection scene;
  EvalSection eval;

  // The toy defaults with every section filled in.
  static RunConfig defaults();

  // Path relative to the config file; empty stays empty.
  std::string resolve(const std::string& path) const;
  geometry::CameraRig rig() const;
  // Cross-section consistency; throws ConfigError.
  void validate() const;
};

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::string& path);
std::string serialize(const RunConfig& cfg);
// Equality of everything serialize() writes.
bool operator==(const RunConfig& a, const RunConfig& b);

inline const std::vector<std::string>& section_names() {
  static const std::vector<std::string> names = {"grid",         "cameras",      "bins",  "vit",
                                                 "hsa",          "train.stage1", "train.stage2",
                                                 "vocab",        "scene",        "eval"};
  return names;
}

}  // namespace ovocc::config
