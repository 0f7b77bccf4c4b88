#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ovocc/depthbin.hpp"
#include "ovocc/geometry.hpp"
#include "ovocc/layers.hpp"
#include "ovocc/vocab.hpp"

namespace ovocc::occupancy {

using vocab::ClassId;
using Mask = std::vector<std::uint8_t>;

struct OccConfig {
  std::size_t in_channels = 16;
  std::size_t trunk_width = 8;
  std::size_t trunk_blocks = 2;
  std::size_t bin_hidden = 8;
  std::size_t sa_hidden = 16;
  std::size_t embed_dim = 32;
  std::uint64_t seed = 17;
};

// Residual 3D conv trunk with pointwise (1x1x1) heads. Components:
//   occ.trunk, occ.bin_head, occ.sa_head
class OccHeads {
 public:
  explicit OccHeads(const OccConfig& cfg);

  const OccConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t bin_head_depth() const { return bin_.size(); }
  std::size_t sa_head_depth() const { return sa_.size(); }

 private:
  friend struct OccOutput occ_forward(const ad::Var& volume, const OccHeads& heads);
  OccConfig cfg_;
  ParamSet params_;
  Dense in_proj_;
  struct Block {
    ad::Var w1, b1, w2, b2;
  };
  std::vector<Block> blocks_;
  std::vector<Dense> bin_, sa_;
};

struct OccOutput {
  ad::Var o_bin;  // (H, W, Z) in (0, 1)
  ad::Var o_sa;   // (H, W, Z, E)
};

// (H, W, Z, C) lifted volume -> binary occupancy and embeddings. Throws ShapeMismatch.
OccOutput occ_forward(const ad::Var& volume, const OccHeads& heads);

// 0 where o_bin < tau, else argmax over `candidates` (all table ids when
// empty) of o_sa . embedding; ties go to the lowest id. Throws
// InvalidArgument unless 0 < tau < 1.
std::vector<ClassId> decode(const Tensor& o_bin, const Tensor& o_sa,
                            const vocab::ClassEmbeddingTable& table, double tau,
                            const std::vector<ClassId>& candidates = {});

struct PseudoLabelField {
  Tensor target_embedding;           // (H, W, Z, E)
  std::vector<ClassId> target_class; // free where invalid
  Mask valid;
};

// Per-camera class images, row-major at each camera's image size.
using SegMaps = std::vector<std::vector<ClassId>>;

// Projects every voxel centre into the cameras in order; the first camera
// with an in-bounds, positive-depth projection supplies the class (a free
// label leaves the voxel invalid). Where `superclass_gt` holds a non-free
// superclass id the class is restricted to that superclass's subclasses,
// falling back to its first subclass.
PseudoLabelField assign_pseudo_labels(const geometry::VoxelGridSpec& grid,
                                      const geometry::CameraRig& cams, const SegMaps& seg_maps,
                                      const vocab::ClassEmbeddingTable& table,
                                      const std::vector<ClassId>* superclass_gt = nullptr);

// Class-balanced mean of (1 - cos(o_sa, target)) over voxels that are
// pseudo-valid and inside `mask` (when given). With reweight = false it is
// the plain voxel mean. Throws NoValidVoxels.
ad::Var reweighted_alignment_loss(const ad::Var& o_sa, const PseudoLabelField& pseudo,
                                  const Mask* mask = nullptr, bool reweight = true);

// Mean binary cross-entropy over visible voxels, log clamped at 1e-12.
// Throws EmptyVisibleSet.
ad::Var binary_occ_loss(const ad::Var& o_bin, const Mask& gt_bin, const Mask& visible);

inline ad::Var stage2_loss(const ad::Var& l_bin, const ad::Var& l_sa, depthbin::LossWeights w) {
  return depthbin::weighted_sum(l_bin, l_sa, w);
}

// OVX1 voxel grid files.
enum class OvxKind : std::uint8_t { kClass = 0, kBinary = 1, kEmbedding = 2 };

struct OvxGrid {
  geometry::VoxelGridSpec grid;
  OvxKind kind = OvxKind::kClass;
  std::vector<ClassId> classes;
  Mask binary;
  Tensor embeddings;  // (H, W, Z, E), stored as f32
};

void write_ovx(const std::string& path, const OvxGrid& g);
OvxGrid read_ovx(const std::string& path);
OvxGrid ovx_classes(const geometry::VoxelGridSpec& grid, std::vector<ClassId> classes);
OvxGrid ovx_binary(const geometry::VoxelGridSpec& grid, Mask mask);
OvxGrid ovx_embeddings(const geometry::VoxelGridSpec& grid, Tensor embeddings);

}  // namespace ovocc::occupancy
