#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ovocc/backbone.hpp"
#include "ovocc/depthbin.hpp"
#include "ovocc/lift.hpp"
#include "ovocc/occupancy.hpp"
#include "ovocc/params.hpp"
#include "ovocc/synthworld.hpp"

namespace ovocc::trainer {

struct TrainConfig {
  int stage = 1;
  std::size_t steps = 200;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;  // base seed for model initialisation
  double lambda_pix = 1.0, lambda_bd = 1.0;
  double lambda_bin = 1.0, lambda_sa = 1.0;
  bool reweight = true;
  bool lora = true;
  bool hsa = true;
  // Seen superclasses; voxels whose ground-truth superclass is listed
  // get pseudo labels restricted to its subclasses. Empty: no restriction.
  std::vector<std::string> seen_superclasses;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double silog_alpha = 0.85;

  // Throws InvalidArgument.
  void validate() const;
};

struct TraceRow {
  std::size_t step = 0;
  std::optional<double> l_pix, l_bd, l_bin, l_sa;
  double total = 0.0;
};

// One row per update (loss before the update) plus a final row after the
// last update.
using LossTrace = std::vector<TraceRow>;

void write_trace_csv(const std::string& path, const LossTrace& trace);

// A rendered scene snapshot: images at the rig resolution, depth targets at
// feature resolution.
struct SceneData {
  synthworld::World world;
  geometry::CameraRig cams;
  std::vector<synthworld::View> views;
  Tensor images;            // (N, H, W, 4)
  depthbin::DepthMap depth; // (N, H / ds, W / ds)
  occupancy::Mask visible;
};

SceneData prepare_scene(synthworld::World world, const geometry::CameraRig& cams,
                        const vocab::ClassEmbeddingTable& table, std::size_t downsample,
                        const synthworld::RenderOptions& render = {});

struct Stage1Losses {
  ad::Var l_pix, l_bd, total;
};

// pooled: block-pooled scene images; target: bins of the depth targets.
Stage1Losses stage1_losses(const depthbin::DepthModel& model, const Tensor& pooled,
                           const depthbin::DepthMap& depth, const depthbin::BinTarget& target,
                           const TrainConfig& cfg);

// Only LoRA (when cfg.lora) and the relative-to-metric adaptor are updated.
LossTrace train_stage1(depthbin::DepthModel& model, const SceneData& scene, const TrainConfig& cfg);

// Frozen ViT, side adaptor, fusion and occupancy heads. Copies would share
// parameters, so the type is move-only.
struct OccModel {
  OccModel(const backbone::VitConfig& vit_cfg, const backbone::HsaConfig& hsa_cfg,
           const occupancy::OccConfig& occ_cfg);
  OccModel(const OccModel&) = delete;
  OccModel& operator=(const OccModel&) = delete;

  backbone::TinyViT vit;
  backbone::Hsa hsa;
  occupancy::OccHeads heads;
  ParamSet params;  // all of the above
};

// Everything in stage 2 that does not depend on trainable parameters.
struct Stage2Inputs {
  backbone::SemanticCache semantics;
  Tensor bins;  // (N, h, w, n_bins) from the frozen depth model
  geometry::FrustumGrid frustum;
  lift::PoolIndex index;
};

Stage2Inputs prepare_stage2(const OccModel& model, const depthbin::DepthModel& depth,
                            const SceneData& scene);

// Pseudo labels (with the seen-class restriction) and the alignment mask, which
// covers visible ground-truth-occupied voxels.
struct Stage2Targets {
  occupancy::PseudoLabelField pseudo;
  occupancy::Mask sa_mask;
};

Stage2Targets prepare_targets(const SceneData& scene, const vocab::ClassEmbeddingTable& table,
                              const TrainConfig& cfg);

struct Stage2Losses {
  ad::Var l_bin, l_sa, total;
};

Stage2Losses stage2_losses(const OccModel& model, const Stage2Inputs& in, const Stage2Targets& targets,
                           const SceneData& scene, const TrainConfig& cfg);

// Only the adaptor (when cfg.hsa), fusion MLPs and occupancy network are updated;
// the depth model is read-only.
LossTrace train_stage2(OccModel& model, const depthbin::DepthModel& depth, const SceneData& scene,
                       const vocab::ClassEmbeddingTable& table, const TrainConfig& cfg);

struct Prediction {
  Tensor o_bin;                        // (H, W, Z)
  Tensor o_sa;                         // (H, W, Z, E)
  std::vector<vocab::ClassId> classes; // decoded
};

Prediction predict(const OccModel& model, const depthbin::DepthModel& depth, const SceneData& scene,
                   const vocab::ClassEmbeddingTable& table, double tau,
                   const std::vector<vocab::ClassId>& candidates = {});

// Depth model with its stage-1 trainable flags plus the stage-2 model.
Census pipeline_census(const depthbin::DepthModel& depth, const OccModel& occ);
std::string format_census(const Census& c);

// OLK1 checkpoints: every parameter with name, component, trainable flag
// and f64 values.
void write_checkpoint(const std::string& path, const ParamSet& params);
std::map<std::string, Tensor> read_checkpoint(const std::string& path);
void load_checkpoint(const std::string& path, ParamSet& params);

}  // namespace ovocc::trainer
