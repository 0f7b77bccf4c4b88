#include "ovocc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ovocc/binary_io.hpp"
#include "ovocc/error.hpp"
#include "ovocc/ops.hpp"

namespace ovocc::trainer {

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  return out;
}

occupancy::SegMaps seg_maps(const std::vector<synthworld::View>& views) {
  occupancy::SegMaps maps;
  for (const auto& v : views) maps.push_back(v.seg);
  return maps;
}

// Ground-truth superclass where it is seen, free elsewhere.
std::vector<vocab::ClassId> seen_superclass_grid(const synthworld::World& world,
                                                 const vocab::ClassEmbeddingTable& table,
                                                 const std::vector<std::string>& seen) {
  std::vector<vocab::ClassId> allowed;
  for (const auto& name : seen) allowed.push_back(table.superclass_id_of(name));
  std::vector<vocab::ClassId> out(world.classes.size(), vocab::kFree);
  for (std::size_t f = 0; f < out.size(); ++f) {
    if (world.classes[f] == vocab::kFree) continue;
    const auto s = vocab::subclass_to_superclass(world.classes[f], table);
    if (std::find(allowed.begin(), allowed.end(), s) != allowed.end()) out[f] = s;
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw Error(ErrorCode::kInvalidArgument, "stage must be 1 or 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be positive");
  }
  for (double w : {lambda_pix, lambda_bd, lambda_bin, lambda_sa}) {
    if (!(w >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "loss weights must be non-negative");
  }
  if (!(silog_alpha >= 0.0 && silog_alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "silog alpha must lie in [0, 1]");
  }
}

void write_trace_csv(const std::string& path, const LossTrace& trace) {
  std::ofstream out = open_out(path);
  out << std::setprecision(17) << "step,l_pix,l_bd,l_bin,l_sa,total\n";
  auto cell = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : trace) {
    out << r.step << ',';
    cell(r.l_pix);
    out << ',';
    cell(r.l_bd);
    out << ',';
    cell(r.l_bin);
    out << ',';
    cell(r.l_sa);
    out << ',' << r.total << '\n';
  }
}

SceneData prepare_scene(synthworld::World world, const geometry::CameraRig& cams,
                        const vocab::ClassEmbeddingTable& table, std::size_t downsample,
                        const synthworld::RenderOptions& render) {
  SceneData s;
  s.world = std::move(world);
  s.cams = cams;
  s.views = synthworld::render_views(s.world, cams, render);
  s.images = synthworld::synthesize_images(s.views, table);
  s.depth = synthworld::depth_targets(synthworld::render_views(s.world, cams.downsampled(downsample)));
  s.visible = synthworld::visibility_mask(s.world, cams);
  return s;
}

Stage1Losses stage1_losses(const depthbin::DepthModel& model, const Tensor& pooled,
                           const depthbin::DepthMap& depth, const depthbin::BinTarget& target,
                           const TrainConfig& cfg) {
  const ad::Var metric = model.metric(pooled);
  Stage1Losses l;
  l.l_pix = depthbin::silog_loss(metric, depth, cfg.silog_alpha);
  l.l_bd = depthbin::bin_ce_loss(depthbin::metric_to_bin(metric, model.config().bins), target);
  l.total = depthbin::stage1_loss(l.l_pix, l.l_bd, {cfg.lambda_pix, cfg.lambda_bd});
  return l;
}

LossTrace train_stage1(depthbin::DepthModel& model, const SceneData& scene, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != 1) throw Error(ErrorCode::kInvalidArgument, "train_stage1 needs stage = 1");
  ParamSet& ps = model.params();
  ps.set_trainable("depth.backbone", false);
  ps.set_trainable("depth.lora", cfg.lora && model.config().lora_enabled);
  ps.set_trainable("depth.r2m", true);
  ps.zero_grad();

  const Tensor pooled = model.pool_image(scene.images);
  const depthbin::BinTarget target = depthbin::gt_bin_onehot(scene.depth, model.config().bins);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  LossTrace trace;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    const Stage1Losses l = stage1_losses(model, pooled, scene.depth, target, cfg);
    trace.push_back({step, l.l_pix.value()[0], l.l_bd.value()[0], std::nullopt, std::nullopt, l.total.value()[0]});
    if (step == cfg.steps) break;
    ad::backward(l.total);
    opt.step(ps);
  }
  return trace;
}

OccModel::OccModel(const backbone::VitConfig& vit_cfg, const backbone::HsaConfig& hsa_cfg,
                   const occupancy::OccConfig& occ_cfg)
    : vit(vit_cfg), hsa(hsa_cfg, vit_cfg), heads(occ_cfg) {
  params.extend(vit.params());
  params.extend(hsa.params());
  params.extend(heads.params());
}

Stage2Inputs prepare_stage2(const OccModel& model, const depthbin::DepthModel& depth,
                            const SceneData& scene) {
  Stage2Inputs in;
  in.semantics = backbone::prepare_semantics(scene.images, model.vit);
  in.bins = depth.predict_bins(scene.images).probs;
  const std::size_t h = in.bins.dim(1), w = in.bins.dim(2);
  if (h != model.hsa.out_h() || w != model.hsa.out_w()) {
    throw Error(ErrorCode::kShapeMismatch, "depth bins at " + std::to_string(h) + "x" + std::to_string(w) +
                                               ", semantic features at " + std::to_string(model.hsa.out_h()) +
                                               "x" + std::to_string(model.hsa.out_w()));
  }
  in.frustum = geometry::build_frustum(scene.cams, scene.world.grid, depth.config().bins, h, w);
  in.index = lift::precompute_pool_index(in.frustum, scene.world.grid);
  return in;
}

namespace {

occupancy::OccOutput forward_stage2(const OccModel& model, const Stage2Inputs& in) {
  const ad::Var f_sem = backbone::encode_semantics(in.semantics, model.vit, model.hsa);
  const ad::Var volume = lift::lift_splat(f_sem, ad::constant(in.bins), in.index);
  return occupancy::occ_forward(volume, model.heads);
}

}  // namespace

Stage2Targets prepare_targets(const SceneData& scene, const vocab::ClassEmbeddingTable& table,
                              const TrainConfig& cfg) {
  const auto restrict_grid = seen_superclass_grid(scene.world, table, cfg.seen_superclasses);
  Stage2Targets t;
  t.pseudo = occupancy::assign_pseudo_labels(scene.world.grid, scene.cams, seg_maps(scene.views), table,
                                             cfg.seen_superclasses.empty() ? nullptr : &restrict_grid);
  t.sa_mask.resize(scene.world.grid.count());
  for (std::size_t f = 0; f < t.sa_mask.size(); ++f) {
    t.sa_mask[f] = scene.world.occupied[f] && scene.visible[f];
  }
  return t;
}

Stage2Losses stage2_losses(const OccModel& model, const Stage2Inputs& in, const Stage2Targets& targets,
                           const SceneData& scene, const TrainConfig& cfg) {
  const occupancy::OccOutput out = forward_stage2(model, in);
  Stage2Losses l;
  l.l_bin = occupancy::binary_occ_loss(out.o_bin, scene.world.occupied, scene.visible);
  l.l_sa = occupancy::reweighted_alignment_loss(out.o_sa, targets.pseudo, &targets.sa_mask, cfg.reweight);
  l.total = occupancy::stage2_loss(l.l_bin, l.l_sa, {cfg.lambda_bin, cfg.lambda_sa});
  return l;
}

LossTrace train_stage2(OccModel& model, const depthbin::DepthModel& depth, const SceneData& scene,
                       const vocab::ClassEmbeddingTable& table, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != 2) throw Error(ErrorCode::kInvalidArgument, "train_stage2 needs stage = 2");
  if (cfg.hsa != model.hsa.config().enabled) {
    throw Error(ErrorCode::kInvalidArgument, "hsa switch disagrees with the model configuration");
  }
  ParamSet& ps = model.params;
  ps.set_trainable("vit", false);
  ps.set_trainable("hsa.body", cfg.hsa);
  ps.set_trainable("hsa.head", cfg.hsa);
  ps.set_trainable("hsa.fuse", true);
  ps.set_trainable("occ", true);
  ps.zero_grad();

  const Stage2Inputs in = prepare_stage2(model, depth, scene);
  const Stage2Targets targets = prepare_targets(scene, table, cfg);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  LossTrace trace;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    const Stage2Losses l = stage2_losses(model, in, targets, scene, cfg);
    trace.push_back({step, std::nullopt, std::nullopt, l.l_bin.value()[0], l.l_sa.value()[0], l.total.value()[0]});
    if (step == cfg.steps) break;
    ad::backward(l.total);
    opt.step(ps);
  }
  return trace;
}

Prediction predict(const OccModel& model, const depthbin::DepthModel& depth, const SceneData& scene,
                   const vocab::ClassEmbeddingTable& table, double tau,
                   const std::vector<vocab::ClassId>& candidates) {
  const Stage2Inputs in = prepare_stage2(model, depth, scene);
  const occupancy::OccOutput out = forward_stage2(model, in);
  Prediction p{out.o_bin.value(), out.o_sa.value(), {}};
  p.classes = occupancy::decode(p.o_bin, p.o_sa, table, tau, candidates);
  return p;
}

Census pipeline_census(const depthbin::DepthModel& depth, const OccModel& occ) {
  ParamSet all;
  all.extend(depth.params());
  all.extend(occ.params);
  const bool lora = depth.config().lora_enabled, hsa = occ.hsa.config().enabled;
  for (Param& p : all.params()) {
    const std::string& c = p.component;
    if (c == "depth.lora") {
      p.trainable = lora;
    } else if (c == "hsa.body" || c == "hsa.head") {
      p.trainable = hsa;
    } else {
      p.trainable = c == "depth.r2m" || c == "hsa.fuse" || c.rfind("occ.", 0) == 0;
    }
  }
  return parameter_census(all);
}

std::string format_census(const Census& c) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "component" << std::right << std::setw(10) << "total" << std::setw(11)
     << "trainable" << std::setw(10) << "fraction" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : c.components) {
    os << std::left << std::setw(16) << r.component << std::right << std::setw(10) << r.total << std::setw(11)
       << r.trainable << std::setw(10) << (r.total ? double(r.trainable) / double(r.total) : 0.0) << '\n';
  }
  os << std::left << std::setw(16) << "all" << std::right << std::setw(10) << c.total << std::setw(11) << c.trainable
     << std::setw(10) << c.fraction() << '\n';
  return os.str();
}

void write_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream out = open_out(path, std::ios::binary);
  binio::put_magic(out, "OLK1");
  binio::put_u32(out, 1);
  binio::put_u32(out, static_cast<std::uint32_t>(params.params().size()));
  for (const Param& p : params.params()) {
    binio::put_string(out, p.name);
    binio::put_string(out, p.component);
    binio::put_u8(out, p.trainable ? 1 : 0);
    const Tensor& v = p.var.value();
    binio::put_u32(out, static_cast<std::uint32_t>(v.rank()));
    for (std::size_t d : v.shape()) binio::put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < v.size(); ++i) binio::put_f64(out, v[i]);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  binio::expect_magic(in, "OLK1");
  if (binio::get_u32(in) != 1) throw Error(ErrorCode::kFormat, "unsupported OLK1 version");
  const std::uint32_t count = binio::get_u32(in);
  std::map<std::string, Tensor> out;
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::string name = binio::get_string(in);
    binio::get_string(in);  // component
    binio::get_u8(in);      // trainable
    const std::uint32_t rank = binio::get_u32(in);
    if (rank > 8) throw Error(ErrorCode::kFormat, "tensor rank out of bounds");
    Shape shape(rank);
    std::size_t size = 1;
    for (auto& d : shape) {
      d = binio::get_u32(in);
      size *= d;
    }
    if (size > (std::size_t{1} << 28)) throw Error(ErrorCode::kFormat, "tensor too large");
    Tensor t(shape);
    for (std::size_t i = 0; i < size; ++i) t[i] = binio::get_f64(in);
    out.emplace(name, std::move(t));
  }
  return out;
}

void load_checkpoint(const std::string& path, ParamSet& params) { params.load(read_checkpoint(path)); }

}  // namespace ovocc::trainer
