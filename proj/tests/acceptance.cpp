// Acceptance run: one PASS/FAIL line per criterion. Tolerances are pinned
// below; exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ovocc/cli.hpp"
#include "ovocc/config.hpp"
#include "ovocc/error.hpp"
#include "ovocc/eval.hpp"
#include "ovocc/gradcheck.hpp"
#include "ovocc/lift.hpp"
#include "ovocc/ops.hpp"
#include "ovocc/pipeline.hpp"
#include "ovocc/random.hpp"

using namespace ovocc;
using ad::Var;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kRowSumTol = 1e-6;
constexpr double kDerivedProbTol = 1e-6;
constexpr double kBinSuiteSeconds = 1.0;
constexpr double kGradTol = 1e-4;
constexpr double kGradSuiteSeconds = 60.0;
constexpr std::size_t kLiftScenes = 24;
constexpr double kMassTol = 1e-9;
constexpr double kLiftSuiteSeconds = 30.0;
constexpr std::size_t kFrozenSteps = 100;
constexpr double kHandLossTol = 1e-12;  // cosine round-off of the hand vectors
constexpr std::size_t kImbalanceSeeds = 5;
constexpr double kTailShareMax = 0.01;
constexpr std::size_t kImbalanceStage2Steps = 150;
constexpr double kImbalanceSeconds = 600.0;
constexpr std::size_t kMaxStageSteps = 500;
constexpr double kPixDropMin = 0.5;
constexpr double kMiouMin = 0.5;
constexpr std::size_t kEndToEndClasses = 5;
constexpr double kEndToEndSeconds = 600.0;
constexpr double kHandApTol = 1e-4;
constexpr std::size_t kNullPoints = 10000;
constexpr double kNullTol = 0.05;
constexpr std::size_t kShuffleSeeds = 5;
constexpr double kTemplateTol = 1e-12;
constexpr double kCensusMax = 0.20;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// Collects named checks and free-form notes for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    if (!failures_.empty()) {
      s += s.empty() ? "failed: " : " | failed: ";
      for (std::size_t i = 0; i < failures_.size(); ++i) s += (i ? ", " : "") + failures_[i];
    }
    return s;
  }

 private:
  std::vector<std::string> notes_, failures_;
};

Var probe(const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(y, ad::constant(rng.normal_tensor(y.shape(), 1.0))));
}

depthbin::DepthMap full_mask(Tensor values) {
  depthbin::DepthMap m{std::move(values), {}};
  m.mask.assign(m.values.size(), 1);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<Var> trainable_leaves(const ParamSet& ps) {
  std::vector<Var> out;
  for (const auto& p : ps.params())
    if (p.trainable) out.push_back(p.var);
  return out;
}

std::map<std::string, Tensor> component_values(const ParamSet& ps, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& p : ps.params())
    if (p.component.rfind(prefix, 0) == 0) out.emplace(p.name, p.var.value());
  return out;
}

struct Paths {
  fs::path configs, data, work;
};

// ---------------------------------------------------------------- 1

Checks bin_suite() {
  Checks c;
  const auto t0 = Clock::now();
  const depthbin::BinSpec bins = depthbin::BinSpec::synthetic_default();
  const std::size_t n = bins.n_bins;

  Rng rng(1);
  Tensor d({4000});
  for (double& v : d.vec()) v = rng.uniform(bins.lower_edge() - 2.0, bins.upper_edge() + 2.0);
  const Tensor p = depthbin::metric_to_bin(ad::constant(d), bins).value();
  double worst_sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += p[i * n + j];
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  c.note("max |row sum - 1| " + fmt(worst_sum, 3));
  c.expect(worst_sum < kRowSumTol, "row sums");

  // At centre k the logits are -beta * width * |j - k|; the normaliser is a
  // pair of geometric series in q = exp(-beta * width).
  const double q = std::exp(-bins.beta * bins.width);
  double worst_prob = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double left = q * (1.0 - std::pow(q, double(k))) / (1.0 - q);
    const double right = q * (1.0 - std::pow(q, double(n - 1 - k))) / (1.0 - q);
    const double peak = 1.0 / (1.0 + left + right);
    const Tensor pk = depthbin::metric_to_bin(ad::constant(Tensor({1}, bins.center(k))), bins).value();
    for (std::size_t j = 0; j < n; ++j) {
      const double expected = peak * std::pow(q, std::abs(double(j) - double(k)));
      worst_prob = std::max(worst_prob, std::abs(pk[j] - expected));
    }
  }
  c.note("max derived-probability error " + fmt(worst_prob, 3));
  c.expect(worst_prob < kDerivedProbTol, "derived probabilities");

  // Shared edges: equal similarities, the one-hot target takes the lower bin.
  bool ties_ok = true;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double edge = bins.center(j) + 0.5 * bins.width;
    const Tensor pe = depthbin::metric_to_bin(ad::constant(Tensor({1}, edge)), bins).value();
    const Tensor pe2 = depthbin::metric_to_bin(ad::constant(Tensor({1}, edge)), bins).value();
    const auto t = depthbin::gt_bin_onehot(full_mask(Tensor({1}, edge)), bins);
    const auto t2 = depthbin::gt_bin_onehot(full_mask(Tensor({1}, edge)), bins);
    ties_ok = ties_ok && pe[j] == pe[j + 1] && pe == pe2 && t.onehot == t2.onehot && t.coverage[0] == 1 &&
              t.onehot[j] == 1.0 && t.onehot[j + 1] == 0.0;
  }
  c.expect(ties_ok, "boundary tie-break");

  std::size_t interior = 0, agree = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (int s = 0; s < 200; ++s) {
      const double v = bins.center(j) + (2.0 * rng.uniform() - 1.0) * 0.5 * bins.width;
      if (std::abs(v - bins.center(j)) >= 0.5 * bins.width) continue;
      const Tensor pv = depthbin::metric_to_bin(ad::constant(Tensor({1}, v)), bins).value();
      const auto t = depthbin::gt_bin_onehot(full_mask(Tensor({1}, v)), bins);
      std::size_t arg = 0;
      for (std::size_t b = 1; b < n; ++b)
        if (pv[b] > pv[arg]) arg = b;
      ++interior;
      agree += t.coverage[0] == 1 && t.onehot[arg] == 1.0 && arg == j;
    }
  }
  c.note("argmax = gt bin on " + std::to_string(agree) + "/" + std::to_string(interior) + " interior depths");
  c.expect(interior > 0 && agree == interior, "interior argmax");

  const double secs = seconds_since(t0);
  c.expect(secs < kBinSuiteSeconds, "runtime");
  return c;
}

// ---------------------------------------------------------------- 2

backbone::VitConfig mini_vit() {
  backbone::VitConfig v;
  v.image_h = 16;
  v.image_w = 44;
  v.patch = 4;
  v.heads = 2;
  v.head_dim = 4;
  v.layers = 4;
  v.mlp_ratio = 2;
  v.inject_after = {1, 2};
  v.bias_layers = 1;
  v.head_bias_dim = 2;
  return v;
}

Checks gradient_suite() {
  Checks c;
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, double>> errors;
  auto run = [&](const std::string& name, const std::function<Var()>& loss, const std::vector<Var>& leaves) {
    errors.emplace_back(name, ad::gradcheck(loss, leaves).max_rel_error);
  };
  Rng rng(2);
  const depthbin::BinSpec bins = depthbin::BinSpec::synthetic_default();

  {
    Var d(rng.uniform_tensor({2, 3, 4}, 0.5, 9.0), true);
    depthbin::DepthMap gt = full_mask(rng.uniform_tensor({2, 3, 4}, 0.5, 9.0));
    for (std::size_t i = 0; i < gt.mask.size(); i += 5) gt.mask[i] = 0;
    run("silog", [&] { return depthbin::silog_loss(d, gt, 0.85); }, {d});
    const auto target = depthbin::gt_bin_onehot(gt, bins);
    Var probs(rng.uniform_tensor({2, 3, 4, bins.n_bins}, 0.05, 1.0), true);
    run("bin-CE", [&] { return depthbin::bin_ce_loss(probs, target); }, {probs});
    run("bin-CE of similarities", [&] { return depthbin::bin_ce_loss(depthbin::metric_to_bin(d, bins), target); },
        {d});
    run("bin similarity", [&] { return probe(depthbin::metric_to_bin(d, bins), 3); }, {d});
  }
  {
    const occupancy::Mask gt{1, 0, 1, 0, 1, 1}, vis{1, 1, 1, 0, 1, 1};
    Var p(rng.uniform_tensor({6}, 0.1, 0.9), true);
    run("binary-CE", [&] { return occupancy::binary_occ_loss(p, gt, vis); }, {p});
  }
  {
    occupancy::PseudoLabelField g{rng.normal_tensor({3, 2, 1, 4}, 1.0), {1, 1, 2, 3, 1, 2},
                                  occupancy::Mask{1, 1, 1, 0, 1, 1}};
    Var o(rng.normal_tensor({3, 2, 1, 4}, 1.0), true);
    const occupancy::Mask m{1, 1, 1, 1, 0, 1};
    run("alignment (reweighted)", [&] { return occupancy::reweighted_alignment_loss(o, g, &m, true); }, {o});
    run("alignment (plain)", [&] { return occupancy::reweighted_alignment_loss(o, g, &m, false); }, {o});
  }
  {
    const auto grid = geometry::VoxelGridSpec::make({10, 10, 4}, geometry::Vec3(-2, -2, -0.4),
                                                    geometry::Vec3(2, 2, 1.2));
    const auto rig = geometry::make_surround_rig(4, geometry::Vec3(0, 0, 0.5), {8, 12}, M_PI / 2, 0.15);
    const depthbin::BinSpec small{5, 0.4, 0.4, 10.0};
    const auto frustum = geometry::build_frustum(rig, grid, small, 2, 3);
    const auto index = lift::precompute_pool_index(frustum, grid);
    Var f(rng.normal_tensor({4, 2, 3, 3}, 1.0), true);
    Var d(rng.uniform_tensor({4, 2, 3, 5}, 0.0, 1.0), true);
    run("lift_splat", [&] { return probe(lift::lift_splat(f, d, index), 4); }, {f, d});
  }
  {
    Var qkv(rng.normal_tensor({2, 5, 12}, 1.0), true);
    Var bias(rng.normal_tensor({2, 4, 2, 2, 3}, 0.7), true);
    run("attention with bias", [&] { return probe(backbone::attention(qkv, 2, bias, 1, 1.0), 5); }, {qkv, bias});
    run("attention with scaled bias",
        [&] { return probe(backbone::attention(qkv, 2, bias, 0, 1.0 / std::sqrt(6.0)), 6); }, {qkv, bias});
  }
  {
    ParamSet ps;
    const Mlp m1 = make_mlp(ps, "m1", "t", 5, 7, 6, rng, true);
    const Mlp m2 = make_mlp(ps, "m2", "t", 5 + 3, 7, 2, rng, true);
    Var x(rng.normal_tensor({1, 2, 2, 5}, 1.0), true);
    Var s(rng.normal_tensor({1, 3, 4, 3}, 1.0), true);
    auto leaves = trainable_leaves(ps);
    leaves.push_back(x);
    leaves.push_back(s);
    run("fuse_fsem", [&] { return probe(backbone::fuse_fsem(x, s, m1, m2, 8, 3, 4), 7); }, leaves);
  }
  {
    occupancy::OccConfig oc;
    oc.in_channels = 3;
    oc.trunk_width = 3;
    oc.bin_hidden = 3;
    oc.sa_hidden = 4;
    oc.embed_dim = 4;
    occupancy::OccHeads heads(oc);
    Var vol(rng.normal_tensor({4, 4, 2, 3}, 1.0), true);
    auto leaves = trainable_leaves(heads.params());
    leaves.push_back(vol);
    run("occupancy heads",
        [&] {
          const auto o = occupancy::occ_forward(vol, heads);
          return ad::add(probe(o.o_bin, 8), probe(o.o_sa, 9));
        },
        leaves);
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errors) {
    c.expect(e < kGradTol, name + " (" + fmt(e, 3) + ")");
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  c.note(std::to_string(errors.size()) + " checks, worst " + worst_name + " " + fmt(worst, 3));
  c.expect(seconds_since(t0) < kGradSuiteSeconds, "runtime");
  return c;
}

// ---------------------------------------------------------------- 3

Checks lift_suite() {
  Checks c;
  const auto t0 = Clock::now();
  std::size_t identical = 0, conserved = 0, non_empty = 0;
  double worst_mass = 0.0;
  for (std::size_t scene = 0; scene < kLiftScenes; ++scene) {
    Rng rng(1000 + scene);
    const std::array<std::size_t, 3> dims{6 + rng.below(9), 6 + rng.below(9), 3 + rng.below(4)};
    const double half = rng.uniform(1.5, 4.0);
    const auto grid = geometry::VoxelGridSpec::make(dims, geometry::Vec3(-half, -half, rng.uniform(-0.6, 0.0)),
                                                    geometry::Vec3(half, half, rng.uniform(1.0, 2.0)));
    const std::size_t fh = 2 + rng.below(4), fw = 3 + rng.below(5);
    const std::size_t ds = 1 + rng.below(3);
    const auto rig = geometry::make_surround_rig(
        1 + rng.below(6), geometry::Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0.3, 1.0)),
        {fh * ds, fw * ds}, rng.uniform(1.0, 2.0), rng.uniform(-0.1, 0.4));
    const depthbin::BinSpec bins{3 + rng.below(8), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.5), 10.0};
    const std::size_t ch = 1 + rng.below(6);
    const auto frustum = geometry::build_frustum(rig, grid, bins, fh, fw);
    const auto index = lift::precompute_pool_index(frustum, grid);
    const std::size_t cams = rig.size();
    const Tensor f = rng.normal_tensor({cams, fh, fw, ch}, 1.0);
    const Tensor d = rng.uniform_tensor({cams, fh, fw, bins.n_bins}, 0.0, 1.0);
    const Tensor fast = lift::lift_splat_forward(f, d, index);
    identical += fast == lift::lift_splat_naive(f, d, frustum, grid);
    non_empty += index.intervals() > 0;

    bool ok = true;
    for (std::size_t k = 0; k < ch; ++k) {
      double volume = 0.0, image = 0.0;
      for (std::size_t v = 0; v < grid.count(); ++v) volume += fast[v * ch + k];
      for (std::size_t cam = 0; cam < cams; ++cam)
        for (std::size_t r = 0; r < fh; ++r)
          for (std::size_t col = 0; col < fw; ++col) {
            const std::size_t px = (cam * fh + r) * fw + col;
            for (std::size_t b = 0; b < bins.n_bins; ++b)
              if (frustum.valid[frustum.flat(cam, b, r, col)]) image += f[px * ch + k] * d[px * bins.n_bins + b];
          }
      worst_mass = std::max(worst_mass, std::abs(volume - image));
      ok = ok && std::abs(volume - image) <= kMassTol;
    }
    conserved += ok;
  }
  c.note(std::to_string(identical) + "/" + std::to_string(kLiftScenes) + " scenes bitwise equal, " +
         std::to_string(non_empty) + " with lifted points, worst mass error " + fmt(worst_mass, 3));
  c.expect(identical == kLiftScenes, "fast path differs from naive scatter");
  c.expect(conserved == kLiftScenes, "mass conservation");
  c.expect(non_empty >= 20, "fewer than 20 non-empty scenes");
  c.expect(seconds_since(t0) < kLiftSuiteSeconds, "runtime");
  return c;
}

// ---------------------------------------------------------------- 4

Checks adapter_suite(const Paths& paths) {
  Checks c;
  Rng rng(4);

  // LoRA: up starts at zero, so neither the down projections nor the
  // adapters' presence change the frozen network's output.
  {
    depthbin::DepthModelConfig dc;
    depthbin::DepthModel with(dc);
    dc.lora_enabled = false;
    depthbin::DepthModel without(dc);
    bool up_zero = true;
    for (const auto& a : with.adapters())
      for (double v : a.up.value().vec()) up_zero = up_zero && v == 0.0;
    const Tensor pooled = with.pool_image(rng.uniform_tensor({2, 64, 176, 4}, 0.0, 1.0));
    const Tensor base = with.relative(pooled).value();
    for (const auto& a : with.adapters()) {
      Var down = a.down;
      down.mutable_value() = rng.normal_tensor(down.shape(), 3.0);
    }
    c.expect(up_zero, "LoRA up not zero at init");
    c.expect(base == without.relative(pooled).value() && base == with.relative(pooled).value(),
             "LoRA init changes the frozen output");
  }

  // Zero bias: the attention op and the biased ViT blocks.
  const backbone::VitConfig vc = mini_vit();
  const backbone::TinyViT vit(vc);
  {
    const Tensor qkv = rng.normal_tensor({2, 5, 12}, 1.0);
    const Tensor zero({2, 4, 3, 2, 3});
    const bool op_same =
        backbone::attention(ad::constant(qkv), 2, Var(), 0, 1.0).value() ==
            backbone::attention(ad::constant(qkv), 2, ad::constant(zero), 1, 1.0).value() &&
        backbone::attention_probs(qkv, 2, nullptr, 0, 1.0) == backbone::attention_probs(qkv, 2, &zero, 2, 1.0);
    const auto prefix = vit.run_prefix(rng.uniform_tensor({2, 16, 44, 4}, 0.0, 1.0));
    const Tensor zero_bias({2, vc.visual_tokens(), vc.bias_layers, vc.heads, vc.head_bias_dim});
    const bool vit_same =
        vit.run_suffix(prefix.tokens, Var()).value() == vit.run_suffix(prefix.tokens, ad::constant(zero_bias)).value();
    c.expect(op_same, "zero bias changes attention");
    c.expect(vit_same, "zero bias changes the ViT");

    // [cls] row under arbitrary biases, down to bitwise equality.
    bool cls_same = true;
    const std::size_t t = 5;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor b = rng.normal_tensor({2, t - 1, 1, 2, 3}, 0.5 + trial);
      const Tensor p0 = backbone::attention_probs(qkv, 2, nullptr, 0, 1.0);
      const Tensor p1 = backbone::attention_probs(qkv, 2, &b, 0, trial % 2 ? 1.0 : 0.5);
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t h = 0; h < 2; ++h)
          for (std::size_t col = 0; col < t; ++col)
            cls_same = cls_same && p1.at({n, h, t - 1, col}) == p0.at({n, h, t - 1, col});
    }
    const std::size_t layer = vc.first_bias_layer(), tokens = vc.tokens();
    const Tensor vb = rng.normal_tensor({2, vc.visual_tokens(), vc.bias_layers, vc.heads, vc.head_bias_dim}, 2.0);
    const Tensor a0 = vit.layer_attention(prefix.tokens, layer, nullptr);
    const Tensor a1 = vit.layer_attention(prefix.tokens, layer, &vb);
    bool visual_moved = false;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < vc.heads; ++h)
        for (std::size_t col = 0; col < tokens; ++col) {
          cls_same = cls_same && a1.at({n, h, tokens - 1, col}) == a0.at({n, h, tokens - 1, col});
          visual_moved = visual_moved || a1.at({n, h, 0, col}) != a0.at({n, h, 0, col});
        }
    c.expect(cls_same, "[cls] attention changed by a bias");
    c.expect(visual_moved, "bias has no effect on visual rows");
  }

  // Frozen blocks after training.
  {
    const auto cfg = config::load_config((paths.configs / "mini.ini").string());
    const auto table = pipeline::make_table(cfg);
    const auto scene = pipeline::make_scene(cfg, table);
    auto depth = pipeline::make_depth_model(cfg);
    auto c1 = cfg.stage1.train;
    c1.steps = kFrozenSteps;
    const auto frozen_depth = component_values(depth.params(), "depth.backbone");
    const auto lora = component_values(depth.params(), "depth.lora");
    trainer::train_stage1(depth, scene, c1);
    c.expect(component_values(depth.params(), "depth.backbone") == frozen_depth, "depth backbone moved");
    c.expect(component_values(depth.params(), "depth.lora") != lora, "LoRA did not train");

    auto model = pipeline::make_occ_model(cfg, table);
    auto c2 = cfg.stage2.train;
    c2.steps = kFrozenSteps;
    const auto depth_after_stage1 = depth.params().snapshot();
    const auto vit_before = model->vit.params().snapshot();
    const auto hsa_before = model->hsa.params().snapshot();
    trainer::train_stage2(*model, depth, scene, table, c2);
    c.expect(model->vit.params().snapshot() == vit_before, "ViT moved in stage 2");
    c.expect(depth.params().snapshot() == depth_after_stage1, "depth model moved in stage 2");
    c.expect(model->hsa.params().snapshot() != hsa_before, "side adaptor did not train");
    c.note("frozen blocks bit-identical after " + std::to_string(kFrozenSteps) + " steps of each stage");
  }
  return c;
}

// ---------------------------------------------------------------- 5

// Target (1, 0); predictions at cosine 0.8 and 0.4 give losses 0.2 and 0.6.
occupancy::PseudoLabelField hand_field(const std::vector<std::pair<vocab::ClassId, double>>& items, Tensor& o_sa) {
  const std::size_t n = items.size();
  occupancy::PseudoLabelField f{Tensor({n, 1, 1, 2}), std::vector<vocab::ClassId>(n), occupancy::Mask(n, 1)};
  o_sa = Tensor({n, 1, 1, 2});
  for (std::size_t i = 0; i < n; ++i) {
    f.target_class[i] = items[i].first;
    f.target_embedding[i * 2] = 1.0;
    const double cosine = items[i].second;
    o_sa[i * 2] = cosine;
    o_sa[i * 2 + 1] = std::sqrt(1.0 - cosine * cosine);
  }
  return f;
}

struct ImbalanceRun {
  double tail_share = 0.0;
  double iou_on = 0.0, iou_off = 0.0;
};

// Default world and models; the alignment targets use the seen-class
// restriction for every superclass present, so the comparison isolates the
// class weighting from label noise.
config::RunConfig imbalance_config(std::uint64_t seed) {
  auto cfg = config::RunConfig::defaults();
  cfg.scene.seed = seed;
  cfg.stage2.train.steps = kImbalanceStage2Steps;
  return cfg;
}

ImbalanceRun imbalance_run(std::uint64_t seed) {
  auto cfg = imbalance_config(seed);
  auto table = pipeline::make_table(cfg);
  const auto scene = pipeline::make_scene(cfg, table);
  const vocab::ClassId tail = vocab::subclass_to_superclass(table.id_of("bicycle"), table);

  std::set<vocab::ClassId> present;
  std::size_t occupied = 0, tail_voxels = 0;
  for (auto id : scene.world.classes) {
    if (id == vocab::kFree) continue;
    const auto s = vocab::subclass_to_superclass(id, table);
    present.insert(s);
    ++occupied;
    tail_voxels += s == tail;
  }
  for (auto s : present) cfg.stage2.train.seen_superclasses.push_back(table.superclass_name(s));
  table = pipeline::make_table(cfg);

  ImbalanceRun r;
  r.tail_share = double(tail_voxels) / double(occupied);
  auto depth = pipeline::make_depth_model(cfg);
  trainer::train_stage1(depth, scene, cfg.stage1.train);
  for (bool reweight : {true, false}) {
    auto c2 = cfg.stage2.train;
    c2.reweight = reweight;
    auto model = pipeline::make_occ_model(cfg, table);
    trainer::train_stage2(*model, depth, scene, table, c2);
    const auto pred = trainer::predict(*model, depth, scene, table, cfg.eval.tau);
    const auto rep = eval::miou(pred.classes, scene.world.classes, scene.visible, table);
    const double iou = rep.per_class_iou.count(tail) ? rep.per_class_iou.at(tail) : 0.0;
    (reweight ? r.iou_on : r.iou_off) = iou;
  }
  return r;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Checks reweight_suite() {
  Checks c;
  {
    Tensor o;
    const auto f = hand_field({{1, 0.8}, {1, 0.8}, {1, 0.8}, {2, 0.4}}, o);
    const double rw = occupancy::reweighted_alignment_loss(ad::constant(o), f).value().item();
    const double plain = occupancy::reweighted_alignment_loss(ad::constant(o), f, nullptr, false).value().item();
    c.note("hand example " + fmt(rw, 12) + " (plain mean " + fmt(plain, 12) + ")");
    c.expect(std::abs(rw - 0.4) < kHandLossTol, "hand example");
    c.expect(std::abs(plain - 0.3) < kHandLossTol, "hand plain mean");

    Tensor o2;
    const auto f2 = hand_field({{1, 0.8}, {2, 0.4}, {1, 0.8}, {1, 0.8}, {1, 0.8}, {2, 0.4}, {1, 0.8}, {1, 0.8}}, o2);
    c.expect(occupancy::reweighted_alignment_loss(ad::constant(o2), f2).value().item() == rw,
             "duplication invariance");
  }

  const auto t0 = Clock::now();
  std::vector<double> on, off;
  double worst_share = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kImbalanceSeeds; ++seed) {
    const auto r = imbalance_run(seed);
    on.push_back(r.iou_on);
    off.push_back(r.iou_off);
    worst_share = std::max(worst_share, r.tail_share);
    per_seed += (seed ? " " : "") + fmt(r.iou_on, 3) + "/" + fmt(r.iou_off, 3);
  }
  const double secs = seconds_since(t0);
  const double m_on = median(on), m_off = median(off);
  c.note("tail IoU on/off per seed " + per_seed + ", median " + fmt(m_on, 3) + " vs " + fmt(m_off, 3) +
         ", max tail share " + fmt(worst_share, 3) + ", " + fmt(secs, 3) + " s");
  c.expect(worst_share <= kTailShareMax, "tail share above 1%");
  c.expect(m_on > m_off, "median tail IoU not higher with reweighting");
  c.expect(secs < kImbalanceSeconds, "runtime");
  return c;
}

// ---------------------------------------------------------------- 6, 7

struct EndToEnd {
  config::RunConfig cfg;
  vocab::ClassEmbeddingTable table;
  trainer::SceneData scene;
  trainer::Prediction pred;
  double pix_first = 0.0, pix_last = 0.0;
  eval::IoUReport report;
  double seconds = 0.0;
};

const EndToEnd& end_to_end() {
  static const EndToEnd run = [] {
    EndToEnd e;
    const auto t0 = Clock::now();
    e.cfg = config::RunConfig::defaults();
    e.table = pipeline::make_table(e.cfg);
    e.scene = pipeline::make_scene(e.cfg, e.table);
    auto depth = pipeline::make_depth_model(e.cfg);
    const auto trace = trainer::train_stage1(depth, e.scene, e.cfg.stage1.train);
    e.pix_first = *trace.front().l_pix;
    e.pix_last = *trace.back().l_pix;
    auto model = pipeline::make_occ_model(e.cfg, e.table);
    trainer::train_stage2(*model, depth, e.scene, e.table, e.cfg.stage2.train);
    e.pred = trainer::predict(*model, depth, e.scene, e.table, e.cfg.eval.tau, pipeline::candidate_ids(e.cfg, e.table));
    e.report = eval::miou(e.pred.classes, e.scene.world.classes, e.scene.visible, e.table);
    e.seconds = seconds_since(t0);
    return e;
  }();
  return run;
}

Checks end_to_end_suite() {
  Checks c;
  const EndToEnd& e = end_to_end();
  const double drop = 1.0 - e.pix_last / e.pix_first;
  std::string per_class;
  for (const auto& [id, iou] : e.report.per_class_iou)
    per_class += (per_class.empty() ? "" : " ") + e.table.superclass_name(id) + "=" + fmt(iou, 3);
  c.note("L_pix " + fmt(e.pix_first) + " -> " + fmt(e.pix_last) + " (drop " + fmt(100.0 * drop, 3) + "%)");
  c.note("mIoU " + fmt(e.report.miou) + " [" + per_class + "]");
  c.note(fmt(e.seconds, 3) + " s");
  c.expect(e.cfg.stage1.train.steps <= kMaxStageSteps && e.cfg.stage2.train.steps <= kMaxStageSteps, "step budget");
  c.expect(drop >= kPixDropMin, "L_pix drop");
  c.expect(e.report.per_class_iou.size() == kEndToEndClasses, "class count");
  c.expect(e.report.miou >= kMiouMin, "mIoU");
  c.expect(e.seconds < kEndToEndSeconds, "runtime");
  return c;
}

Checks retrieval_suite() {
  Checks c;
  const double hand = eval::retrieval_ap({0.9, 0.5, 0.1}, {1, 0, 1});
  c.note("hand AP " + fmt(hand, 6));
  c.expect(hand == (1.0 + 2.0 / 3.0) / 2.0 && std::abs(hand - 0.8333) < kHandApTol, "hand AP");
  c.expect(eval::retrieval_ap({0.9, 0.5, 0.1}, {1, 0, 0}) == 1.0, "hand AP top hit");
  c.expect(eval::retrieval_ap({0.5, 0.5}, {0, 1}) == 0.5, "hand AP tie");

  {
    Rng rng(7);
    const std::size_t e = 32;
    const Tensor pts = rng.normal_tensor({kNullPoints, e}, 1.0);
    std::vector<eval::Query> queries;
    std::vector<std::vector<std::uint8_t>> rel;
    for (int q = 0; q < 5; ++q) {
      eval::Query query{"q" + std::to_string(q), std::vector<double>(e)};
      for (double& v : query.embedding) v = rng.normal();
      queries.push_back(query);
      std::vector<std::uint8_t> r(kNullPoints);
      for (auto& v : r) v = rng.uniform() < 0.5;
      rel.push_back(std::move(r));
    }
    const auto rep = eval::retrieval_map(pts, queries, rel, std::vector<std::uint8_t>(kNullPoints, 1));
    c.note("null mAP " + fmt(rep.map_all));
    c.expect(std::abs(rep.map_all - 0.5) < kNullTol, "null mAP");
  }

  const EndToEnd& e2e = end_to_end();
  const auto set = pipeline::retrieval_set(e2e.pred.o_sa, e2e.scene.world, e2e.scene.visible, e2e.table,
                                           pipeline::query_names(e2e.cfg, e2e.scene.world, e2e.table));
  const double trained = eval::retrieval_map(set.points, set.queries, set.relevance, set.visible).map_all;
  std::string shuffled_list;
  bool all_higher = true;
  for (std::uint64_t seed = 1; seed <= kShuffleSeeds; ++seed) {
    const double s =
        eval::retrieval_map(pipeline::shuffle_points(set.points, seed), set.queries, set.relevance, set.visible)
            .map_all;
    all_higher = all_higher && trained > s;
    shuffled_list += (seed > 1 ? " " : "") + fmt(s, 3);
  }
  c.note("trained mAP " + fmt(trained) + " vs shuffled " + shuffled_list);
  c.expect(all_higher, "trained mAP not above every shuffled mAP");
  return c;
}

// ---------------------------------------------------------------- 8

Checks protocol_suite(const Paths& paths) {
  Checks c;
  const auto cfg = config::RunConfig::defaults();
  const auto table = pipeline::make_table(cfg);
  const auto n_ids = static_cast<std::uint64_t>(table.size() + 1);

  Rng rng(8);
  const std::size_t n = 1000;
  std::vector<vocab::ClassId> pred(n), gt(n);
  std::vector<std::uint8_t> vis(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = vocab::ClassId(rng.below(n_ids));
    gt[i] = vocab::ClassId(rng.below(n_ids));
    vis[i] = rng.uniform() < 0.6;
  }
  const auto base = eval::miou(pred, gt, vis, table);
  std::size_t flips = 0, unchanged = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (vis[i]) continue;
    for (int k = 1; k <= 3; ++k) {
      auto p2 = pred, g2 = gt;
      p2[i] = vocab::ClassId((p2[i] + 7 * k) % n_ids);
      g2[i] = vocab::ClassId((g2[i] + 3 * k) % n_ids);
      const auto r = eval::miou(p2, g2, vis, table);
      ++flips;
      unchanged += r.miou == base.miou && r.per_class_iou == base.per_class_iou;
    }
  }
  c.note(std::to_string(unchanged) + "/" + std::to_string(flips) + " invisible flips leave the report unchanged");
  c.expect(flips > 0 && unchanged == flips, "visible mask");

  const auto super_of = [&](const std::string& name) {
    return table.superclass_name(vocab::subclass_to_superclass(table.id_of(name), table));
  };
  c.expect(super_of("stairs") == "manmade", "stairs -> manmade");
  c.expect(super_of("gravel") == "terrain", "gravel -> terrain");
  // Every shipped row is reproduced by the table.
  std::size_t rows = 0, matched = 0;
  for (const auto& line : read_lines(paths.data / "subclasses.tsv")) {
    if (line[0] == '#') continue;
    const auto tab = line.find('\t');
    ++rows;
    matched += tab != std::string::npos && super_of(line.substr(0, tab)) == line.substr(tab + 1);
  }
  c.note(std::to_string(matched) + "/" + std::to_string(rows) + " shipped subclass rows");
  c.expect(rows > 0 && matched == rows, "shipped subclass rows");

  // Rebuild each class embedding from the shipped template file by plain
  // substitution and compare with the default table.
  const auto templates = read_lines(paths.data / "templates.txt");
  c.expect(templates.size() == 14, "template count");
  c.expect(templates == vocab::default_templates(), "built-in templates differ from the shipped file");
  const auto provider = vocab::EmbeddingProvider::pseudo(cfg.vocab.dim, cfg.vocab.seed);
  double worst = 0.0;
  for (const auto& entry : table.entries) {
    std::vector<double> mean(table.dim(), 0.0);
    for (const auto& t : templates) {
      std::string prompt = t;
      prompt.replace(prompt.find("{}"), 2, entry.name);
      const auto v = provider.embed_prompt(prompt);
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += v[k];
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < mean.size(); ++k) worst = std::max(worst, std::abs(mean[k] / norm - entry.embedding[k]));
  }
  c.note("14 templates, max embedding deviation " + fmt(worst, 3));
  c.expect(worst < kTemplateTol, "default table does not use the shipped templates");
  return c;
}

// ---------------------------------------------------------------- 9

Checks census_suite() {
  Checks c;
  const auto cfg = config::RunConfig::defaults();
  const auto table = pipeline::make_table(cfg);
  const auto depth = pipeline::make_depth_model(cfg);
  const auto model = pipeline::make_occ_model(cfg, table);
  const auto census = trainer::pipeline_census(depth, *model);
  std::cout << trainer::format_census(census);
  c.note("trainable " + std::to_string(census.trainable) + "/" + std::to_string(census.total) + " = " +
         fmt(100.0 * census.fraction(), 4) + "%");
  c.expect(census.fraction() < kCensusMax, "trainable fraction");
  return c;
}

// ---------------------------------------------------------------- 10

Checks determinism_suite(const Paths& paths) {
  Checks c;
  // Default world and networks with short schedules.
  auto cfg = config::load_config((paths.configs / "default.ini").string());
  cfg.stage1.train.steps = 20;
  cfg.stage2.train.steps = 10;
  const fs::path dir = paths.work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg_path = (dir / "run.ini").string();
  {
    std::ofstream out(cfg_path);
    out << config::serialize(cfg);
  }
  const std::vector<std::vector<std::string>> commands = {
      {"synth"}, {"pretrain-depth"}, {"train-occ"}, {"eval"}, {"retrieve"}, {"export", "--format", "csv"},
      {"export", "--format", "ply"}};
  for (const char* run : {"a", "b"}) {
    for (auto args : commands) {
      args.insert(args.end(), {"--config", cfg_path, "--out", (dir / run).string()});
      std::ostringstream out, err;
      const int code = cli::run(args, out, err);
      c.expect(code == cli::kExitOk, std::string(run) + " " + args[0] + ": " + err.str());
      if (code != cli::kExitOk) return c;
    }
  }
  std::size_t files = 0, same = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "a");
    ++files;
    const bool eq = fs::exists(dir / "b" / rel) && slurp(entry.path()) == slurp(dir / "b" / rel);
    same += eq;
    c.expect(eq, rel.string());
  }
  for (const char* f : {"depth.olk", "occ.olk", "iou.csv", "retrieval.csv", "census.txt", "occupancy.csv",
                        "occupancy.ply", "pred_classes.ovx"}) {
    c.expect(fs::exists(dir / "a" / f), std::string("missing ") + f);
  }
  c.note(std::to_string(same) + "/" + std::to_string(files) + " artifacts byte-identical");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::vector<int> only;
  Paths paths{fs::path(OVOCC_SOURCE_DIR) / "configs", fs::path(OVOCC_SOURCE_DIR) / "data",
              fs::temp_directory_path() / "ovocc_acceptance"};
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work", paths.work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Checks()>>> criteria = {
      {"bin similarity suite", bin_suite},
      {"gradient suite", gradient_suite},
      {"lift-splat oracle", lift_suite},
      {"adapter contracts", [&] { return adapter_suite(paths); }},
      {"class-balanced alignment loss", reweight_suite},
      {"end-to-end desk-scale run", end_to_end_suite},
      {"retrieval suite", retrieval_suite},
      {"protocol suite", [&] { return protocol_suite(paths); }},
      {"parameter census", census_suite},
      {"determinism", [&] { return determinism_suite(paths); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const auto t0 = Clock::now();
    Checks result;
    try {
      result = criteria[i].second();
    } catch (const std::exception& e) {
      result.expect(false, std::string("exception: ") + e.what());
    }
    failed += !result.ok();
    std::printf("%s %2d %s: %s (%.2f s)\n", result.ok() ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                result.summary().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
