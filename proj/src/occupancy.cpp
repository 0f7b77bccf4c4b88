#include "ovocc/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ovocc/binary_io.hpp"
#include "ovocc/error.hpp"

namespace ovocc::occupancy {

using ad::Var;

namespace {

constexpr double kNormEps = 1e-8;
constexpr double kLogFloor = 1e-12;

}  // namespace

OccHeads::OccHeads(const OccConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.seed);
  const std::size_t w = cfg.trunk_width;
  in_proj_ = make_dense(params_, "occ.trunk.in", "occ.trunk", cfg.in_channels, w, rng, true);
  for (std::size_t b = 0; b < cfg.trunk_blocks; ++b) {
    const std::string n = "occ.trunk.block" + std::to_string(b);
    const double fan = 27.0 * static_cast<double>(w);
    Block blk;
    blk.w1 = params_.add(n + ".conv1.weight", "occ.trunk", rng.normal_tensor({3, 3, 3, w, w}, 1.0 / std::sqrt(fan)), true);
    blk.b1 = params_.add(n + ".conv1.bias", "occ.trunk", Tensor({w}), true);
    blk.w2 = params_.add(n + ".conv2.weight", "occ.trunk", rng.normal_tensor({3, 3, 3, w, w}, 0.5 / std::sqrt(fan)), true);
    blk.b2 = params_.add(n + ".conv2.bias", "occ.trunk", Tensor({w}), true);
    blocks_.push_back(blk);
  }
  bin_.push_back(make_dense(params_, "occ.bin.l0", "occ.bin_head", w, cfg.bin_hidden, rng, true));
  bin_.push_back(make_dense(params_, "occ.bin.l1", "occ.bin_head", cfg.bin_hidden, 1, rng, true));
  sa_.push_back(make_dense(params_, "occ.sa.l0", "occ.sa_head", w, cfg.sa_hidden, rng, true));
  sa_.push_back(make_dense(params_, "occ.sa.l1", "occ.sa_head", cfg.sa_hidden, cfg.sa_hidden, rng, true));
  sa_.push_back(make_dense(params_, "occ.sa.l2", "occ.sa_head", cfg.sa_hidden, cfg.embed_dim, rng, true));
}

OccOutput occ_forward(const Var& volume, const OccHeads& heads) {
  const Shape& s = volume.shape();
  if (s.size() != 4 || s[3] != heads.cfg_.in_channels) {
    throw Error(ErrorCode::kShapeMismatch, "occ_forward: volume " + shape_str(s) + ", expected " +
                                               std::to_string(heads.cfg_.in_channels) + " channels");
  }
  Var x = ad::silu(heads.in_proj_(volume));
  for (const auto& b : heads.blocks_) {
    x = ad::add(x, ad::conv3d(ad::silu(ad::conv3d(x, b.w1, b.b1)), b.w2, b.b2));
  }
  x = ad::silu(x);
  Var hb = heads.bin_[1](ad::silu(heads.bin_[0](x)));
  Var hs = heads.sa_[2](ad::silu(heads.sa_[1](ad::silu(heads.sa_[0](x)))));
  return {ad::sigmoid(ad::reshape(hb, {s[0], s[1], s[2]})), hs};
}

std::vector<ClassId> decode(const Tensor& o_bin, const Tensor& o_sa,
                            const vocab::ClassEmbeddingTable& table, double tau,
                            const std::vector<ClassId>& candidates) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "decode threshold must lie in (0, 1)");
  }
  const std::size_t e = table.dim();
  if (o_sa.size() != o_bin.size() * e) {
    throw Error(ErrorCode::kShapeMismatch, "decode: o_bin " + shape_str(o_bin.shape()) +
                                               ", o_sa " + shape_str(o_sa.shape()));
  }
  std::vector<ClassId> ids = candidates.empty() ? table.all_ids() : candidates;
  std::sort(ids.begin(), ids.end());
  std::vector<ClassId> out(o_bin.size(), vocab::kFree);
  for (std::size_t i = 0; i < o_bin.size(); ++i) {
    if (o_bin[i] >= tau) out[i] = vocab::classify_embedding(o_sa.ptr() + i * e, table, ids);
  }
  return out;
}

PseudoLabelField assign_pseudo_labels(const geometry::VoxelGridSpec& grid,
                                      const geometry::CameraRig& cams, const SegMaps& seg_maps,
                                      const vocab::ClassEmbeddingTable& table,
                                      const std::vector<ClassId>* superclass_gt) {
  if (seg_maps.size() != cams.size()) {
    throw Error(ErrorCode::kShapeMismatch, "pseudo labels: " + std::to_string(seg_maps.size()) +
                                               " seg maps for " + std::to_string(cams.size()) +
                                               " cameras");
  }
  for (std::size_t c = 0; c < cams.size(); ++c) {
    const auto& sz = cams.cameras[c].image_size;
    if (seg_maps[c].size() != sz.height * sz.width) {
      throw Error(ErrorCode::kShapeMismatch, "seg map " + std::to_string(c) + " size mismatch");
    }
  }
  if (superclass_gt && superclass_gt->size() != grid.count()) {
    throw Error(ErrorCode::kShapeMismatch, "superclass annotation size mismatch");
  }
  const std::size_t e = table.dim();
  PseudoLabelField f{Tensor({grid.dims[0], grid.dims[1], grid.dims[2], e}),
                     std::vector<ClassId>(grid.count(), vocab::kFree), Mask(grid.count(), 0)};
  for (std::size_t v = 0; v < grid.count(); ++v) {
    const geometry::Vec3 p = geometry::voxel_center(grid, grid.unflat(v));
    ClassId cls = vocab::kFree;
    bool found = false;
    for (std::size_t c = 0; c < cams.size() && !found; ++c) {
      const auto& cam = cams.cameras[c];
      const auto proj = geometry::project_point(p, cam);
      if (!proj) continue;
      const double u = proj->pixel.x(), r = proj->pixel.y();
      if (u < 0.0 || r < 0.0 || u >= double(cam.image_size.width) || r >= double(cam.image_size.height)) continue;
      found = true;
      cls = seg_maps[c][std::size_t(r) * cam.image_size.width + std::size_t(u)];
    }
    if (!found || cls == vocab::kFree) continue;
    if (superclass_gt && (*superclass_gt)[v] != vocab::kFree) {
      const ClassId sup = (*superclass_gt)[v];
      if (table.entry(cls).superclass_id != sup) {
        const auto subs = table.subclasses_of(sup);
        if (subs.empty()) continue;
        cls = subs.front();
      }
    }
    f.target_class[v] = cls;
    f.valid[v] = 1;
    const auto& emb = table.entry(cls).embedding;
    std::copy(emb.begin(), emb.end(), f.target_embedding.ptr() + v * e);
  }
  return f;
}

Var reweighted_alignment_loss(const Var& o_sa, const PseudoLabelField& pseudo, const Mask* mask,
                              bool reweight) {
  const Tensor& o = o_sa.value();
  if (!o.same_shape(pseudo.target_embedding)) {
    throw Error(ErrorCode::kShapeMismatch, "alignment loss: o_sa " + shape_str(o.shape()) +
                                               " vs targets " + shape_str(pseudo.target_embedding.shape()));
  }
  const std::size_t e = o.last_dim(), n = o.rows();
  if (mask && mask->size() != n) throw Error(ErrorCode::kShapeMismatch, "alignment loss: mask size");
  std::map<ClassId, std::size_t> counts;
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < n; ++i) {
    if (!pseudo.valid[i] || (mask && !(*mask)[i])) continue;
    used.push_back(i);
    ++counts[pseudo.target_class[i]];
  }
  if (used.empty()) throw Error(ErrorCode::kNoValidVoxels, "alignment loss: no supervised voxels");
  // Per-voxel weight: 1 / (N_j * |classes|) reweighted, 1 / N plain.
  std::vector<double> weight(used.size());
  for (std::size_t u = 0; u < used.size(); ++u) {
    weight[u] = reweight ? 1.0 / (double(counts[pseudo.target_class[used[u]]]) * double(counts.size()))
                         : 1.0 / double(used.size());
  }
  std::vector<double> norm_o(used.size()), norm_t(used.size()), cosv(used.size());
  // Per-class sums keep the reduction order fixed: voxels ascending within
  // classes, classes ascending.
  std::map<ClassId, double> class_sum;
  double total = 0.0;
  for (std::size_t u = 0; u < used.size(); ++u) {
    const double* a = o.ptr() + used[u] * e;
    const double* t = pseudo.target_embedding.ptr() + used[u] * e;
    double dot = 0.0, na = 0.0, nt = 0.0;
    for (std::size_t k = 0; k < e; ++k) {
      dot += a[k] * t[k];
      na += a[k] * a[k];
      nt += t[k] * t[k];
    }
    norm_o[u] = std::max(std::sqrt(na), kNormEps);
    norm_t[u] = std::max(std::sqrt(nt), kNormEps);
    cosv[u] = dot / (norm_o[u] * norm_t[u]);
    class_sum[pseudo.target_class[used[u]]] += 1.0 - cosv[u];
  }
  if (reweight) {
    for (const auto& [cls, s] : class_sum) total += s / double(counts[cls]);
    total /= double(counts.size());
  } else {
    for (const auto& [cls, s] : class_sum) total += s;
    total /= double(used.size());
  }
  auto on = o_sa.node();
  const Tensor targets = pseudo.target_embedding;
  return ad::make_op(Tensor::scalar(total), {o_sa},
                     [on, targets, used = std::move(used), weight = std::move(weight),
                      norm_o = std::move(norm_o), norm_t = std::move(norm_t),
                      cosv = std::move(cosv), e](ad::Node& self) {
                       Tensor g(on->value.shape());
                       const double up = self.grad[0];
                       for (std::size_t u = 0; u < used.size(); ++u) {
                         const double* a = on->value.ptr() + used[u] * e;
                         const double* t = targets.ptr() + used[u] * e;
                         double* gp = g.ptr() + used[u] * e;
                         const bool clamped = norm_o[u] <= kNormEps;
                         for (std::size_t k = 0; k < e; ++k) {
                           double dcos = t[k] / (norm_o[u] * norm_t[u]);
                           if (!clamped) dcos -= cosv[u] * a[k] / (norm_o[u] * norm_o[u]);
                           gp[k] = -up * weight[u] * dcos;
                         }
                       }
                       ad::accumulate(on, g);
                     });
}

Var binary_occ_loss(const Var& o_bin, const Mask& gt_bin, const Mask& visible) {
  const Tensor& p = o_bin.value();
  if (gt_bin.size() != p.size() || visible.size() != p.size()) {
    throw Error(ErrorCode::kShapeMismatch, "binary loss: prediction " + shape_str(p.shape()) +
                                               " vs " + std::to_string(gt_bin.size()) + " labels");
  }
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!visible[i]) continue;
    total += gt_bin[i] ? -std::log(std::max(p[i], kLogFloor)) : -std::log(std::max(1.0 - p[i], kLogFloor));
    count += 1.0;
  }
  if (count == 0.0) throw Error(ErrorCode::kEmptyVisibleSet, "binary loss: no visible voxels");
  auto pn = o_bin.node();
  return ad::make_op(Tensor::scalar(total / count), {o_bin},
                     [pn, gt_bin, visible, count](ad::Node& self) {
                       Tensor g(pn->value.shape());
                       const double up = self.grad[0] / count;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (!visible[i]) continue;
                         const double q = pn->value[i];
                         if (gt_bin[i]) {
                           if (q > kLogFloor) g[i] = -up / q;
                         } else if (1.0 - q > kLogFloor) {
                           g[i] = up / (1.0 - q);
                         }
                       }
                       ad::accumulate(pn, g);
                     });
}

OvxGrid ovx_classes(const geometry::VoxelGridSpec& grid, std::vector<ClassId> classes) {
  OvxGrid g;
  g.grid = grid;
  g.kind = OvxKind::kClass;
  g.classes = std::move(classes);
  return g;
}

OvxGrid ovx_binary(const geometry::VoxelGridSpec& grid, Mask mask) {
  OvxGrid g;
  g.grid = grid;
  g.kind = OvxKind::kBinary;
  g.binary = std::move(mask);
  return g;
}

OvxGrid ovx_embeddings(const geometry::VoxelGridSpec& grid, Tensor embeddings) {
  OvxGrid g;
  g.grid = grid;
  g.kind = OvxKind::kEmbedding;
  g.embeddings = std::move(embeddings);
  return g;
}

void write_ovx(const std::string& path, const OvxGrid& g) {
  const std::size_t n = g.grid.count();
  const bool ok = (g.kind == OvxKind::kClass && g.classes.size() == n) ||
                  (g.kind == OvxKind::kBinary && g.binary.size() == n) ||
                  (g.kind == OvxKind::kEmbedding && g.embeddings.rank() == 4 && g.embeddings.rows() == n);
  if (!ok) throw Error(ErrorCode::kShapeMismatch, "OVX1 payload does not match the grid");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  binio::put_magic(out, "OVX1");
  binio::put_u16(out, 1);
  for (std::size_t d : g.grid.dims) binio::put_u32(out, static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) binio::put_f64(out, g.grid.range_min[a]);
  for (int a = 0; a < 3; ++a) binio::put_f64(out, g.grid.range_max[a]);
  binio::put_u8(out, static_cast<std::uint8_t>(g.kind));
  switch (g.kind) {
    case OvxKind::kClass:
      for (ClassId c : g.classes) binio::put_u16(out, c);
      break;
    case OvxKind::kBinary:
      for (std::uint8_t b : g.binary) binio::put_u8(out, b ? 1 : 0);
      break;
    case OvxKind::kEmbedding:
      binio::put_u32(out, static_cast<std::uint32_t>(g.embeddings.last_dim()));
      for (double v : g.embeddings.vec()) binio::put_f32(out, static_cast<float>(v));
      break;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

OvxGrid read_ovx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  binio::expect_magic(in, "OVX1");
  if (binio::get_u16(in) != 1) throw Error(ErrorCode::kFormat, "unsupported OVX1 version");
  std::array<std::size_t, 3> dims{};
  for (auto& d : dims) d = binio::get_u32(in);
  geometry::Vec3 lo, hi;
  for (int a = 0; a < 3; ++a) lo[a] = binio::get_f64(in);
  for (int a = 0; a < 3; ++a) hi[a] = binio::get_f64(in);
  OvxGrid g;
  g.grid = geometry::VoxelGridSpec::make(dims, lo, hi);
  const std::uint8_t kind = binio::get_u8(in);
  const std::size_t n = g.grid.count();
  switch (kind) {
    case 0:
      g.kind = OvxKind::kClass;
      g.classes.resize(n);
      for (auto& c : g.classes) c = binio::get_u16(in);
      break;
    case 1:
      g.kind = OvxKind::kBinary;
      g.binary.resize(n);
      for (auto& b : g.binary) b = binio::get_u8(in);
      break;
    case 2: {
      g.kind = OvxKind::kEmbedding;
      const std::size_t e = binio::get_u32(in);
      g.embeddings = Tensor({dims[0], dims[1], dims[2], e});
      for (double& v : g.embeddings.vec()) v = binio::get_f32(in);
      break;
    }
    default:
      throw Error(ErrorCode::kFormat, "unknown OVX1 payload kind " + std::to_string(kind));
  }
  return g;
}

}  // namespace ovocc::occupancy
