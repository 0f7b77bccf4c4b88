#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "ovocc/error.hpp"
#include "ovocc/gradcheck.hpp"
#include "ovocc/occupancy.hpp"

using namespace ovocc;
using namespace ovocc::occupancy;
using geometry::Vec3;
using vocab::ClassEmbeddingTable;

namespace {

constexpr double kTol = 1e-4;

ClassEmbeddingTable two_class_table() {
  ClassEmbeddingTable t;
  t.superclasses = {"a", "b"};
  t.entries = {{1, "x", 1, {1.0, 0.0}}, {2, "y", 2, {0.0, 1.0}}};
  return t;
}

ClassEmbeddingTable builtin_table() {
  return vocab::build_class_embeddings(vocab::SubclassMap::builtin().subclass_names(),
                                       vocab::EmbeddingProvider::pseudo(8, 5),
                                       vocab::default_templates());
}

// Field with hand-set per-voxel losses: target e_0, prediction at angle
// acos(1 - loss) in the (e_0, e_1) plane.
PseudoLabelField field_with_losses(const std::vector<std::pair<ClassId, double>>& items,
                                   Tensor& o_sa) {
  const std::size_t n = items.size();
  PseudoLabelField f{Tensor({n, 1, 1, 2}), std::vector<ClassId>(n), Mask(n, 1)};
  o_sa = Tensor({n, 1, 1, 2});
  for (std::size_t i = 0; i < n; ++i) {
    f.target_class[i] = items[i].first;
    f.target_embedding[i * 2] = 1.0;
    const double c = 1.0 - items[i].second;
    o_sa[i * 2] = c;
    o_sa[i * 2 + 1] = std::sqrt(1.0 - c * c);
  }
  return f;
}

}  // namespace

TEST_CASE("zero heads give one half and zero embeddings") {
  OccConfig cfg;
  cfg.in_channels = 3;
  cfg.trunk_width = 4;
  cfg.embed_dim = 5;
  OccHeads heads(cfg);
  CHECK(heads.bin_head_depth() == 2);
  CHECK(heads.sa_head_depth() == 3);
  for (auto& p : heads.params().params()) p.var.mutable_value().fill(0.0);
  Rng rng(1);
  const OccOutput out = occ_forward(ad::constant(rng.normal_tensor({4, 4, 2, 3}, 1.0)), heads);
  CHECK(out.o_bin.shape() == Shape{4, 4, 2});
  CHECK(out.o_sa.shape() == Shape{4, 4, 2, 5});
  for (double v : out.o_bin.value().vec()) CHECK(v == 0.5);
  for (double v : out.o_sa.value().vec()) CHECK(v == 0.0);
  CHECK_THROWS_AS(occ_forward(ad::constant(Tensor({4, 4, 2, 2})), heads), Error);
}

TEST_CASE("occupancy network gradients") {
  OccConfig cfg;
  cfg.in_channels = 3;
  cfg.trunk_width = 3;
  cfg.bin_hidden = 3;
  cfg.sa_hidden = 4;
  cfg.embed_dim = 4;
  OccHeads heads(cfg);
  Rng rng(2);
  ad::Var vol(rng.normal_tensor({4, 4, 2, 3}, 1.0), true);
  const Tensor wb = rng.normal_tensor({4, 4, 2}, 1.0), ws = rng.normal_tensor({4, 4, 2, 4}, 1.0);
  std::vector<ad::Var> leaves{vol};
  for (const auto& p : heads.params().params()) leaves.push_back(p.var);
  const auto res = ad::gradcheck(
      [&] {
        const OccOutput o = occ_forward(vol, heads);
        return ad::add(ad::sum(ad::mul(o.o_bin, ad::constant(wb))), ad::sum(ad::mul(o.o_sa, ad::constant(ws))));
      },
      leaves);
  CHECK(res.max_rel_error < kTol);
}

TEST_CASE("decode rule") {
  const ClassEmbeddingTable t = two_class_table();
  const Tensor sa({2, 2}, {0.2, 0.9, 0.2, 0.9});
  const auto ids = decode(Tensor({2}, {0.3, 0.9}), sa, t, 0.5);
  CHECK(ids == std::vector<ClassId>{0, 2});
  Tensor scaled = sa;
  for (double& v : scaled.vec()) v *= 3.0;
  CHECK(decode(Tensor({2}, {0.3, 0.9}), scaled, t, 0.5) == ids);
  CHECK(decode(Tensor({1}, {0.9}), Tensor({1, 2}, {0.5, 0.5}), t, 0.5)[0] == 1);
  CHECK(decode(Tensor({1}, {0.5}), Tensor({1, 2}, {0.0, 1.0}), t, 0.5)[0] == 2);
  CHECK_THROWS_AS(decode(Tensor({1}, 0.5), Tensor({1, 2}), t, 1.0), Error);
  CHECK_THROWS_AS(decode(Tensor({1}, 0.5), Tensor({1, 2}), t, 0.0), Error);

  Rng rng(3);
  const ClassEmbeddingTable big = builtin_table();
  const Tensor ob = rng.uniform_tensor({200}, 0.0, 1.0), os = rng.normal_tensor({200, 8}, 1.0);
  std::size_t prev = 201;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const auto d = decode(ob, os, big, tau);
    const std::size_t nonfree = std::count_if(d.begin(), d.end(), [](ClassId c) { return c != 0; });
    CHECK(nonfree <= prev);
    prev = nonfree;
  }
}

TEST_CASE("pseudo-label assignment") {
  const ClassEmbeddingTable t = builtin_table();
  const auto grid = geometry::VoxelGridSpec::make({4, 1, 1}, Vec3(1.0, -0.5, -0.5), Vec3(5.0, 0.5, 0.5));
  geometry::CameraRig rig;
  rig.cameras.push_back(geometry::Camera::from_params(2.0, 2.0, 2.0, 2.0, geometry::look_rotation(0, 0),
                                                      Vec3::Zero(), {4, 4}));
  rig.cameras.push_back(geometry::Camera::from_params(2.0, 2.0, 2.0, 2.0, geometry::look_rotation(M_PI, 0),
                                                      Vec3::Zero(), {4, 4}));
  SegMaps seg(2, std::vector<ClassId>(16, t.id_of("tree")));
  seg[1].assign(16, t.id_of("car"));
  const PseudoLabelField f = assign_pseudo_labels(grid, rig, seg, t);
  for (std::size_t v = 0; v < 4; ++v) {
    CHECK(f.valid[v] == 1);
    CHECK(f.target_class[v] == t.id_of("tree"));
    for (std::size_t k = 0; k < 8; ++k) CHECK(f.target_embedding[v * 8 + k] == t.entry(f.target_class[v]).embedding[k]);
  }

  // Behind every camera.
  geometry::CameraRig front;
  front.cameras = {rig.cameras[1]};
  SegMaps one(1, std::vector<ClassId>(16, t.id_of("tree")));
  const PseudoLabelField none = assign_pseudo_labels(grid, front, one, t);
  for (auto v : none.valid) CHECK(v == 0);

  // Superclass restriction with fallback.
  SegMaps cars(2, std::vector<ClassId>(16, t.id_of("car")));
  std::vector<ClassId> sup(4, 0);
  sup[1] = t.superclass_id_of("vegetation");
  sup[2] = t.superclass_id_of("car");
  const PseudoLabelField r = assign_pseudo_labels(grid, rig, cars, t, &sup);
  CHECK(t.entry(r.target_class[1]).name == "vegetation");
  CHECK(r.target_class[2] == t.id_of("car"));
  CHECK(r.target_class[0] == t.id_of("car"));
  SegMaps bushes(2, std::vector<ClassId>(16, t.id_of("bushes")));
  CHECK(assign_pseudo_labels(grid, rig, bushes, t, &sup).target_class[1] == t.id_of("bushes"));
}

TEST_CASE("class-reweighted alignment loss") {
  Tensor o;
  const PseudoLabelField f = field_with_losses({{1, 0.2}, {1, 0.2}, {1, 0.2}, {2, 0.6}}, o);
  CHECK(reweighted_alignment_loss(ad::constant(o), f).value().item() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(reweighted_alignment_loss(ad::constant(o), f, nullptr, false).value().item() ==
        doctest::Approx(0.3).epsilon(1e-12));

  // Duplicating every class-1 voxel leaves the loss unchanged.
  Tensor o2;
  const PseudoLabelField f2 =
      field_with_losses({{1, 0.2}, {1, 0.2}, {1, 0.2}, {2, 0.6}, {1, 0.2}, {1, 0.2}, {1, 0.2}}, o2);
  CHECK(reweighted_alignment_loss(ad::constant(o2), f2).value().item() ==
        reweighted_alignment_loss(ad::constant(o), f).value().item());

  // One voxel per class: equal to the plain mean.
  Tensor o3;
  const PseudoLabelField f3 = field_with_losses({{1, 0.1}, {2, 0.5}, {3, 0.3}}, o3);
  CHECK(reweighted_alignment_loss(ad::constant(o3), f3).value().item() ==
        doctest::Approx(reweighted_alignment_loss(ad::constant(o3), f3, nullptr, false).value().item()).epsilon(1e-15));

  // Identical embeddings give zero.
  CHECK(reweighted_alignment_loss(ad::constant(f.target_embedding), f).value().item() == doctest::Approx(0.0));

  Mask none(4, 0);
  CHECK_THROWS_AS(reweighted_alignment_loss(ad::constant(o), f, &none), Error);

  Rng rng(4);
  PseudoLabelField g{rng.normal_tensor({3, 2, 1, 4}, 1.0), {1, 1, 2, 3, 1, 2}, Mask{1, 1, 1, 0, 1, 1}};
  ad::Var v(rng.normal_tensor({3, 2, 1, 4}, 1.0), true);
  Mask m{1, 1, 1, 1, 0, 1};
  for (bool rw : {true, false}) {
    CHECK(ad::gradcheck([&] { return reweighted_alignment_loss(v, g, &m, rw); }, {v}).max_rel_error < kTol);
  }
}

TEST_CASE("binary occupancy loss") {
  const Mask gt{1, 0, 1, 0}, vis{1, 1, 1, 0};
  CHECK(binary_occ_loss(ad::constant(Tensor({4}, 0.5)), gt, vis).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(binary_occ_loss(ad::constant(Tensor({4}, {1.0, 0.0, 1.0, 0.7})), gt, vis).value().item() < 1e-6);
  CHECK_THROWS_AS(binary_occ_loss(ad::constant(Tensor({4}, 0.5)), gt, Mask(4, 0)), Error);
  Rng rng(5);
  ad::Var p(rng.uniform_tensor({4}, 0.1, 0.9), true);
  CHECK(ad::gradcheck([&] { return binary_occ_loss(p, gt, vis); }, {p}).max_rel_error < kTol);
}

TEST_CASE("stage-2 weighting") {
  const ad::Var a = ad::constant(Tensor::scalar(0.1)), b = ad::constant(Tensor::scalar(0.4));
  CHECK(stage2_loss(a, b, {1, 0}).value().item() == 0.1);
  CHECK(stage2_loss(a, b, {0, 1}).value().item() == 0.4);
  CHECK(stage2_loss(a, b, {2, 1}).value().item() == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("OVX1 round trip") {
  const auto grid = geometry::VoxelGridSpec::make({3, 2, 2}, Vec3(-1, -1, 0), Vec3(0.5, 0, 0.8));
  const std::string path = (std::filesystem::temp_directory_path() / "ovocc_test.ovx").string();
  std::vector<ClassId> cls(12);
  for (std::size_t i = 0; i < 12; ++i) cls[i] = ClassId(i * 3);
  write_ovx(path, ovx_classes(grid, cls));
  OvxGrid back = read_ovx(path);
  CHECK(back.kind == OvxKind::kClass);
  CHECK(back.classes == cls);
  CHECK(back.grid == grid);
  Mask m{1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0};
  write_ovx(path, ovx_binary(grid, m));
  CHECK(read_ovx(path).binary == m);
  Tensor emb({3, 2, 2, 3});
  for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = 0.25 * double(i);
  write_ovx(path, ovx_embeddings(grid, emb));
  CHECK(read_ovx(path).embeddings == emb);
  CHECK_THROWS_AS(write_ovx(path, ovx_classes(grid, {1, 2})), Error);
  std::filesystem::remove(path);
}
