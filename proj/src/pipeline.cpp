#include "ovocc/pipeline.hpp"

#include <fstream>
#include <set>

#include "ovocc/binary_io.hpp"
#include "ovocc/random.hpp"

namespace ovocc::pipeline {

namespace {

vocab::ClassId known_class(const vocab::ClassEmbeddingTable& table, const std::string& name,
                           const std::string& where) {
  const auto id = table.find(name);
  if (!id) throw Error(ErrorCode::kConfig, where + ": class '" + name + "' is not in the vocabulary");
  return *id;
}

}  // namespace

vocab::ClassEmbeddingTable make_table(const config::RunConfig& cfg) {
  const auto& v = cfg.vocab;
  const vocab::SubclassMap map =
      v.subclass_map.empty() ? vocab::SubclassMap::builtin() : vocab::SubclassMap::load(cfg.resolve(v.subclass_map));
  const auto templates = v.templates.empty() ? vocab::default_templates() : vocab::load_templates(cfg.resolve(v.templates));
  const auto provider = v.embeddings.empty() ? vocab::EmbeddingProvider::pseudo(v.dim, v.seed)
                                             : vocab::EmbeddingProvider::from_file(cfg.resolve(v.embeddings));
  const auto names = v.classes.empty() ? map.subclass_names() : v.classes;
  auto table = vocab::build_class_embeddings(names, provider, templates, map, v.strict);
  for (const auto& s : cfg.stage2.train.seen_superclasses) {
    bool found = false;
    for (const auto& name : table.superclasses) found = found || name == s;
    if (!found) throw Error(ErrorCode::kConfig, "train.stage2.seen_superclasses: unknown superclass '" + s + "'");
  }
  table.set_seen_superclasses(cfg.stage2.train.seen_superclasses);
  return table;
}

synthworld::SceneSpec make_scene_spec(const config::RunConfig& cfg, const vocab::ClassEmbeddingTable& table) {
  const auto& s = cfg.scene;
  synthworld::SceneSpec spec;
  spec.seed = s.seed;
  spec.ground_height = s.ground_height;
  spec.ground_class = s.ground_class.empty() ? vocab::kFree : known_class(table, s.ground_class, "scene.ground_class");
  spec.clear_radius = s.clear_radius;
  spec.max_attempts = s.max_attempts;
  for (const auto& r : s.roster) {
    spec.roster.push_back({known_class(table, r.name, "scene.roster"), r.share, r.size_min, r.size_max});
  }
  for (const auto& b : s.boxes) spec.boxes.push_back({b.min, b.max, known_class(table, b.name, "scene.boxes")});
  return spec;
}

synthworld::RenderOptions make_render_options(const config::RunConfig& cfg,
                                              const vocab::ClassEmbeddingTable& table) {
  synthworld::RenderOptions opts;
  opts.exact = cfg.scene.exact_render;
  opts.step_fraction = cfg.scene.step_fraction;
  opts.label_noise = cfg.scene.label_noise;
  opts.noise_seed = cfg.scene.noise_seed;
  for (const auto& n : cfg.scene.noise_classes) opts.noise_classes.push_back(known_class(table, n, "scene.noise_classes"));
  return opts;
}

trainer::SceneData make_scene(const config::RunConfig& cfg, const vocab::ClassEmbeddingTable& table) {
  auto world = synthworld::generate_scene(make_scene_spec(cfg, table), cfg.grid, table);
  return trainer::prepare_scene(std::move(world), cfg.rig(), table, cfg.stage1.model.downsample,
                                make_render_options(cfg, table));
}

depthbin::DepthModel make_depth_model(const config::RunConfig& cfg) { return depthbin::DepthModel(cfg.stage1.model); }

std::unique_ptr<trainer::OccModel> make_occ_model(const config::RunConfig& cfg,
                                                  const vocab::ClassEmbeddingTable& table) {
  occupancy::OccConfig occ = cfg.stage2.model;
  occ.embed_dim = table.dim();
  return std::make_unique<trainer::OccModel>(cfg.vit, cfg.hsa, occ);
}

std::vector<vocab::ClassId> candidate_ids(const config::RunConfig& cfg, const vocab::ClassEmbeddingTable& table) {
  std::vector<vocab::ClassId> ids;
  for (const auto& n : cfg.eval.candidates) ids.push_back(known_class(table, n, "eval.candidates"));
  return ids;
}

std::vector<std::string> query_names(const config::RunConfig& cfg, const synthworld::World& world,
                                     const vocab::ClassEmbeddingTable& table) {
  if (!cfg.eval.queries.empty()) {
    for (const auto& n : cfg.eval.queries) known_class(table, n, "eval.queries");
    return cfg.eval.queries;
  }
  std::set<vocab::ClassId> present(world.classes.begin(), world.classes.end());
  present.erase(vocab::kFree);
  std::vector<std::string> names;
  for (auto id : present) names.push_back(table.entry(id).name);
  return names;
}

RetrievalSet retrieval_set(const Tensor& o_sa, const synthworld::World& world, const occupancy::Mask& visible,
                           const vocab::ClassEmbeddingTable& table, const std::vector<std::string>& queries) {
  const std::size_t e = o_sa.last_dim();
  if (o_sa.rows() != world.classes.size() || visible.size() != world.classes.size()) {
    throw Error(ErrorCode::kShapeMismatch, "retrieval: embeddings, world and visible mask disagree");
  }
  RetrievalSet set;
  for (std::size_t f = 0; f < world.classes.size(); ++f) {
    if (world.classes[f] != vocab::kFree) set.voxels.push_back(f);
  }
  set.points = Tensor({set.voxels.size(), e});
  for (std::size_t p = 0; p < set.voxels.size(); ++p) {
    std::copy_n(o_sa.ptr() + set.voxels[p] * e, e, set.points.ptr() + p * e);
    set.visible.push_back(visible[set.voxels[p]]);
  }
  for (const auto& name : queries) {
    const auto id = table.id_of(name);
    set.queries.push_back({name, table.entry(id).embedding});
    const auto super = vocab::subclass_to_superclass(id, table);
    std::vector<std::uint8_t> rel(set.voxels.size());
    for (std::size_t p = 0; p < set.voxels.size(); ++p) {
      rel[p] = vocab::subclass_to_superclass(world.classes[set.voxels[p]], table) == super;
    }
    set.relevance.push_back(std::move(rel));
  }
  return set;
}

Tensor shuffle_points(const Tensor& points, std::uint64_t seed) {
  const std::size_t n = points.rows(), e = points.last_dim();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Tensor out(points.shape());
  for (std::size_t i = 0; i < n; ++i) std::copy_n(points.ptr() + order[i] * e, e, out.ptr() + i * e);
  return out;
}

void export_occupancy(const std::string& path, const geometry::VoxelGridSpec& grid,
                      const std::vector<vocab::ClassId>& classes, const vocab::ClassEmbeddingTable& table,
                      const std::string& format) {
  if (format != "csv" && format != "ply") {
    throw Error(ErrorCode::kUnsupportedFormat, "export format '" + format + "' (expected csv or ply)");
  }
  if (classes.size() != grid.count()) {
    throw Error(ErrorCode::kShapeMismatch, "export: " + std::to_string(classes.size()) + " classes for " +
                                               std::to_string(grid.count()) + " voxels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  std::vector<std::size_t> occupied;
  for (std::size_t f = 0; f < classes.size(); ++f) {
    if (classes[f] != vocab::kFree) occupied.push_back(f);
  }
  if (format == "csv") {
    out << "i,j,k,class_name\n";
    for (auto f : occupied) {
      const auto v = grid.unflat(f);
      out << v.i << ',' << v.j << ',' << v.k << ',' << table.entry(classes[f]).name << '\n';
    }
  } else {
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << occupied.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (auto f : occupied) {
      const geometry::Vec3 c = geometry::voxel_center(grid, grid.unflat(f));
      for (int a = 0; a < 3; ++a) binio::put_f32(out, static_cast<float>(c[a]));
      for (auto ch : synthworld::class_color(classes[f], table)) binio::put_u8(out, ch);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

}  // namespace ovocc::pipeline
