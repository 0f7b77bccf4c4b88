#include "ovocc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>

#include "ovocc/eval.hpp"
#include "ovocc/lift.hpp"
#include "ovocc/pipeline.hpp"

namespace ovocc::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path, out_dir, query, format = "csv", pred;
  std::optional<std::uint64_t> seed;
};

// Loaded configuration plus everything derived from it before a command runs.
struct Setup {
  config::RunConfig cfg;
  vocab::ClassEmbeddingTable table;
  trainer::SceneData scene;
  fs::path out;
};

class ConfigFailure : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

Setup setup(const Options& o) {
  if (o.config_path.empty()) throw ConfigFailure("--config is required for this command");
  try {
    Setup s{config::load_config(o.config_path), {}, {}, {}};
    if (o.seed) s.cfg.scene.seed = *o.seed;
    s.table = pipeline::make_table(s.cfg);
    s.scene = pipeline::make_scene(s.cfg, s.table);
    s.out = o.out_dir.empty() ? s.cfg.base_dir / "out" : fs::path(o.out_dir);
    fs::create_directories(s.out);
    return s;
  } catch (const std::exception& e) {
    throw ConfigFailure(e.what());
  }
}

std::string path_in(const Setup& s, const std::string& name) { return (s.out / name).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  f << text;
}

struct Models {
  depthbin::DepthModel depth;
  std::unique_ptr<trainer::OccModel> occ;
};

depthbin::DepthModel load_depth(const Setup& s) {
  const std::string path = path_in(s, "depth.olk");
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, path + " not found; run pretrain-depth first");
  auto depth = pipeline::make_depth_model(s.cfg);
  trainer::load_checkpoint(path, depth.params());
  return depth;
}

Models load_models(const Setup& s) {
  Models m{load_depth(s), pipeline::make_occ_model(s.cfg, s.table)};
  const std::string path = path_in(s, "occ.olk");
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, path + " not found; run train-occ first");
  trainer::load_checkpoint(path, m.occ->params);
  return m;
}

trainer::Prediction predict(const Setup& s, const Models& m) {
  return trainer::predict(*m.occ, m.depth, s.scene, s.table, s.cfg.eval.tau, pipeline::candidate_ids(s.cfg, s.table));
}

std::vector<vocab::ClassId> read_pred_classes(const Setup& s, const std::string& path) {
  const auto g = occupancy::read_ovx(path);
  if (g.kind != occupancy::OvxKind::kClass) throw Error(ErrorCode::kFormat, path + " is not a class grid");
  if (!(g.grid == s.cfg.grid)) throw Error(ErrorCode::kShapeMismatch, path + " grid differs from [grid]");
  for (auto c : g.classes) {
    if (c != vocab::kFree && c > s.table.size()) {
      throw Error(ErrorCode::kUnknownClass, path + " holds class id " + std::to_string(c));
    }
  }
  return g.classes;
}

// Prediction from --pred when given, else from the trained checkpoints
// (also saved to the output directory).
std::vector<vocab::ClassId> decoded_classes(const Setup& s, const Options& o) {
  if (!o.pred.empty()) return read_pred_classes(s, o.pred);
  const Models m = load_models(s);
  auto p = predict(s, m);
  occupancy::write_ovx(path_in(s, "pred_classes.ovx"), occupancy::ovx_classes(s.cfg.grid, p.classes));
  occupancy::write_ovx(path_in(s, "pred_embeddings.ovx"), occupancy::ovx_embeddings(s.cfg.grid, p.o_sa));
  return std::move(p.classes);
}

int cmd_synth(const Setup& s, std::ostream& out) {
  const fs::path views = s.out / "scene" / "views";
  fs::create_directories(views);
  const auto& w = s.scene.world;
  occupancy::write_ovx(path_in(s, "scene/gt_classes.ovx"), occupancy::ovx_classes(s.cfg.grid, w.classes));
  occupancy::write_ovx(path_in(s, "scene/gt_binary.ovx"), occupancy::ovx_binary(s.cfg.grid, w.occupied));
  occupancy::write_ovx(path_in(s, "scene/visible.ovx"), occupancy::ovx_binary(s.cfg.grid, s.scene.visible));
  s.table.write_ove1(path_in(s, "scene/classes.ove"));
  for (std::size_t c = 0; c < s.scene.views.size(); ++c) {
    const std::string stem = (views / ("cam" + std::to_string(c))).string();
    synthworld::write_depth_pgm(stem + "_depth.pgm", s.scene.views[c]);
    synthworld::write_seg_ppm(stem + "_seg.ppm", s.scene.views[c], s.table);
  }
  std::map<vocab::ClassId, std::pair<std::size_t, std::size_t>> counts;
  for (std::size_t f = 0; f < w.classes.size(); ++f) {
    if (w.classes[f] == vocab::kFree) continue;
    auto& c = counts[w.classes[f]];
    ++c.first;
    c.second += s.scene.visible[f];
  }
  out << "class            voxels  visible\n";
  for (const auto& [id, c] : counts) {
    out << std::left << std::setw(16) << s.table.entry(id).name << std::right << std::setw(7) << c.first
        << std::setw(9) << c.second << '\n';
  }
  out << "wrote " << s.out.string() << "/scene\n";
  return kExitOk;
}

int cmd_pretrain(const Setup& s, std::ostream& out) {
  auto depth = pipeline::make_depth_model(s.cfg);
  const auto trace = trainer::train_stage1(depth, s.scene, s.cfg.stage1.train);
  trainer::write_checkpoint(path_in(s, "depth.olk"), depth.params());
  trainer::write_trace_csv(path_in(s, "stage1_trace.csv"), trace);
  const double first = *trace.front().l_pix, last = *trace.back().l_pix;
  out << std::fixed << std::setprecision(4) << "stage 1: " << s.cfg.stage1.train.steps << " steps, L_pix " << first
      << " -> " << last << " (" << std::setprecision(1) << 100.0 * (first - last) / first << "% drop)\n";
  return kExitOk;
}

int cmd_train_occ(const Setup& s, std::ostream& out) {
  const auto depth = load_depth(s);
  auto occ = pipeline::make_occ_model(s.cfg, s.table);
  const auto trace = trainer::train_stage2(*occ, depth, s.scene, s.table, s.cfg.stage2.train);
  trainer::write_checkpoint(path_in(s, "occ.olk"), occ->params);
  trainer::write_trace_csv(path_in(s, "stage2_trace.csv"), trace);
  const std::string census = trainer::format_census(trainer::pipeline_census(depth, *occ));
  write_text(path_in(s, "census.txt"), census);
  out << std::fixed << std::setprecision(4) << "stage 2: " << s.cfg.stage2.train.steps << " steps, L_bin "
      << *trace.front().l_bin << " -> " << *trace.back().l_bin << ", L_sa " << *trace.front().l_sa << " -> "
      << *trace.back().l_sa << '\n'
      << census;
  return kExitOk;
}

int cmd_eval(const Setup& s, const Options& o, std::ostream& out) {
  const auto pred = decoded_classes(s, o);
  const auto report = eval::miou(pred, s.scene.world.classes, s.scene.visible, s.table);
  eval::write_iou_csv(path_in(s, "iou.csv"), report, s.table);
  out << std::fixed << std::setprecision(4);
  for (const auto& [id, iou] : report.per_class_iou) {
    out << std::left << std::setw(16) << s.table.superclass_name(id) << std::right << iou << '\n';
  }
  out << "mIoU " << report.miou << '\n';
  return kExitOk;
}

std::string file_stem(std::string name) {
  for (char& ch : name) {
    if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
  }
  return name;
}

int cmd_retrieve(const Setup& s, const Options& o, std::ostream& out) {
  std::vector<std::string> names;
  if (!o.query.empty()) {
    if (!s.table.find(o.query)) throw ConfigFailure("--query: class '" + o.query + "' is not in the vocabulary");
    names = {o.query};
  } else {
    names = pipeline::query_names(s.cfg, s.scene.world, s.table);
  }
  const Models m = load_models(s);
  const auto p = predict(s, m);
  const auto set = pipeline::retrieval_set(p.o_sa, s.scene.world, s.scene.visible, s.table, names);
  const auto report = eval::retrieval_map(set.points, set.queries, set.relevance, set.visible);
  eval::write_retrieval_csv(path_in(s, "retrieval.csv"), report);
  const std::size_t e = set.points.last_dim();
  for (std::size_t q = 0; q < set.queries.size(); ++q) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < set.voxels.size(); ++i) {
      double score = 0.0;
      for (std::size_t k = 0; k < e; ++k) score += set.points.ptr()[i * e + k] * set.queries[q].embedding[k];
      ranked.emplace_back(score, i);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::ofstream f(path_in(s, "ranked_" + file_stem(set.queries[q].name) + ".csv"), std::ios::binary);
    if (!f) throw Error(ErrorCode::kIo, "cannot write ranked list");
    f << "rank,i,j,k,score,class_name,visible,relevant\n" << std::setprecision(17);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const std::size_t i = ranked[r].second;
      const auto v = s.cfg.grid.unflat(set.voxels[i]);
      f << r + 1 << ',' << v.i << ',' << v.j << ',' << v.k << ',' << ranked[r].first << ','
        << s.table.entry(s.scene.world.classes[set.voxels[i]]).name << ',' << int(set.visible[i]) << ','
        << int(set.relevance[q][i]) << '\n';
    }
  }
  out << std::fixed << std::setprecision(4);
  for (const auto& [name, ap] : report.ap_all) {
    out << std::left << std::setw(16) << name << std::right << " AP " << ap;
    if (report.ap_vis.count(name)) out << "  AP-vis " << report.ap_vis.at(name);
    out << '\n';
  }
  out << "mAP " << report.map_all << "  mAP-vis " << report.map_vis << '\n';
  return kExitOk;
}

int cmd_export(const Setup& s, const Options& o, std::ostream& out) {
  if (o.format != "csv" && o.format != "ply") {
    throw ConfigFailure("--format must be csv or ply, got '" + o.format + "'");
  }
  const auto classes = decoded_classes(s, o);
  const std::string path = path_in(s, "occupancy." + o.format);
  pipeline::export_occupancy(path, s.cfg.grid, classes, s.table, o.format);
  out << "wrote " << path << '\n';
  return kExitOk;
}

int cmd_bench(std::ostream& out) {
  const auto r = lift::bench_pool();
  out << "points,naive_points_per_sec,fast_points_per_sec,speedup,identical\n"
      << r.points << ',' << std::setprecision(6) << r.naive_points_per_sec() << ',' << r.fast_points_per_sec() << ','
      << r.speedup() << ',' << (r.identical ? "true" : "false") << '\n';
  return r.identical ? kExitOk : kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Open-vocabulary 3D occupancy on a synthetic ray-cast world", "ovocc"};
  Options o;
  bool bench_flag = false;
  std::uint64_t seed = 0;
  app.add_option("--config", o.config_path, "INI run configuration");
  app.add_option("--out", o.out_dir, "Output directory (default: <config dir>/out)");
  auto* seed_opt = app.add_option("--seed", seed, "Override [scene] seed");
  app.add_flag("--bench-pool", bench_flag, "Same as the bench-pool subcommand");
  auto sub = [&app](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->fallthrough();
    return c;
  };
  auto* synth = sub("synth", "Write ground-truth grids and rendered views");
  auto* pretrain = sub("pretrain-depth", "Stage 1: adapt the depth model");
  auto* train_occ = sub("train-occ", "Stage 2: train the side adaptor and occupancy heads");
  auto* evalc = sub("eval", "Visible-voxel IoU report");
  auto* retrieve = sub("retrieve", "Retrieval mAP and ranked voxel lists");
  auto* exportc = sub("export", "Decoded occupancy as CSV or PLY");
  auto* bench = sub("bench-pool", "Time fast voxel pooling against the naive scatter");
  evalc->add_option("--pred", o.pred, "Class grid (OVX1) to score instead of the model prediction");
  exportc->add_option("--pred", o.pred, "Class grid (OVX1) to export instead of the model prediction");
  retrieve->add_option("--query", o.query, "Class name (default: classes present in the scene)");
  exportc->add_option("--format", o.format, "csv or ply");
  app.require_subcommand(0, 1);

  std::vector<const char*> argv = {"ovocc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count()) o.seed = seed;

  try {
    if (bench_flag || bench->parsed()) return cmd_bench(out);
    if (app.get_subcommands().empty()) {
      err << app.help();
      return kExitConfig;
    }
    const Setup s = setup(o);
    if (synth->parsed()) return cmd_synth(s, out);
    if (pretrain->parsed()) return cmd_pretrain(s, out);
    if (train_occ->parsed()) return cmd_train_occ(s, out);
    if (evalc->parsed()) return cmd_eval(s, o, out);
    if (retrieve->parsed()) return cmd_retrieve(s, o, out);
    if (exportc->parsed()) return cmd_export(s, o, out);
  } catch (const ConfigFailure& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace ovocc::cli
