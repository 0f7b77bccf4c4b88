#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "ovocc/binary_io.hpp"
#include "ovocc/cli.hpp"
#include "ovocc/config.hpp"
#include "ovocc/error.hpp"
#include "ovocc/pipeline.hpp"

using namespace ovocc;
namespace fs = std::filesystem;

namespace {

const char* kMini = R"([grid]
dims = 12 12 4
range_min = -2.4 -2.4 0
range_max = 2.4 2.4 1.6

[cameras]
count = 2
center = 0 0 0.9
image_height = 16
image_width = 44
pitch_deg = 14

[bins]
count = 8
first_center = 0.5

[vit]
patch = 4
head_dim = 4
layers = 4
mlp_ratio = 2
inject_after = 1 2
bias_layers = 1
head_bias_dim = 2

[hsa]
channels = 4
head_hidden = 6
supp_channels = 3
feature_channels = 8
fuse_hidden = 5
blocks = 1

[train.stage1]
steps = 4
hidden = 8
downsample = 2

[train.stage2]
steps = 3
trunk_width = 4
bin_hidden = 4
sa_hidden = 5

[vocab]
dim = 8

[scene]
ground_height = 0.4
clear_radius = 0.8
roster = car: 0.03 2 1 1 3 2 2; tree: 0.02 1 1 2 1 1 3
boxes = building: 1.2 -0.8 0 2 0.4 1.2

[eval]
)";

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ovocc_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write_config(const fs::path& dir, const std::string& text, const std::string& name = "run.ini") {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string without_section(const std::string& text, const std::string& section) {
  std::istringstream is(text);
  std::ostringstream os;
  bool skip = false;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line[0] == '[') skip = line == "[" + section + "]";
    if (!skip) os << line << '\n';
  }
  return os.str();
}

std::string with_key(const std::string& text, const std::string& section, const std::string& line) {
  std::string s = text;
  const std::string header = "[" + section + "]\n";
  s.insert(s.find(header) + header.size(), line + "\n");
  return s;
}

std::string replaced(const std::string& text, const std::string& from, const std::string& to) {
  std::string s = text;
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

void check_config_error(const std::string& text, const std::string& fragment) {
  try {
    config::parse_config(text);
    FAIL("expected ConfigError mentioning " << fragment);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, std::string(e.what()));
  }
}

}  // namespace

TEST_CASE("shipped default config equals the built-in defaults") {
  const auto cfg = config::load_config(std::string(OVOCC_SOURCE_DIR) + "/configs/default.ini");
  CHECK(cfg == config::RunConfig::defaults());
  CHECK(cfg.stage2.train.optimizer == OptimizerKind::kAdam);
  CHECK(cfg.vit.image_h == 64);
  CHECK(cfg.vit.image_w == 176);
  CHECK(cfg.stage2.train.hsa == cfg.hsa.enabled);
}

TEST_CASE("config round trip: parse, serialize, parse") {
  const auto defaults = config::RunConfig::defaults();
  CHECK(config::parse_config(config::serialize(defaults)) == defaults);

  // Non-default values in every kind of field, including an explicit rig.
  auto rig = config::parse_config(kMini).rig();
  std::string text = kMini;
  text = with_key(text, "cameras", "layout = explicit");
  std::ostringstream cams;
  cams << std::setprecision(17);
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const auto& c = rig.cameras[i];
    cams << "cam" << i << " = " << c.fx() << ' ' << c.fy() << ' ' << c.cx() << ' ' << c.cy();
    for (int r = 0; r < 9; ++r) cams << ' ' << c.rotation(r / 3, r % 3);
    for (int k = 0; k < 3; ++k) cams << ' ' << c.translation[k];
    cams << " 16 44";
    text = with_key(text, "cameras", cams.str());
    cams.str("");
  }
  text = with_key(text, "train.stage2", "seen_superclasses = car, vegetation");
  text = with_key(text, "eval", "candidates = car, tree, road");
  text = with_key(text, "eval", "tau = 0.35");
  text = with_key(text, "vocab", "templates = prompts/t.txt");
  const auto a = config::parse_config(text, "/some/dir");
  CHECK(a.cameras.layout == config::CameraSection::Layout::kExplicit);
  CHECK(a.rig().size() == 2);
  CHECK(a.stage2.train.seen_superclasses == std::vector<std::string>{"car", "vegetation"});
  CHECK(a.scene.boxes.size() == 1);
  CHECK(a.scene.roster.size() == 2);
  const auto b = config::parse_config(config::serialize(a), "/some/dir");
  CHECK(a == b);
  CHECK(config::serialize(a) == config::serialize(b));
  CHECK_FALSE(a == config::parse_config(kMini));
}

TEST_CASE("config rejects unknown, missing and malformed entries") {
  check_config_error(without_section(kMini, "grid"), "missing section [grid]");
  check_config_error(without_section(kMini, "train.stage2"), "missing section [train.stage2]");
  check_config_error(with_key(kMini, "vit", "depth = 3"), "unknown key 'depth' in section [vit]");
  check_config_error(std::string(kMini) + "[extra]\n", "unknown section [extra]");
  check_config_error(replaced(kMini, "steps = 4", "steps = ten"), "train.stage1.steps");
  check_config_error(replaced(kMini, "steps = 4", "steps = 4 ; comment"), "train.stage1.steps");
  check_config_error(with_key(kMini, "hsa", "enabled = yes"), "hsa.enabled");
  check_config_error(with_key(kMini, "train.stage2", "optimizer = lbfgs"), "optimizer");
  check_config_error(replaced(kMini, "downsample = 2", "downsample = 4"), "downsample");
  check_config_error(with_key(kMini, "eval", "tau = 1"), "eval.tau");
  check_config_error(with_key(kMini, "train.stage1", "learning_rate = 0"), "learning rate");
  check_config_error(with_key(kMini, "cameras", "cam0 = 1 2 3"), "cam0");
  check_config_error(replaced(kMini, "dims = 12 12 4", "dims = 12 12"), "grid.dims");
  check_config_error(replaced(kMini, "roster = car:", "roster = car"), "name:");
  check_config_error(std::string("steps = 3\n") + kMini, "outside any section");
  check_config_error(with_key(kMini, "vit", "patch = 8"), "duplicate key");
}

TEST_CASE("relative paths resolve against the config directory") {
  const fs::path dir = fresh_dir("paths");
  std::ofstream(dir / "t.txt") << "a photo of a {}.\n";
  const auto path = write_config(dir, with_key(kMini, "vocab", "templates = t.txt"));
  const auto cfg = config::load_config(path);
  CHECK(fs::path(cfg.resolve(cfg.vocab.templates)) == fs::absolute(dir / "t.txt").lexically_normal());
  CHECK(cfg.resolve("/abs/x") == "/abs/x");
  CHECK(pipeline::make_table(cfg).size() > 0);
}

TEST_CASE("export: CSV rows and PLY point count") {
  const auto cfg = config::parse_config(kMini);
  const auto table = pipeline::make_table(cfg);
  const fs::path dir = fresh_dir("export");
  std::vector<vocab::ClassId> classes(cfg.grid.count(), vocab::kFree);

  pipeline::export_occupancy((dir / "empty.csv").string(), cfg.grid, classes, table, "csv");
  CHECK(slurp(dir / "empty.csv") == "i,j,k,class_name\n");

  classes[0] = table.id_of("car");
  pipeline::export_occupancy((dir / "one.csv").string(), cfg.grid, classes, table, "csv");
  CHECK(slurp(dir / "one.csv") == "i,j,k,class_name\n0,0,0,car\n");

  classes[cfg.grid.flat({3, 4, 1})] = table.id_of("tree");
  classes[cfg.grid.flat({11, 11, 3})] = table.id_of("road");
  pipeline::export_occupancy((dir / "pts.ply").string(), cfg.grid, classes, table, "ply");
  std::ifstream in(dir / "pts.ply", std::ios::binary);
  std::size_t count = 0;
  for (std::string line; std::getline(in, line) && line != "end_header";) {
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
  }
  CHECK(count == 3);
  std::vector<geometry::Vec3> pts;
  for (std::size_t n = 0; n < count; ++n) {
    geometry::Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = binio::get_f32(in);
    pts.push_back(p);
    for (int ch = 0; ch < 3; ++ch) binio::get_u8(in);
  }
  CHECK(in.peek() == std::char_traits<char>::eof());
  const auto c0 = geometry::voxel_center(cfg.grid, {0, 0, 0});
  for (int a = 0; a < 3; ++a) CHECK(pts[0][a] == doctest::Approx(c0[a]).epsilon(1e-6));

  CHECK_THROWS_WITH_AS(pipeline::export_occupancy((dir / "x.obj").string(), cfg.grid, classes, table, "obj"),
                       doctest::Contains("obj"), Error);
  try {
    pipeline::export_occupancy((dir / "x.obj").string(), cfg.grid, classes, table, "obj");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnsupportedFormat);
  }
}

TEST_CASE("cli: exit codes") {
  const fs::path dir = fresh_dir("codes");
  const auto bad = write_config(dir, without_section(kMini, "grid"), "bad.ini");
  auto r = run({"synth", "--config", bad});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("[grid]") != std::string::npos);

  const auto good = write_config(dir, kMini);
  CHECK(run({"synth", "--config", (dir / "missing.ini").string()}).code == cli::kExitConfig);
  CHECK(run({"synth"}).code == cli::kExitConfig);
  CHECK(run({"frobnicate", "--config", good}).code == cli::kExitConfig);
  CHECK(run({}).code == cli::kExitConfig);
  CHECK(run({"--help"}).code == cli::kExitOk);
  // No stage-1 checkpoint yet.
  r = run({"train-occ", "--config", good, "--out", (dir / "out").string()});
  CHECK(r.code == cli::kExitRuntime);
  CHECK(r.err.find("pretrain-depth") != std::string::npos);
  CHECK(run({"export", "--format", "obj", "--config", good, "--out", (dir / "out").string()}).code ==
        cli::kExitConfig);
  CHECK(run({"retrieve", "--query", "unicorn", "--config", good, "--out", (dir / "out").string()}).code ==
        cli::kExitConfig);
}

TEST_CASE("cli: synth then eval against the ground truth file gives mIoU 1") {
  const fs::path dir = fresh_dir("identity");
  const auto cfg = write_config(dir, kMini);
  REQUIRE(run({"synth", "--config", cfg}).code == cli::kExitOk);
  for (const char* f : {"scene/gt_classes.ovx", "scene/gt_binary.ovx", "scene/visible.ovx", "scene/classes.ove",
                        "scene/views/cam0_depth.pgm", "scene/views/cam1_seg.ppm"}) {
    CHECK_MESSAGE(fs::exists(dir / "out" / f), f);
  }
  const auto r = run({"eval", "--config", cfg, "--pred", (dir / "out/scene/gt_classes.ovx").string()});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("mIoU 1.0000") != std::string::npos);
  // --seed changes the scene, so the old ground truth no longer scores 1.
  const auto r2 = run({"eval", "--config", cfg, "--seed", "5", "--pred", (dir / "out/scene/gt_classes.ovx").string()});
  CHECK(r2.code == cli::kExitOk);
  CHECK(r2.out.find("mIoU 1.0000") == std::string::npos);
}

TEST_CASE("cli: full pipeline writes every artifact and is byte-reproducible") {
  const fs::path dir = fresh_dir("pipeline");
  const auto cfg = write_config(dir, kMini);
  const std::vector<std::string> files = {
      "scene/gt_classes.ovx", "depth.olk",       "stage1_trace.csv",    "occ.olk",      "stage2_trace.csv",
      "census.txt",           "pred_classes.ovx", "pred_embeddings.ovx", "iou.csv",      "retrieval.csv",
      "ranked_building.csv",       "occupancy.csv",    "occupancy.ply"};
  for (const char* out : {"a", "b"}) {
    const std::string o = (dir / out).string();
    for (const std::vector<std::string>& cmd :
         {std::vector<std::string>{"synth"}, {"pretrain-depth"}, {"train-occ"}, {"eval"}, {"retrieve"},
          {"export", "--format", "csv"}, {"export", "--format", "ply"}}) {
      auto args = cmd;
      args.insert(args.end(), {"--config", cfg, "--out", o});
      const auto r = run(args);
      REQUIRE_MESSAGE(r.code == cli::kExitOk, cmd[0] << ": " << r.err);
    }
    for (const auto& f : files) CHECK_MESSAGE(fs::exists(dir / out / f), f);
  }
  for (const auto& f : files) CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  const std::string csv = slurp(dir / "a/occupancy.csv");
  CHECK(csv.rfind("i,j,k,class_name\n", 0) == 0);
}
