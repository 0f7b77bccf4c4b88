#include "ovocc/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ovocc/synthworld.hpp"

namespace ovocc::config {

namespace {

namespace pt = boost::property_tree;

[[noreturn]] void fail(const std::string& msg) { throw Error(ErrorCode::kConfig, msg); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

template <class T>
T parse_number(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    fail(what + ": cannot parse '" + text + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) fail(what + ": value must be finite");
  }
  return v;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt(std::size_t v) { return std::to_string(v); }

template <class T>
std::vector<T> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<T> out;
  for (const auto& w : words(text)) out.push_back(parse_number<T>(w, what));
  return out;
}

template <class T>
std::string fmt_list(const T* v, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + fmt(v[i]);
  return s;
}

Vec3 parse_vec3(const std::string& text, const std::string& what) {
  const auto v = parse_numbers<double>(text, what);
  if (v.size() != 3) fail(what + ": expected 3 numbers");
  return Vec3(v[0], v[1], v[2]);
}

std::string fmt_vec3(const Vec3& v) { return fmt_list(v.data(), 3); }

std::array<std::size_t, 3> parse_dims(const std::string& text, const std::string& what) {
  const auto v = parse_numbers<std::size_t>(text, what);
  if (v.size() != 3) fail(what + ": expected 3 integers");
  return {v[0], v[1], v[2]};
}

bool parse_bool(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t == "true") return true;
  if (t == "false") return false;
  fail(what + ": expected true or false, got '" + text + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::vector<std::string> parse_names(const std::string& text) {
  if (trim(text).empty()) return {};
  auto out = split(text, ',');
  for (const auto& n : out) {
    if (n.empty()) fail("empty name in list '" + text + "'");
  }
  return out;
}

std::string fmt_names(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

OptimizerKind parse_optimizer(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t == "sgd") return OptimizerKind::kSgd;
  if (t == "adam") return OptimizerKind::kAdam;
  fail(what + ": expected sgd or adam, got '" + text + "'");
}

std::string fmt_optimizer(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

// "name: numbers; name: numbers"
std::vector<std::pair<std::string, std::vector<double>>> parse_entries(const std::string& text,
                                                                       std::size_t arity,
                                                                       const std::string& what) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  if (trim(text).empty()) return out;
  for (const auto& entry : split(text, ';')) {
    if (entry.empty()) continue;
    const auto colon = entry.find(':');
    if (colon == std::string::npos) fail(what + ": entry '" + entry + "' lacks 'name:'");
    const std::string name = trim(entry.substr(0, colon));
    if (name.empty()) fail(what + ": entry '" + entry + "' has an empty name");
    auto nums = parse_numbers<double>(entry.substr(colon + 1), what);
    if (nums.size() != arity) {
      fail(what + ": entry '" + name + "' needs " + std::to_string(arity) + " numbers");
    }
    out.emplace_back(name, std::move(nums));
  }
  return out;
}

std::size_t as_size(double v, const std::string& what) {
  if (!(v >= 0.0) || v != std::floor(v)) fail(what + ": sizes must be non-negative integers");
  return static_cast<std::size_t>(v);
}

std::string fmt_camera(const geometry::Camera& c) {
  std::vector<double> v = {c.fx(), c.fy(), c.cx(), c.cy()};
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) v.push_back(c.rotation(r, k));
  }
  for (int k = 0; k < 3; ++k) v.push_back(c.translation[k]);
  return fmt_list(v.data(), v.size()) + " " + fmt(c.image_size.height) + " " + fmt(c.image_size.width);
}

geometry::Camera parse_camera(const std::string& text, const std::string& what) {
  const auto v = parse_numbers<double>(text, what);
  if (v.size() != 18) fail(what + ": expected fx fy cx cy, 9 rotation, 3 translation, height width");
  Mat3 r;
  for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = v[4 + i];
  const geometry::ImageSize size{as_size(v[16], what), as_size(v[17], what)};
  return geometry::Camera::from_params(v[0], v[1], v[2], v[3], r, Vec3(v[13], v[14], v[15]), size);
}

struct Key {
  std::string name;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// Every section's keys bound to the fields of `c`, in serialization order.
std::map<std::string, std::vector<Key>> bindings(RunConfig& c) {
  std::map<std::string, std::vector<Key>> b;
  auto size_key = [](const std::string& sec, const std::string& name, std::size_t& f) {
    return Key{name, [&f] { return fmt(f); },
               [&f, w = sec + "." + name](const std::string& s) { f = parse_number<std::size_t>(s, w); }};
  };
  auto seed_key = [](const std::string& sec, const std::string& name, std::uint64_t& f) {
    return Key{name, [&f] { return std::to_string(f); },
               [&f, w = sec + "." + name](const std::string& s) { f = parse_number<std::uint64_t>(s, w); }};
  };
  auto real_key = [](const std::string& sec, const std::string& name, double& f) {
    return Key{name, [&f] { return fmt(f); },
               [&f, w = sec + "." + name](const std::string& s) { f = parse_number<double>(s, w); }};
  };
  auto bool_key = [](const std::string& sec, const std::string& name, bool& f) {
    return Key{name, [&f] { return fmt_bool(f); },
               [&f, w = sec + "." + name](const std::string& s) { f = parse_bool(s, w); }};
  };
  auto text_key = [](const std::string& name, std::string& f) {
    return Key{name, [&f] { return f; }, [&f](const std::string& s) { f = trim(s); }};
  };
  auto names_key = [](const std::string& name, std::vector<std::string>& f) {
    return Key{name, [&f] { return fmt_names(f); }, [&f](const std::string& s) { f = parse_names(s); }};
  };
  auto vec3_key = [](const std::string& sec, const std::string& name, Vec3& f) {
    return Key{name, [&f] { return fmt_vec3(f); },
               [&f, w = sec + "." + name](const std::string& s) { f = parse_vec3(s, w); }};
  };
  auto optimizer_key = [](const std::string& sec, OptimizerKind& f) {
    return Key{"optimizer", [&f] { return fmt_optimizer(f); },
               [&f, w = sec + ".optimizer"](const std::string& s) { f = parse_optimizer(s, w); }};
  };

  auto& g = b["grid"];
  g.push_back({"dims", [&c] { return fmt_list(c.grid.dims.data(), 3); },
               [&c](const std::string& s) { c.grid.dims = parse_dims(s, "grid.dims"); }});
  g.push_back(vec3_key("grid", "range_min", c.grid.range_min));
  g.push_back(vec3_key("grid", "range_max", c.grid.range_max));

  auto& cam = b["cameras"];
  cam.push_back({"layout",
                 [&c] { return c.cameras.layout == CameraSection::Layout::kSurround ? "surround" : "explicit"; },
                 [&c](const std::string& s) {
                   const std::string t = trim(s);
                   if (t == "surround") c.cameras.layout = CameraSection::Layout::kSurround;
                   else if (t == "explicit") c.cameras.layout = CameraSection::Layout::kExplicit;
                   else fail("cameras.layout: expected surround or explicit, got '" + s + "'");
                 }});
  cam.push_back(size_key("cameras", "count", c.cameras.count));
  cam.push_back(vec3_key("cameras", "center", c.cameras.center));
  cam.push_back(size_key("cameras", "image_height", c.cameras.image_height));
  cam.push_back(size_key("cameras", "image_width", c.cameras.image_width));
  cam.push_back(real_key("cameras", "hfov_deg", c.cameras.hfov_deg));
  cam.push_back(real_key("cameras", "pitch_deg", c.cameras.pitch_deg));

  auto& bins = b["bins"];
  bins.push_back(size_key("bins", "count", c.bins.n_bins));
  bins.push_back(real_key("bins", "first_center", c.bins.first_center));
  bins.push_back(real_key("bins", "width", c.bins.width));
  bins.push_back(real_key("bins", "beta", c.bins.beta));

  auto& vit = b["vit"];
  vit.push_back(size_key("vit", "patch", c.vit.patch));
  vit.push_back(size_key("vit", "heads", c.vit.heads));
  vit.push_back(size_key("vit", "head_dim", c.vit.head_dim));
  vit.push_back(size_key("vit", "layers", c.vit.layers));
  vit.push_back(size_key("vit", "mlp_ratio", c.vit.mlp_ratio));
  vit.push_back({"inject_after", [&c] { return fmt_list(c.vit.inject_after.data(), c.vit.inject_after.size()); },
                 [&c](const std::string& s) { c.vit.inject_after = parse_numbers<std::size_t>(s, "vit.inject_after"); }});
  vit.push_back(size_key("vit", "bias_layers", c.vit.bias_layers));
  vit.push_back(size_key("vit", "head_bias_dim", c.vit.head_bias_dim));
  vit.push_back(bool_key("vit", "scale_bias", c.vit.scale_bias));
  vit.push_back(seed_key("vit", "seed", c.vit.seed));

  auto& hsa = b["hsa"];
  hsa.push_back(bool_key("hsa", "enabled", c.hsa.enabled));
  hsa.push_back(size_key("hsa", "channels", c.hsa.channels));
  hsa.push_back(size_key("hsa", "head_hidden", c.hsa.head_hidden));
  hsa.push_back(size_key("hsa", "supp_channels", c.hsa.supp_channels));
  hsa.push_back(size_key("hsa", "feature_channels", c.hsa.feature_channels));
  hsa.push_back(size_key("hsa", "fuse_hidden", c.hsa.fuse_hidden));
  hsa.push_back(size_key("hsa", "blocks", c.hsa.blocks));
  hsa.push_back(seed_key("hsa", "seed", c.hsa.seed));

  const std::string s1n = "train.stage1";
  auto& s1 = b[s1n];
  s1.push_back(size_key(s1n, "steps", c.stage1.train.steps));
  s1.push_back(real_key(s1n, "learning_rate", c.stage1.train.learning_rate));
  s1.push_back(optimizer_key(s1n, c.stage1.train.optimizer));
  s1.push_back(real_key(s1n, "lambda_pix", c.stage1.train.lambda_pix));
  s1.push_back(real_key(s1n, "lambda_bd", c.stage1.train.lambda_bd));
  s1.push_back(real_key(s1n, "silog_alpha", c.stage1.train.silog_alpha));
  s1.push_back(bool_key(s1n, "lora", c.stage1.train.lora));
  s1.push_back(size_key(s1n, "hidden", c.stage1.model.hidden));
  s1.push_back(size_key(s1n, "lora_rank", c.stage1.model.lora_rank));
  s1.push_back(real_key(s1n, "lora_scale", c.stage1.model.lora_scale));
  s1.push_back(size_key(s1n, "r2m_hidden", c.stage1.model.r2m_hidden));
  s1.push_back(size_key(s1n, "downsample", c.stage1.model.downsample));
  s1.push_back(seed_key(s1n, "seed", c.stage1.model.seed));

  const std::string s2n = "train.stage2";
  auto& s2 = b[s2n];
  s2.push_back(size_key(s2n, "steps", c.stage2.train.steps));
  s2.push_back(real_key(s2n, "learning_rate", c.stage2.train.learning_rate));
  s2.push_back(optimizer_key(s2n, c.stage2.train.optimizer));
  s2.push_back(real_key(s2n, "lambda_bin", c.stage2.train.lambda_bin));
  s2.push_back(real_key(s2n, "lambda_sa", c.stage2.train.lambda_sa));
  s2.push_back(bool_key(s2n, "reweight", c.stage2.train.reweight));
  s2.push_back(names_key("seen_superclasses", c.stage2.train.seen_superclasses));
  s2.push_back(size_key(s2n, "trunk_width", c.stage2.model.trunk_width));
  s2.push_back(size_key(s2n, "trunk_blocks", c.stage2.model.trunk_blocks));
  s2.push_back(size_key(s2n, "bin_hidden", c.stage2.model.bin_hidden));
  s2.push_back(size_key(s2n, "sa_hidden", c.stage2.model.sa_hidden));
  s2.push_back(seed_key(s2n, "seed", c.stage2.model.seed));

  auto& voc = b["vocab"];
  voc.push_back(size_key("vocab", "dim", c.vocab.dim));
  voc.push_back(seed_key("vocab", "seed", c.vocab.seed));
  voc.push_back(text_key("embeddings", c.vocab.embeddings));
  voc.push_back(text_key("subclass_map", c.vocab.subclass_map));
  voc.push_back(text_key("templates", c.vocab.templates));
  voc.push_back(names_key("classes", c.vocab.classes));
  voc.push_back(bool_key("vocab", "strict", c.vocab.strict));

  auto& sc = b["scene"];
  sc.push_back(seed_key("scene", "seed", c.scene.seed));
  sc.push_back(text_key("ground_class", c.scene.ground_class));
  sc.push_back(real_key("scene", "ground_height", c.scene.ground_height));
  sc.push_back(real_key("scene", "clear_radius", c.scene.clear_radius));
  sc.push_back(size_key("scene", "max_attempts", c.scene.max_attempts));
  sc.push_back({"roster",
                [&c] {
                  std::string s;
                  for (std::size_t i = 0; i < c.scene.roster.size(); ++i) {
                    const auto& r = c.scene.roster[i];
                    s += (i ? "; " : "") + r.name + ": " + fmt(r.share) + " " + fmt_list(r.size_min.data(), 3) +
                         " " + fmt_list(r.size_max.data(), 3);
                  }
                  return s;
                },
                [&c](const std::string& s) {
                  c.scene.roster.clear();
                  for (auto& [name, v] : parse_entries(s, 7, "scene.roster")) {
                    RosterSpec r;
                    r.name = name;
                    r.share = v[0];
                    for (int a = 0; a < 3; ++a) {
                      r.size_min[a] = as_size(v[1 + a], "scene.roster");
                      r.size_max[a] = as_size(v[4 + a], "scene.roster");
                    }
                    c.scene.roster.push_back(r);
                  }
                }});
  sc.push_back({"boxes",
                [&c] {
                  std::string s;
                  for (std::size_t i = 0; i < c.scene.boxes.size(); ++i) {
                    const auto& bx = c.scene.boxes[i];
                    s += (i ? "; " : "") + bx.name + ": " + fmt_vec3(bx.min) + " " + fmt_vec3(bx.max);
                  }
                  return s;
                },
                [&c](const std::string& s) {
                  c.scene.boxes.clear();
                  for (auto& [name, v] : parse_entries(s, 6, "scene.boxes")) {
                    c.scene.boxes.push_back({name, Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
                  }
                }});
  sc.push_back(bool_key("scene", "exact_render", c.scene.exact_render));
  sc.push_back(real_key("scene", "step_fraction", c.scene.step_fraction));
  sc.push_back(real_key("scene", "label_noise", c.scene.label_noise));
  sc.push_back(seed_key("scene", "noise_seed", c.scene.noise_seed));
  sc.push_back(names_key("noise_classes", c.scene.noise_classes));

  auto& ev = b["eval"];
  ev.push_back(real_key("eval", "tau", c.eval.tau));
  ev.push_back(names_key("candidates", c.eval.candidates));
  ev.push_back(names_key("queries", c.eval.queries));
  return b;
}

bool is_camera_key(const std::string& key, std::size_t* index) {
  if (key.size() < 4 || key.compare(0, 3, "cam") != 0) return false;
  const auto [ptr, ec] = std::from_chars(key.data() + 3, key.data() + key.size(), *index);
  return ec == std::errc() && ptr == key.data() + key.size();
}

// Fields that mirror other sections.
void derive(RunConfig& c) {
  const geometry::ImageSize size = c.cameras.layout == CameraSection::Layout::kExplicit && !c.cameras.cameras.empty()
                                       ? c.cameras.cameras.front().image_size
                                       : geometry::ImageSize{c.cameras.image_height, c.cameras.image_width};
  c.vit.image_h = size.height;
  c.vit.image_w = size.width;
  c.vit.channels = 4;
  c.stage1.train.stage = 1;
  c.stage1.model.in_channels = 4;
  c.stage1.model.bins = c.bins;
  c.stage1.model.lora_enabled = c.stage1.train.lora;
  c.stage2.train.stage = 2;
  c.stage2.train.hsa = c.hsa.enabled;
  c.stage2.model.in_channels = c.hsa.feature_channels;
  c.stage2.model.embed_dim = c.vocab.dim;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.grid = synthworld::toy_grid();
  c.stage1.train.steps = 500;
  c.stage1.train.learning_rate = 1e-2;
  c.stage1.train.optimizer = OptimizerKind::kSgd;
  c.stage2.train.steps = 300;
  c.stage2.train.learning_rate = 3e-3;
  c.stage2.train.optimizer = OptimizerKind::kAdam;
  c.scene.roster = {
      {"building", 0.08, {5, 5, 5}, {9, 9, 7}},
      {"car", 0.05, {5, 3, 3}, {7, 3, 3}},
      {"tree", 0.03, {2, 2, 5}, {2, 2, 7}},
      {"bicycle", 0.0025, {2, 1, 2}, {3, 1, 2}},
  };
  derive(c);
  return c;
}

std::string RunConfig::resolve(const std::string& path) const {
  if (path.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? p.string() : (base_dir / p).lexically_normal().string();
}

geometry::CameraRig RunConfig::rig() const {
  if (cameras.layout == CameraSection::Layout::kExplicit) return geometry::CameraRig{cameras.cameras};
  const double deg = M_PI / 180.0;
  return geometry::make_surround_rig(cameras.count, cameras.center,
                                     {cameras.image_height, cameras.image_width}, cameras.hfov_deg * deg,
                                     cameras.pitch_deg * deg);
}

void RunConfig::validate() const {
  try {
    grid.validate();
    bins.validate();
    vit.validate();
    stage1.train.validate();
    stage2.train.validate();
    rig().validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    fail(e.what());
  }
  if (cameras.layout == CameraSection::Layout::kSurround) {
    if (cameras.count == 0) fail("cameras.count must be >= 1");
    if (!(cameras.hfov_deg > 0.0 && cameras.hfov_deg < 180.0)) fail("cameras.hfov_deg must lie in (0, 180)");
  } else {
    if (cameras.cameras.empty()) fail("cameras: explicit layout needs cam0, cam1, ... lines");
    for (const auto& cam : cameras.cameras) {
      if (!(cam.image_size == cameras.cameras.front().image_size)) {
        fail("cameras: every camera must share one image size");
      }
    }
  }
  if (stage1.model.downsample == 0 || 2 * stage1.model.downsample != vit.patch) {
    fail("train.stage1.downsample must be half of vit.patch so depth bins match the adaptor resolution");
  }
  if (stage1.model.lora_rank == 0 || stage1.model.hidden == 0 || stage1.model.r2m_hidden == 0) {
    fail("train.stage1: hidden, lora_rank and r2m_hidden must be >= 1");
  }
  if (hsa.channels == 0 || hsa.feature_channels == 0 || hsa.supp_channels == 0 || hsa.blocks == 0) {
    fail("hsa: channel counts and blocks must be >= 1");
  }
  if (stage2.model.trunk_width == 0 || stage2.model.bin_hidden == 0 || stage2.model.sa_hidden == 0) {
    fail("train.stage2: trunk_width, bin_hidden and sa_hidden must be >= 1");
  }
  if (vocab.dim == 0) fail("vocab.dim must be >= 1");
  if (!(eval.tau > 0.0 && eval.tau < 1.0)) fail("eval.tau must lie in (0, 1)");
  if (!(scene.label_noise >= 0.0 && scene.label_noise <= 1.0)) fail("scene.label_noise must lie in [0, 1]");
  if (!(scene.step_fraction > 0.0 && scene.step_fraction <= 1.0)) fail("scene.step_fraction must lie in (0, 1]");
  for (const auto& r : scene.roster) {
    if (!(r.share > 0.0 && r.share <= 1.0)) fail("scene.roster: share of '" + r.name + "' must lie in (0, 1]");
    for (int a = 0; a < 3; ++a) {
      if (r.size_min[a] == 0 || r.size_min[a] > r.size_max[a]) {
        fail("scene.roster: sizes of '" + r.name + "' must satisfy 1 <= min <= max");
      }
    }
  }
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(std::string("malformed config: ") + e.what());
  }
  RunConfig c = RunConfig::defaults();
  c.base_dir = base_dir;
  auto keys = bindings(c);
  // The reader drops empty sections, so headers are collected separately.
  std::set<std::string> declared;
  {
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) {
      line = trim(line);
      if (line.size() > 1 && line[0] == '[') declared.insert(trim(line.substr(1, line.find(']') - 1)));
    }
  }
  std::map<std::string, const pt::ptree*> sections;
  for (const auto& [name, node] : tree) {
    if (!declared.count(name)) fail("key '" + name + "' outside any section");
    sections[name] = &node;
  }
  for (const auto& name : declared) {
    if (!keys.count(name)) fail("unknown section [" + name + "]");
  }
  for (const auto& name : section_names()) {
    if (!declared.count(name)) fail("missing section [" + name + "]");
  }
  static const pt::ptree kEmpty;
  std::map<std::size_t, geometry::Camera> explicit_cams;
  for (const auto& name : section_names()) {
    for (const auto& [key, node] : sections.count(name) ? *sections[name] : kEmpty) {
      if (!node.empty()) fail("[" + name + "] " + key + ": nested keys are not allowed");
      std::size_t cam_index = 0;
      if (name == "cameras" && is_camera_key(key, &cam_index)) {
        explicit_cams[cam_index] = parse_camera(node.data(), "cameras." + key);
        continue;
      }
      const auto& list = keys[name];
      const auto it = std::find_if(list.begin(), list.end(), [&](const Key& k) { return k.name == key; });
      if (it == list.end()) fail("unknown key '" + key + "' in section [" + name + "]");
      it->set(node.data());
    }
  }
  if (c.cameras.layout == CameraSection::Layout::kExplicit) {
    if (explicit_cams.size() != c.cameras.count) {
      fail("cameras: explicit layout needs exactly count = " + std::to_string(c.cameras.count) + " camN lines");
    }
    for (std::size_t i = 0; i < c.cameras.count; ++i) {
      if (!explicit_cams.count(i)) fail("cameras: missing cam" + std::to_string(i));
      c.cameras.cameras.push_back(explicit_cams[i]);
    }
  } else if (!explicit_cams.empty()) {
    fail("cameras: camN lines require layout = explicit");
  }
  try {
    c.grid = geometry::VoxelGridSpec::make(c.grid.dims, c.grid.range_min, c.grid.range_max);
  } catch (const Error& e) {
    fail(std::string("grid: ") + e.what());
  }
  derive(c);
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string serialize(const RunConfig& cfg) {
  RunConfig c = cfg;
  auto keys = bindings(c);
  std::ostringstream os;
  for (const auto& name : section_names()) {
    os << "[" << name << "]\n";
    for (const auto& k : keys[name]) os << k.name << " = " << k.get() << "\n";
    if (name == "cameras" && c.cameras.layout == CameraSection::Layout::kExplicit) {
      for (std::size_t i = 0; i < c.cameras.cameras.size(); ++i) {
        os << "cam" << i << " = " << fmt_camera(c.cameras.cameras[i]) << "\n";
      }
    }
    os << "\n";
  }
  return os.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) { return serialize(a) == serialize(b); }

}  // namespace ovocc::config
