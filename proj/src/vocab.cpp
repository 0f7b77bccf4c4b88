#include "ovocc/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <random>
#include <sstream>

#include "ovocc/binary_io.hpp"
#include "ovocc/error.hpp"

namespace ovocc::vocab {
namespace {

constexpr const char* kBuiltinDivision =
    "debris\tothers\nanimal\tothers\npersonal mobility\tothers\nskateboard\tothers\n"
    "segway\tothers\nscooter\tothers\nstroller\tothers\nwheelchair\tothers\n"
    "trash bag\tothers\ntrash can\tothers\nwheelbarrow\tothers\nbicycle rack\tothers\n"
    "ambulance\tothers\npolice vehicle\tothers\n"
    "traffic barrier\tbarrier\n"
    "bicycle\tbicycle\n"
    "bus\tbus\n"
    "car\tcar\nsedan\tcar\nhatch-back\tcar\nwagon\tcar\nvan\tcar\nSUV\tcar\njeep\tcar\n"
    "construction vehicle\tconst. veh.\n"
    "motorcycle\tmotorcycle\n"
    "pedestrian\tpedestrian\nconstruction worker\tpedestrian\npolice officer\tpedestrian\n"
    "traffic cone\ttraffic cone\n"
    "trailer\ttrailer\n"
    "truck\ttruck\n"
    "road\tdriv. surf.\n"
    "traffic island\tother flat\ntraffic delimiter\tother flat\nrail track\tother flat\n"
    "lake\tother flat\nriver\tother flat\n"
    "sidewalk\tsidewalk\npedestrian walkway\tsidewalk\nbike path\tsidewalk\n"
    "grass\tterrain\nrolling hill\tterrain\nsoil\tterrain\nsand\tterrain\ngravel\tterrain\n"
    "building\tmanmade\nwall\tmanmade\nguard rail\tmanmade\nfence\tmanmade\n"
    "drainage\tmanmade\nhydrant\tmanmade\nbanner\tmanmade\nstreet sign\tmanmade\n"
    "traffic light\tmanmade\nparking meter\tmanmade\nstairs\tmanmade\n"
    "vegetation\tvegetation\nplants\tvegetation\nbushes\tvegetation\ntree\tvegetation\n";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0)) throw Error(ErrorCode::kInvalidArgument, "cannot normalise a zero embedding");
  for (double& x : v) x /= n;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> t = {
      "a photo of a {}.",
      "This is a photo of a {}",
      "There is a {} in the scene",
      "There is the {} in the scene",
      "a photo of a {} in the scene",
      "a photo of a small {}.",
      "a photo of a medium {}.",
      "a photo of a large {}.",
      "This is a photo of a small {}.",
      "This is a photo of a medium {}.",
      "This is a photo of a large {}.",
      "There is a small {} in the scene.",
      "There is a medium {} in the scene.",
      "There is a large {} in the scene.",
  };
  return t;
}

const std::vector<std::string>& default_superclasses() {
  static const std::vector<std::string> s = {
      "others",      "barrier",    "bicycle", "bus",     "car",     "const. veh.",
      "motorcycle",  "pedestrian", "traffic cone", "trailer", "truck", "driv. surf.",
      "other flat",  "sidewalk",   "terrain", "manmade", "vegetation"};
  return s;
}

std::string fill_template(const std::string& tmpl, const std::string& name) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) return tmpl;
  return tmpl.substr(0, pos) + name + tmpl.substr(pos + 2);
}

std::vector<std::string> load_templates(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back(line);
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "template file is empty: " + path);
  return out;
}

const SubclassMap& SubclassMap::builtin() {
  static const SubclassMap m = parse(kBuiltinDivision);
  return m;
}

SubclassMap SubclassMap::parse(const std::string& text) {
  SubclassMap m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::kFormat, "subclass map line without tab: " + line);
    }
    const std::string sub = trim(line.substr(0, tab));
    const std::string sup = trim(line.substr(tab + 1));
    if (m.superclass_of(sub)) throw Error(ErrorCode::kFormat, "duplicate subclass " + sub);
    m.rows.emplace_back(sub, sup);
    if (std::find(m.superclasses.begin(), m.superclasses.end(), sup) == m.superclasses.end()) {
      m.superclasses.push_back(sup);
    }
  }
  return m;
}

SubclassMap SubclassMap::load(const std::string& path) { return parse(read_file(path)); }

std::optional<std::string> SubclassMap::superclass_of(const std::string& subclass) const {
  for (const auto& [sub, sup] : rows)
    if (sub == subclass) return sup;
  return std::nullopt;
}

std::vector<std::string> SubclassMap::subclass_names() const {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.first);
  return out;
}

EmbeddingProvider EmbeddingProvider::pseudo(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "embedding dim must be > 0");
  EmbeddingProvider p;
  p.mode_ = Mode::kDeterministicPseudo;
  p.dim_ = dim;
  p.seed_ = seed;
  return p;
}

EmbeddingProvider EmbeddingProvider::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  binio::expect_magic(in, "OVE1");
  const std::uint16_t version = binio::get_u16(in);
  if (version != 1) throw Error(ErrorCode::kFormat, "unsupported OVE1 version");
  EmbeddingProvider p;
  p.mode_ = Mode::kFileBacked;
  p.dim_ = binio::get_u32(in);
  const std::uint32_t count = binio::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = binio::get_string(in);
    std::string sup = binio::get_string(in);
    std::vector<double> v(p.dim_);
    for (double& x : v) x = binio::get_f32(in);
    p.stored_[name] = {std::move(sup), std::move(v)};
  }
  return p;
}

std::vector<double> EmbeddingProvider::embed_prompt(const std::string& prompt) const {
  std::mt19937_64 rng(fnv1a(prompt) ^ (seed_ * 0x9E3779B97F4A7C15ULL));
  std::vector<double> v(dim_);
  // Box-Muller on 53-bit uniforms keeps the stream platform independent.
  auto uniform = [&rng]() { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  for (std::size_t i = 0; i < dim_; i += 2) {
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < dim_) v[i + 1] = r * std::sin(2.0 * M_PI * u2);
  }
  normalize(v);
  return v;
}

std::optional<std::vector<double>> EmbeddingProvider::stored(const std::string& name) const {
  auto it = stored_.find(name);
  if (it == stored_.end()) return std::nullopt;
  return it->second.second;
}

std::optional<std::string> EmbeddingProvider::stored_superclass(const std::string& name) const {
  auto it = stored_.find(name);
  if (it == stored_.end()) return std::nullopt;
  return it->second.first;
}

const ClassEntry& ClassEmbeddingTable::entry(ClassId id) const {
  if (id == kFree || id > entries.size()) {
    throw Error(ErrorCode::kUnknownClass, "class id " + std::to_string(id));
  }
  return entries[id - 1];
}

std::optional<ClassId> ClassEmbeddingTable::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.class_id;
  return std::nullopt;
}

ClassId ClassEmbeddingTable::id_of(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw Error(ErrorCode::kUnknownClassName, "no class named '" + name + "'");
}

ClassId ClassEmbeddingTable::superclass_id_of(const std::string& superclass_name) const {
  for (std::size_t i = 0; i < superclasses.size(); ++i)
    if (superclasses[i] == superclass_name) return static_cast<ClassId>(i + 1);
  throw Error(ErrorCode::kUnknownClassName, "no superclass named '" + superclass_name + "'");
}

const std::string& ClassEmbeddingTable::superclass_name(ClassId superclass_id) const {
  if (superclass_id == kFree || superclass_id > superclasses.size()) {
    throw Error(ErrorCode::kUnknownClass, "superclass id " + std::to_string(superclass_id));
  }
  return superclasses[superclass_id - 1];
}

std::vector<ClassId> ClassEmbeddingTable::subclasses_of(ClassId superclass_id) const {
  std::vector<ClassId> out;
  for (const auto& e : entries)
    if (e.superclass_id == superclass_id) out.push_back(e.class_id);
  return out;
}

std::vector<ClassId> ClassEmbeddingTable::all_ids() const {
  std::vector<ClassId> out;
  for (const auto& e : entries) out.push_back(e.class_id);
  return out;
}

void ClassEmbeddingTable::set_seen_superclasses(const std::vector<std::string>& superclass_names) {
  std::set<ClassId> sup;
  for (const auto& n : superclass_names) sup.insert(superclass_id_of(n));
  seen.clear();
  unseen.clear();
  for (const auto& e : entries) {
    (sup.count(e.superclass_id) ? seen : unseen).insert(e.class_id);
  }
}

void ClassEmbeddingTable::write_ove1(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  binio::put_magic(out, "OVE1");
  binio::put_u16(out, 1);
  binio::put_u32(out, static_cast<std::uint32_t>(dim()));
  binio::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    binio::put_string(out, e.name);
    binio::put_string(out, superclass_name(e.superclass_id));
    for (double x : e.embedding) binio::put_f32(out, static_cast<float>(x));
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

ClassEmbeddingTable build_class_embeddings(const std::vector<std::string>& names,
                                           const EmbeddingProvider& provider,
                                           const std::vector<std::string>& templates,
                                           const SubclassMap& map, bool strict) {
  if (templates.empty()) throw Error(ErrorCode::kInvalidArgument, "no prompt templates");
  ClassEmbeddingTable table;
  table.superclasses = map.superclasses;
  for (const auto& name : names) {
    if (table.find(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate class " + name);
    std::optional<std::string> sup = map.superclass_of(name);
    if (!sup && provider.mode() == EmbeddingProvider::Mode::kFileBacked) {
      sup = provider.stored_superclass(name);
    }
    if (!sup) {
      if (strict) {
        throw Error(ErrorCode::kUnknownClassName, "no superclass mapping for '" + name + "'");
      }
      sup = name;
    }
    auto it = std::find(table.superclasses.begin(), table.superclasses.end(), *sup);
    if (it == table.superclasses.end()) {
      table.superclasses.push_back(*sup);
      it = table.superclasses.end() - 1;
    }
    ClassEntry e;
    e.class_id = static_cast<ClassId>(table.entries.size() + 1);
    e.name = name;
    e.superclass_id = static_cast<ClassId>(it - table.superclasses.begin() + 1);
    if (provider.mode() == EmbeddingProvider::Mode::kFileBacked) {
      auto v = provider.stored(name);
      if (!v) throw Error(ErrorCode::kUnknownClassName, "'" + name + "' not in embedding file");
      e.embedding = *v;
    } else {
      e.embedding.assign(provider.dim(), 0.0);
      for (const auto& t : templates) {
        const auto v = provider.embed_prompt(fill_template(t, name));
        for (std::size_t i = 0; i < v.size(); ++i) e.embedding[i] += v[i];
      }
      for (double& x : e.embedding) x /= static_cast<double>(templates.size());
    }
    normalize(e.embedding);
    table.unseen.insert(e.class_id);
    table.entries.push_back(std::move(e));
  }
  return table;
}

ClassId subclass_to_superclass(ClassId class_id, const ClassEmbeddingTable& table) {
  return table.entry(class_id).superclass_id;
}

ClassId classify_embedding(const double* v, const ClassEmbeddingTable& table,
                           const std::vector<ClassId>& candidates) {
  if (candidates.empty()) throw Error(ErrorCode::kEmptyCandidateSet, "no candidate classes");
  ClassId best = candidates.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (ClassId id : candidates) {
    const auto& emb = table.entry(id).embedding;
    double s = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) s += v[i] * emb[i];
    if (s > best_score || (s == best_score && id < best)) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

ClassId classify_embedding(const std::vector<double>& v, const ClassEmbeddingTable& table,
                           const std::vector<ClassId>& candidates) {
  if (v.size() != table.dim()) {
    throw Error(ErrorCode::kShapeMismatch, "embedding dim " + std::to_string(v.size()));
  }
  return classify_embedding(v.data(), table, candidates);
}

}  // namespace ovocc::vocab
