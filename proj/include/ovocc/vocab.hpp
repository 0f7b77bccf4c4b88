#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ovocc::vocab {

using ClassId = std::uint16_t;
inline constexpr ClassId kFree = 0;

// The 14 prompt templates; "{}" marks the class name.
const std::vector<std::string>& default_templates();

// The 17 benchmark superclasses in benchmark order (ids 1..17).
const std::vector<std::string>& default_superclasses();

// Subclass -> superclass division.
struct SubclassMap {
  std::vector<std::string> superclasses;                   // id - 1 -> name
  std::vector<std::pair<std::string, std::string>> rows;   // (subclass, superclass)

  static const SubclassMap& builtin();
  // Tab-separated "subclass<TAB>superclass" lines; '#' starts a comment.
  static SubclassMap parse(const std::string& text);
  static SubclassMap load(const std::string& path);
  std::optional<std::string> superclass_of(const std::string& subclass) const;
  std::vector<std::string> subclass_names() const;
};

std::vector<std::string> load_templates(const std::string& path);

// Produces per-prompt text embeddings.
class EmbeddingProvider {
 public:
  enum class Mode { kDeterministicPseudo, kFileBacked };

  // Seeded hash of the prompt expanded into `dim` Gaussian variates.
  static EmbeddingProvider pseudo(std::size_t dim, std::uint64_t seed);
  // Class-level vectors read from an OVE1 file; templates are ignored.
  static EmbeddingProvider from_file(const std::string& path);

  Mode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  // Unit-norm embedding of one prompt (pseudo mode).
  std::vector<double> embed_prompt(const std::string& prompt) const;
  // Stored class vector (file mode); nullopt when the name is absent.
  std::optional<std::vector<double>> stored(const std::string& name) const;
  std::optional<std::string> stored_superclass(const std::string& name) const;

 private:
  Mode mode_ = Mode::kDeterministicPseudo;
  std::size_t dim_ = 32;
  std::uint64_t seed_ = 0;
  std::map<std::string, std::pair<std::string, std::vector<double>>> stored_;
};

struct ClassEntry {
  ClassId class_id = 0;
  std::string name;
  ClassId superclass_id = 0;
  std::vector<double> embedding;  // unit norm
};

// Class ids are 1..N in entry order; superclass ids index `superclasses`
// (1-based). Free (id 0) has no entry.
class ClassEmbeddingTable {
 public:
  std::vector<ClassEntry> entries;
  std::vector<std::string> superclasses;
  std::set<ClassId> seen;
  std::set<ClassId> unseen;

  std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
  std::size_t size() const { return entries.size(); }
  const ClassEntry& entry(ClassId id) const;
  ClassId id_of(const std::string& name) const;
  std::optional<ClassId> find(const std::string& name) const;
  ClassId superclass_id_of(const std::string& superclass_name) const;
  const std::string& superclass_name(ClassId superclass_id) const;
  // Class ids whose superclass is `superclass_id`, in table order.
  std::vector<ClassId> subclasses_of(ClassId superclass_id) const;
  std::vector<ClassId> all_ids() const;

  // Seen = every class whose superclass is listed; unseen = the rest.
  void set_seen_superclasses(const std::vector<std::string>& superclass_names);

  void write_ove1(const std::string& path) const;
};

// Per class: embed every filled template, average, renormalise. In strict
// mode a name missing from the subclass map throws UnknownClassName;
// otherwise it becomes its own superclass.
ClassEmbeddingTable build_class_embeddings(const std::vector<std::string>& names,
                                           const EmbeddingProvider& provider,
                                           const std::vector<std::string>& templates,
                                           const SubclassMap& map = SubclassMap::builtin(),
                                           bool strict = true);

// Throws UnknownClass for ids not in the table.
ClassId subclass_to_superclass(ClassId class_id, const ClassEmbeddingTable& table);

// argmax over candidates of dot(v, embedding); lowest id wins ties.
ClassId classify_embedding(const double* v, const ClassEmbeddingTable& table,
                           const std::vector<ClassId>& candidates);
ClassId classify_embedding(const std::vector<double>& v, const ClassEmbeddingTable& table,
                           const std::vector<ClassId>& candidates);

std::string fill_template(const std::string& tmpl, const std::string& name);

}  // namespace ovocc::vocab
