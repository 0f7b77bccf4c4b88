#pragma once

#include <map>
#include <string>
#include <vector>

#include "ovocc/ad.hpp"

namespace ovocc {

// A named leaf tensor. `component` groups parameters for the census
// (e.g. "depth.backbone", "depth.lora", "hsa", "occ.trunk").
struct Param {
  std::string name;
  std::string component;
  ad::Var var;
  bool trainable = false;
};

class ParamSet {
 public:
  // Registers a parameter; names must be unique.
  ad::Var add(const std::string& name, const std::string& component, Tensor init,
              bool trainable);

  // Appends every parameter of `other`; the Vars are shared, not copied.
  void extend(const ParamSet& other);

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Param* find(const std::string& name) const;
  Param& get(const std::string& name);

  // Freezes or unfreezes every parameter whose component starts with prefix.
  void set_trainable(const std::string& component_prefix, bool trainable);
  void zero_grad();

  // Name -> value snapshot, used for bit-identity checks and checkpoints.
  std::map<std::string, Tensor> snapshot() const;
  // Overwrites values by name; shapes must match. Unknown names throw.
  void load(const std::map<std::string, Tensor>& values);

 private:
  std::vector<Param> params_;
};

struct CensusRow {
  std::string component;
  std::size_t total = 0;
  std::size_t trainable = 0;
};

struct Census {
  std::vector<CensusRow> components;  // sorted by component name
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
  }
};

Census parameter_census(const ParamSet& params);

enum class OptimizerKind { kSgd, kAdam };

// Updates trainable parameters in place from their accumulated gradients,
// then clears the gradients.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}
  void step(ParamSet& params);

 private:
  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace ovocc
