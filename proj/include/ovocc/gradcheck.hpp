#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ovocc/ad.hpp"

namespace ovocc::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst leaf, norm-wise
  std::string worst_leaf;
  std::size_t checked = 0;     // scalar entries perturbed
};

// Compares reverse-mode gradients of the scalar `loss()` against central
// differences for every entry of every leaf. The error per leaf is
// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
GradCheckResult gradcheck(const std::function<Var()>& loss, const std::vector<Var>& leaves,
                          const std::vector<std::string>& names = {}, double step = 1e-5,
                          double floor = 1e-6);

}  // namespace ovocc::ad
