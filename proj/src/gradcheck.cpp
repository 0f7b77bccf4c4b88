#include "ovocc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ovocc/error.hpp"

namespace ovocc::ad {

GradCheckResult gradcheck(const std::function<Var()>& loss, const std::vector<Var>& leaves,
                          const std::vector<std::string>& names, double step, double floor) {
  for (const Var& v : leaves) {
    if (!v.requires_grad()) throw Error(ErrorCode::kInvalidArgument, "gradcheck leaf is frozen");
  }
  for (Var v : leaves) v.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  for (Var v : leaves) {
    analytic.push_back(v.grad().empty() ? Tensor(v.shape()) : v.grad());
    v.zero_grad();
  }

  GradCheckResult out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Var v = leaves[l];
    Tensor& x = v.mutable_value();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + step;
      const double up = loss().value().item();
      x[i] = orig - step;
      const double down = loss().value().item();
      x[i] = orig;
      const double num = (up - down) / (2.0 * step);
      const double a = analytic[l][i];
      diff2 += (a - num) * (a - num);
      a2 += a * a;
      n2 += num * num;
      ++out.checked;
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_leaf = l < names.size() ? names[l] : "leaf" + std::to_string(l);
    }
  }
  return out;
}

}  // namespace ovocc::ad
