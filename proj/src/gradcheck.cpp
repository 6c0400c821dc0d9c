#include "gridpost/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gridpost/errors.hpp"

namespace gridpost {

GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double eps) {
  if (analytic.size() != x.size()) throw DimensionError("grad_check: gradient length mismatch");
  GradCheckReport r;
  const double f0 = f(x);
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = f(probe);
    probe[i] = x[i] - eps;
    const double fm = f(probe);
    probe[i] = x[i];

    const double central = (fp - fm) / (2 * eps);
    const double forward = (fp - f0) / eps;
    const double backward = (f0 - fm) / eps;
    if (std::abs(forward - backward) > 1e-3 * std::max(1.0, std::abs(central))) {
      ++r.skipped;
      continue;
    }
    const double err =
        std::abs(analytic[i] - central) / std::max(std::abs(analytic[i]) + std::abs(central), 1e-6);
    ++r.checked;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = i;
    }
  }
  return r;
}

}  // namespace gridpost
