#pragma once

#include <functional>

#include <Eigen/Dense>

namespace gridpost {

struct GradCheckReport {
  double max_rel_error = 0.0;
  Eigen::Index worst = -1;
  Eigen::Index checked = 0;
  Eigen::Index skipped = 0;  // coordinates straddling a kink
};

/// Compares an analytic gradient with central differences of f at x.
/// Coordinates whose one-sided slopes disagree (a ReLU/max kink inside
/// [x-eps, x+eps]) are skipped. Relative error is |a-n| / max(|a|+|n|, 1e-6).
GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                           double eps = 1e-5);

}  // namespace gridpost
