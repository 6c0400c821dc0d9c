#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridpost/errors.hpp"

namespace gridpost {

struct GaussianForecast {
  double mu = 0.0;
  double sigma = 1.0;
};

/// Per-date score values of one model at one station (or pooled).
struct ScoreSeries {
  std::vector<double> values;
  std::string station;
  std::string model;
};

double normal_cdf(double z);
double normal_pdf(double z);

/// Closed-form CRPS of N(mu, sigma^2) against y.
double crps_gaussian(const GaussianForecast& f, double y);

struct CrpsGradient {
  double d_mu = 0.0;
  double d_sigma = 0.0;
};

CrpsGradient crps_gaussian_grad(const GaussianForecast& f, double y);

/// Exact CRPS of the empirical distribution of members:
/// mean|x_i - y| - 0.5 mean|x_i - x_j|.
double crps_ensemble(std::span<const double> members, double y);

/// Composite-Simpson evaluation of the integral of (F(z) - 1{y <= z})^2 over
/// [lo, hi] using n sample points. The interval is split at y and at every
/// breakpoint so that integrands with jumps are integrated piecewise. F is
/// assumed 0 below lo and 1 above hi.
double crps_numeric(const std::function<double(double)>& cdf, double y, double lo, double hi,
                    long n, std::span<const double> breakpoints = {});

/// 1 - score / reference.
double crpss(double score, double reference);

struct DmResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Diebold-Mariano test on d_t = a_t - b_t with a Newey-West (Bartlett,
/// lag floor(n^(1/3))) long-run variance and a two-sided normal p-value.
DmResult dm_test(std::span<const double> loss_a, std::span<const double> loss_b);
DmResult dm_test(const ScoreSeries& a, const ScoreSeries& b);

}  // namespace gridpost
