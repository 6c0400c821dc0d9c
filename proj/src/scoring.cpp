#include "gridpost/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gridpost/errors.hpp"

namespace gridpost {

namespace {

constexpr double kInvSqrtPi = 0.56418958354775628695;  // 1/sqrt(pi)

void check_forecast(const GaussianForecast& f) {
  if (!(f.sigma > 0) || !std::isfinite(f.sigma) || !std::isfinite(f.mu)) {
    throw DomainError("gaussian forecast requires finite mu and sigma > 0");
  }
}

// Endpoints are sampled one ulp inside [a, b] so a jump sitting exactly on a
// piece boundary contributes its one-sided limit.
double simpson(const std::function<double(double)>& g, double a, double b, long intervals) {
  if (intervals % 2) ++intervals;
  const double h = (b - a) / static_cast<double>(intervals);
  double odd = 0.0, even = 0.0;
  for (long i = 1; i < intervals; ++i) {
    const double v = g(a + h * static_cast<double>(i));
    (i % 2 ? odd : even) += v;
  }
  return h / 3.0 * (g(std::nextafter(a, b)) + g(std::nextafter(b, a)) + 4.0 * odd + 2.0 * even);
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) * std::numbers::inv_sqrtpi / std::numbers::sqrt2; }

double crps_gaussian(const GaussianForecast& f, double y) {
  check_forecast(f);
  const double z = (y - f.mu) / f.sigma;
  const double v = f.sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - kInvSqrtPi);
  return std::max(v, 0.0);
}

CrpsGradient crps_gaussian_grad(const GaussianForecast& f, double y) {
  check_forecast(f);
  const double z = (y - f.mu) / f.sigma;
  return {-(2.0 * normal_cdf(z) - 1.0), 2.0 * normal_pdf(z) - kInvSqrtPi};
}

double crps_ensemble(std::span<const double> members, double y) {
  if (members.empty()) throw DomainError("crps_ensemble: empty ensemble");
  std::vector<double> x(members.begin(), members.end());
  std::sort(x.begin(), x.end());
  const auto m = static_cast<double>(x.size());
  double abs_err = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    abs_err += std::abs(x[i] - y);
    spread += (2.0 * static_cast<double>(i) - m + 1.0) * x[i];
  }
  // sum_{i,j} |x_i - x_j| = 2 * spread for sorted members
  return abs_err / m - spread / (m * m);
}

double crps_numeric(const std::function<double(double)>& cdf, double y, double lo, double hi,
                    long n, std::span<const double> breakpoints) {
  if (!(lo < hi)) throw DomainError("crps_numeric: requires lo < hi");
  if (n < 3) throw DomainError("crps_numeric: need at least 3 points");
  std::vector<double> cuts{lo, hi};
  if (y > lo && y < hi) cuts.push_back(y);
  for (double b : breakpoints) {
    if (b > lo && b < hi) cuts.push_back(b);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const long total = n - 1;
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    const long intervals =
        std::max(2L, static_cast<long>(std::llround(static_cast<double>(total) * (b - a) / (hi - lo))));
    // Inside a piece the indicator is constant; evaluate it at the midpoint.
    const double ind = (y <= 0.5 * (a + b)) ? 1.0 : 0.0;
    const auto g = [&](double z) {
      const double d = cdf(z) - ind;
      return d * d;
    };
    sum += simpson(g, a, b, intervals);
  }
  // F is taken as 0 below lo and 1 above hi, so an observation outside the
  // interval adds the stretch between it and the interval.
  if (y < lo) sum += lo - y;
  if (y > hi) sum += y - hi;
  return sum;
}

double crpss(double score, double reference) {
  if (!(reference > 0)) throw DomainError("crpss: reference score must be positive");
  return 1.0 - score / reference;
}

DmResult dm_test(std::span<const double> loss_a, std::span<const double> loss_b) {
  if (loss_a.size() != loss_b.size()) throw DimensionError("dm_test: series lengths differ");
  const std::size_t n = loss_a.size();
  if (n < 10) throw DomainError("dm_test: need at least 10 paired values");

  std::vector<double> d(n);
  bool all_zero = true;
  for (std::size_t t = 0; t < n; ++t) {
    d[t] = loss_a[t] - loss_b[t];
    if (d[t] != 0.0) all_zero = false;
  }
  if (all_zero) return {0.0, 1.0};

  const auto nd = static_cast<double>(n);
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= nd;

  // floor(n^(1/3)) without trusting cbrt on exact cubes
  auto lag = static_cast<std::size_t>(std::cbrt(nd));
  while ((lag + 1) * (lag + 1) * (lag + 1) <= n) ++lag;
  while (lag * lag * lag > n) --lag;
  auto autocov = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t t = k; t < n; ++t) s += (d[t] - mean) * (d[t - k] - mean);
    return s / nd;
  };
  double lrv = autocov(0);
  for (std::size_t k = 1; k <= lag && k < n; ++k) {
    lrv += 2.0 * (1.0 - static_cast<double>(k) / static_cast<double>(lag + 1)) * autocov(k);
  }
  if (!(lrv > 0)) {
    const double inf = std::numeric_limits<double>::infinity();
    return {mean > 0 ? inf : (mean < 0 ? -inf : 0.0), mean == 0 ? 1.0 : 0.0};
  }
  const double stat = mean / std::sqrt(lrv / nd);
  const double p = std::erfc(std::abs(stat) / std::numbers::sqrt2);
  return {stat, std::min(1.0, p)};
}

DmResult dm_test(const ScoreSeries& a, const ScoreSeries& b) {
  for (const ScoreSeries* s : {&a, &b}) {
    for (double v : s->values) {
      if (!(v >= 0) || !std::isfinite(v)) {
        throw DomainError("score series " + s->model + "/" + s->station + " holds a negative or non-finite value");
      }
    }
  }
  return dm_test(a.values, b.values);
}

}  // namespace gridpost
