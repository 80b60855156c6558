#include "fairpair/stats.hpp"

#include <cmath>

#include <boost/math/distributions/students_t.hpp>

#include "fairpair/error.hpp"

namespace fairpair::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorCode::kEmptyInput, "mean of an empty sample");
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw Error(ErrorCode::kInsufficientSamples, "variance needs two values");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

double sample_stddev(std::span<const double> xs) { return std::sqrt(sample_variance(xs)); }

TTestResult welch_t_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2) {
    throw Error(ErrorCode::kInsufficientSamples, "t-test needs at least two values per sample");
  }
  const double nx = static_cast<double>(xs.size());
  const double ny = static_cast<double>(ys.size());
  const double vx = sample_variance(xs) / nx;
  const double vy = sample_variance(ys) / ny;
  const double se2 = vx + vy;
  if (!(se2 > 0.0)) {
    throw Error(ErrorCode::kDegenerateVariance, "both samples are constant");
  }
  TTestResult r;
  r.t = (mean(xs) - mean(ys)) / std::sqrt(se2);
  r.df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
  if (r.t == 0.0) {
    r.p = 1.0;
    return r;
  }
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  if (r.p > 1.0) r.p = 1.0;
  return r;
}

}  // namespace fairpair::stats
