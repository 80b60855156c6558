#pragma once

#include <span>

namespace fairpair::stats {

double mean(std::span<const double> xs);
/// Unbiased (n - 1) sample variance.
double sample_variance(std::span<const double> xs);
double sample_stddev(std::span<const double> xs);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

/// Two-sided Welch unequal-variance t-test with Welch-Satterthwaite degrees
/// of freedom. Needs at least two values per sample; throws
/// DegenerateVariance when both samples are constant.
TTestResult welch_t_test(std::span<const double> xs, std::span<const double> ys);

}  // namespace fairpair::stats
