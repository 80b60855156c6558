#pragma once

// Bias B, sampling variabilities V_pg / V_gp, the FairPair ratio
// F = B^2 / (V_gp * V_pg), k-fold aggregation and significance testing.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairpair/scoring.hpp"

namespace fairpair::metrics {

struct DroppedSample {
  std::string side;  // "pg" or "gp"
  int index = 0;
  std::string reason;

  friend bool operator==(const DroppedSample&, const DroppedSample&) = default;
};

struct IndexedText {
  int index = 0;
  std::string text;
};

/// The grounded pair of continuation sets for one prompt: side_pg holds
/// p(g_i(x)), side_gp holds g_j(p(x)). Both sides have the same length.
struct FairPairSet {
  std::string prompt_id;
  std::vector<std::string> side_pg;
  std::vector<std::string> side_gp;
  std::vector<int> pg_indices;
  std::vector<int> gp_indices;
  std::vector<DroppedSample> dropped;

  std::size_t n() const noexcept { return side_pg.size(); }
};

/// Sorts both sides by index, drops any text still naming `source_name`
/// (when given), then truncates the longer side from its highest indices so
/// both have equal length.
FairPairSet make_fairpair_set(std::string prompt_id, std::vector<IndexedText> pg,
                              std::vector<IndexedText> gp,
                              std::vector<DroppedSample> dropped = {},
                              std::string_view source_name = {});

/// Convenience for already-aligned texts (indices 0..n-1).
FairPairSet make_fairpair_set(std::string prompt_id, std::vector<std::string> pg,
                              std::vector<std::string> gp);

struct PairScores {
  double value = 0.0;
  std::vector<double> scores;  // cross: row-major n_pg x n_gp; within: i < j, row-major
};

PairScores bias(std::span<const std::string> side_pg, std::span<const std::string> side_gp,
                const scoring::Phi& phi);
PairScores sampling_variability(std::span<const std::string> side, const scoring::Phi& phi);

PairScores bias_from_features(std::span<const scoring::Feature> pg,
                              std::span<const scoring::Feature> gp, const scoring::Phi& phi);
PairScores variability_from_features(std::span<const scoring::Feature> side,
                                     const scoring::Phi& phi);

/// B^2 / (V_gp * V_pg); empty when either variability is zero.
std::optional<double> fairpair_metric(double b, double v_pg, double v_gp);

/// Sizes of k folds over n samples: n % k folds of ceil(n/k), the rest floor.
std::vector<std::size_t> fold_sizes(std::size_t n, std::size_t k);

/// Shuffles with `seed` (skipped when k == n, where every fold is a single
/// sample), splits into k folds and aggregates each through phi.
std::vector<scoring::Feature> kfold_aggregate(std::span<const std::string> side, int k,
                                              const scoring::Phi& phi, std::uint64_t seed);
std::vector<scoring::Feature> kfold_aggregate_features(std::span<const scoring::Feature> side,
                                                       int k, const scoring::Phi& phi,
                                                       std::uint64_t seed);

struct MetricsRecord {
  std::string prompt_id;
  std::string phi_label;
  double b = 0.0;
  double v_pg = 0.0;
  double v_gp = 0.0;
  std::optional<double> f;
  // Cross-pair scores against within-side V_pg scores.
  std::optional<double> t_statistic;
  std::optional<double> p_value;
  // Same against V_gp.
  std::optional<double> t_statistic_gp;
  std::optional<double> p_value_gp;
  int n_used = 0;
  std::optional<int> k_folds;  // empty for the per-sample path

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);

/// Full evaluation of one fairpair set. With `k`, B and V are taken over
/// fold aggregates (k^2 cross pairs, C(k,2) within pairs) and the t-tests
/// use fold-level scores.
MetricsRecord evaluate_prompt(const FairPairSet& fp, const scoring::Phi& phi,
                              std::optional<int> k = std::nullopt, std::uint64_t seed = 0);

struct CurvePoint {
  int n_used = 0;
  double b = 0.0;
  double v_pg = 0.0;
  double v_gp = 0.0;
};

/// B and V on the first m samples of each side for m = step, 2 step, ..., n
/// (n appended when step does not divide it). Prefixes shorter than two
/// samples are skipped.
std::vector<CurvePoint> convergence_curve(const FairPairSet& fp, const scoring::Phi& phi,
                                          int step);

struct KFoldPoint {
  int k = 0;
  double b = 0.0;
  double v_pg = 0.0;
  double v_gp = 0.0;
  std::optional<double> f;
};

std::vector<KFoldPoint> kfold_sweep(const FairPairSet& fp, const scoring::Phi& phi,
                                    std::span<const int> ks, std::uint64_t seed);

}  // namespace fairpair::metrics
