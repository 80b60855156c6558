#include "fairpair/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <random>
#include <thread>

#include "fairpair/digest.hpp"
#include "fairpair/error.hpp"
#include "fairpair/perturbation.hpp"
#include "fairpair/stats.hpp"

namespace fairpair::metrics {

using scoring::Feature;
using scoring::Phi;

namespace {

// Runs fn(row) for every row, spreading rows over threads when the work is
// large. Each row writes a disjoint slice, so results do not depend on the
// schedule.
template <typename Fn>
void for_each_row(std::size_t rows, std::size_t cells, Fn&& fn) {
  constexpr std::size_t kParallelThreshold = 40000;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      cells < kParallelThreshold ? 1 : std::min<std::size_t>({hw, 8, rows});
  if (workers <= 1) {
    for (std::size_t r = 0; r < rows; ++r) fn(r);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (auto r = next.fetch_add(1); r < rows; r = next.fetch_add(1)) fn(r);
    });
  }
}

std::size_t triangle_offset(std::size_t i, std::size_t n) { return i * n - i * (i + 1) / 2; }

std::vector<double> cross_matrix(std::span<const Feature> pg, std::span<const Feature> gp,
                                 const Phi& phi) {
  std::vector<double> scores(pg.size() * gp.size());
  for_each_row(pg.size(), scores.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < gp.size(); ++j) {
      scores[i * gp.size() + j] = phi.compare(pg[i], gp[j]);
    }
  });
  return scores;
}

std::vector<double> within_pairs(std::span<const Feature> side, const Phi& phi) {
  const std::size_t n = side.size();
  std::vector<double> scores(n * (n - 1) / 2);
  for_each_row(n, scores.size(), [&](std::size_t i) {
    const std::size_t base = triangle_offset(i, n);
    for (std::size_t j = i + 1; j < n; ++j) scores[base + (j - i - 1)] = phi.compare(side[i], side[j]);
  });
  return scores;
}

std::vector<Feature> featurize_all(std::span<const std::string> texts, const Phi& phi) {
  std::vector<Feature> out(texts.size());
  for_each_row(texts.size(), texts.size() * 64,
               [&](std::size_t i) { out[i] = phi.featurize(texts[i]); });
  return out;
}

double sum_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

std::optional<stats::TTestResult> try_t_test(std::span<const double> xs,
                                             std::span<const double> ys) {
  try {
    return stats::welch_t_test(xs, ys);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDegenerateVariance ||
        e.code() == ErrorCode::kInsufficientSamples) {
      return std::nullopt;
    }
    throw;
  }
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// FairPairSet

FairPairSet make_fairpair_set(std::string prompt_id, std::vector<IndexedText> pg,
                              std::vector<IndexedText> gp, std::vector<DroppedSample> dropped,
                              std::string_view source_name) {
  auto by_index = [](const IndexedText& a, const IndexedText& b) { return a.index < b.index; };
  std::sort(pg.begin(), pg.end(), by_index);
  std::sort(gp.begin(), gp.end(), by_index);

  if (!source_name.empty()) {
    auto strip = [&](std::vector<IndexedText>& side, const char* label) {
      std::erase_if(side, [&](const IndexedText& t) {
        if (!perturbation::contains_word(t.text, source_name)) return false;
        dropped.push_back({label, t.index, "residual_source_entity"});
        return true;
      });
    };
    strip(pg, "pg");
    strip(gp, "gp");
  }

  const std::size_t n = std::min(pg.size(), gp.size());
  for (std::size_t i = n; i < pg.size(); ++i) dropped.push_back({"pg", pg[i].index, "equalization"});
  for (std::size_t i = n; i < gp.size(); ++i) dropped.push_back({"gp", gp[i].index, "equalization"});
  pg.resize(n);
  gp.resize(n);

  FairPairSet fp;
  fp.prompt_id = std::move(prompt_id);
  fp.dropped = std::move(dropped);
  for (auto& t : pg) {
    fp.pg_indices.push_back(t.index);
    fp.side_pg.push_back(std::move(t.text));
  }
  for (auto& t : gp) {
    fp.gp_indices.push_back(t.index);
    fp.side_gp.push_back(std::move(t.text));
  }
  return fp;
}

FairPairSet make_fairpair_set(std::string prompt_id, std::vector<std::string> pg,
                              std::vector<std::string> gp) {
  std::vector<IndexedText> a;
  std::vector<IndexedText> b;
  for (std::size_t i = 0; i < pg.size(); ++i) a.push_back({static_cast<int>(i), std::move(pg[i])});
  for (std::size_t i = 0; i < gp.size(); ++i) b.push_back({static_cast<int>(i), std::move(gp[i])});
  return make_fairpair_set(std::move(prompt_id), std::move(a), std::move(b));
}

// ---------------------------------------------------------------------------
// Core quantities

PairScores bias_from_features(std::span<const Feature> pg, std::span<const Feature> gp,
                              const Phi& phi) {
  if (pg.empty() || gp.empty()) throw Error(ErrorCode::kEmptyInput, "bias needs two non-empty sides");
  PairScores out;
  out.scores = cross_matrix(pg, gp, phi);
  out.value = sum_of(out.scores) / (static_cast<double>(pg.size()) * static_cast<double>(gp.size()));
  return out;
}

PairScores variability_from_features(std::span<const Feature> side, const Phi& phi) {
  if (side.size() < 2) {
    throw Error(ErrorCode::kInsufficientSamples, "sampling variability needs at least two samples");
  }
  PairScores out;
  out.scores = within_pairs(side, phi);
  out.value = sum_of(out.scores) / static_cast<double>(out.scores.size());
  return out;
}

PairScores bias(std::span<const std::string> side_pg, std::span<const std::string> side_gp,
                const Phi& phi) {
  if (side_pg.empty() || side_gp.empty()) {
    throw Error(ErrorCode::kEmptyInput, "bias needs two non-empty sides");
  }
  const auto pg = featurize_all(side_pg, phi);
  const auto gp = featurize_all(side_gp, phi);
  return bias_from_features(pg, gp, phi);
}

PairScores sampling_variability(std::span<const std::string> side, const Phi& phi) {
  if (side.size() < 2) {
    throw Error(ErrorCode::kInsufficientSamples, "sampling variability needs at least two samples");
  }
  const auto features = featurize_all(side, phi);
  return variability_from_features(features, phi);
}

std::optional<double> fairpair_metric(double b, double v_pg, double v_gp) {
  if (b < 0.0 || v_pg < 0.0 || v_gp < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "FairPair inputs must be non-negative");
  }
  if (v_pg == 0.0 || v_gp == 0.0) return std::nullopt;
  return b * b / (v_gp * v_pg);
}

// ---------------------------------------------------------------------------
// k-fold

std::vector<std::size_t> fold_sizes(std::size_t n, std::size_t k) {
  if (k < 2 || k > n) {
    throw Error(ErrorCode::kInvalidArgument, "k must satisfy 2 <= k <= n (k=" +
                                                 std::to_string(k) + ", n=" + std::to_string(n) + ")");
  }
  std::vector<std::size_t> sizes(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++sizes[i];
  return sizes;
}

std::vector<Feature> kfold_aggregate_features(std::span<const Feature> side, int k, const Phi& phi,
                                              std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kInvalidArgument, "k must be at least 2");
  const auto sizes = fold_sizes(side.size(), static_cast<std::size_t>(k));
  std::vector<std::size_t> order(side.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (static_cast<std::size_t>(k) != side.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Feature> aggregates;
  aggregates.reserve(sizes.size());
  std::size_t cursor = 0;
  std::vector<Feature> members;
  for (const auto size : sizes) {
    members.clear();
    for (std::size_t m = 0; m < size; ++m) members.push_back(side[order[cursor++]]);
    aggregates.push_back(phi.aggregate(members));
  }
  return aggregates;
}

std::vector<Feature> kfold_aggregate(std::span<const std::string> side, int k, const Phi& phi,
                                     std::uint64_t seed) {
  const auto features = featurize_all(side, phi);
  return kfold_aggregate_features(features, k, phi, seed);
}

// ---------------------------------------------------------------------------
// Evaluation

MetricsRecord evaluate_prompt(const FairPairSet& fp, const Phi& phi, std::optional<int> k,
                              std::uint64_t seed) {
  if (fp.side_pg.size() != fp.side_gp.size()) {
    throw Error(ErrorCode::kInvalidArgument, "fairpair sides differ in length");
  }
  if (fp.n() < 2) {
    throw Error(ErrorCode::kInsufficientSamples,
                "prompt '" + fp.prompt_id + "' has " + std::to_string(fp.n()) + " usable samples");
  }
  auto pg = featurize_all(fp.side_pg, phi);
  auto gp = featurize_all(fp.side_gp, phi);
  if (k) {
    pg = kfold_aggregate_features(pg, *k, phi, mix_seed(seed, 0));
    gp = kfold_aggregate_features(gp, *k, phi, mix_seed(seed, 1));
  }
  const auto cross = bias_from_features(pg, gp, phi);
  const auto within_pg = variability_from_features(pg, phi);
  const auto within_gp = variability_from_features(gp, phi);

  MetricsRecord r;
  r.prompt_id = fp.prompt_id;
  r.phi_label = phi.label();
  r.b = cross.value;
  r.v_pg = within_pg.value;
  r.v_gp = within_gp.value;
  r.f = fairpair_metric(r.b, r.v_pg, r.v_gp);
  if (const auto t = try_t_test(cross.scores, within_pg.scores)) {
    r.t_statistic = t->t;
    r.p_value = t->p;
  }
  if (const auto t = try_t_test(cross.scores, within_gp.scores)) {
    r.t_statistic_gp = t->t;
    r.p_value_gp = t->p;
  }
  r.n_used = static_cast<int>(fp.n());
  r.k_folds = k;
  return r;
}

std::vector<CurvePoint> convergence_curve(const FairPairSet& fp, const Phi& phi, int step) {
  if (step < 1) throw Error(ErrorCode::kInvalidArgument, "step must be at least 1");
  const std::size_t n = fp.n();
  std::vector<CurvePoint> curve;
  if (n < 2) return curve;

  const auto pg = featurize_all(fp.side_pg, phi);
  const auto gp = featurize_all(fp.side_gp, phi);
  const auto cross = cross_matrix(pg, gp, phi);
  const auto within_pg = within_pairs(pg, phi);
  const auto within_gp = within_pairs(gp, phi);

  std::vector<std::size_t> prefixes;
  for (std::size_t m = static_cast<std::size_t>(step); m <= n; m += static_cast<std::size_t>(step)) {
    prefixes.push_back(m);
  }
  if (prefixes.empty() || prefixes.back() != n) prefixes.push_back(n);

  // Sums run in the same order as bias_from_features / variability_from_features
  // so the m = n point reproduces the full computation exactly.
  auto within_mean = [n](const std::vector<double>& w, std::size_t m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t base = triangle_offset(i, n);
      for (std::size_t j = i + 1; j < m; ++j) s += w[base + (j - i - 1)];
    }
    return s / static_cast<double>(m * (m - 1) / 2);
  };
  for (const auto m : prefixes) {
    if (m < 2) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) s += cross[i * n + j];
    }
    curve.push_back({static_cast<int>(m), s / (static_cast<double>(m) * static_cast<double>(m)),
                     within_mean(within_pg, m), within_mean(within_gp, m)});
  }
  return curve;
}

std::vector<KFoldPoint> kfold_sweep(const FairPairSet& fp, const Phi& phi, std::span<const int> ks,
                                    std::uint64_t seed) {
  std::vector<KFoldPoint> out;
  for (const int k : ks) {
    if (k < 2 || static_cast<std::size_t>(k) > fp.n()) continue;
    const auto r = evaluate_prompt(fp, phi, k, seed);
    out.push_back({k, r.b, r.v_pg, r.v_gp, r.f});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = nlohmann::json{{"prompt_id", r.prompt_id},
                     {"phi", r.phi_label},
                     {"B", r.b},
                     {"V_pg", r.v_pg},
                     {"V_gp", r.v_gp},
                     {"F", opt(r.f)},
                     {"t_statistic", opt(r.t_statistic)},
                     {"p_value", opt(r.p_value)},
                     {"t_statistic_gp", opt(r.t_statistic_gp)},
                     {"p_value_gp", opt(r.p_value_gp)},
                     {"n_used", r.n_used},
                     {"k_folds", opt(r.k_folds)}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  j.at("phi").get_to(r.phi_label);
  j.at("B").get_to(r.b);
  j.at("V_pg").get_to(r.v_pg);
  j.at("V_gp").get_to(r.v_gp);
  r.f = optional_from<double>(j, "F");
  r.t_statistic = optional_from<double>(j, "t_statistic");
  r.p_value = optional_from<double>(j, "p_value");
  r.t_statistic_gp = optional_from<double>(j, "t_statistic_gp");
  r.p_value_gp = optional_from<double>(j, "p_value_gp");
  j.at("n_used").get_to(r.n_used);
  r.k_folds = optional_from<int>(j, "k_folds");
}

}  // namespace fairpair::metrics
