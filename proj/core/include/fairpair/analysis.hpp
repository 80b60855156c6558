#pragma once

// Differential n-gram frequencies between the two grounded sides and a
// generation-length comparison.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairpair::analysis {

using Ngram = std::vector<std::string>;

struct NgramTable {
  int n = 1;
  std::map<Ngram, std::int64_t> counts;
  std::int64_t total = 0;

  /// Tables combine by summation; order does not matter.
  void merge(const NgramTable& other);
};

/// Sliding windows over each text's tokens; no window spans two texts.
NgramTable ngram_counts(std::span<const std::string> texts, int n);

struct DifferentialEntry {
  std::string ngram;  // tokens joined by single spaces
  std::int64_t count_pg = 0;
  std::int64_t count_gp = 0;
  double freq_pg = 0.0;  // count / total, unsmoothed
  double freq_gp = 0.0;
  double ratio = 1.0;  // add-one smoothed pg / gp
  double log_ratio = 0.0;
};

struct Differential {
  int n = 1;
  std::vector<DifferentialEntry> pg_leaning;  // log_ratio > 0
  std::vector<DifferentialEntry> gp_leaning;  // log_ratio < 0
};

/// Ranks n-grams by |log ratio| of add-one smoothed relative frequencies
/// ((c + 1) / (total + V), V = distinct n-grams across both tables). Keeps
/// n-grams whose larger count reaches min_count and returns top_k per
/// direction. When `stop_unigrams` is given, n-grams made only of those
/// words are skipped.
Differential differential_ngrams(const NgramTable& pg, const NgramTable& gp, int top_k,
                                 std::int64_t min_count,
                                 const std::unordered_set<std::string>* stop_unigrams = nullptr);

/// The `count` most frequent unigrams (ties broken alphabetically).
std::unordered_set<std::string> most_frequent_unigrams(std::span<const std::string> texts,
                                                       std::size_t count = 50);

struct LengthComparison {
  double mean_pg = 0.0;
  double mean_gp = 0.0;
  double t = 0.0;
  double p = 1.0;
};

/// Token-count means per side and a Welch t-test on the lengths. Two
/// constant sides give t = 0, p = 1 when equal and p = 0 otherwise.
LengthComparison length_comparison(std::span<const std::string> side_pg,
                                   std::span<const std::string> side_gp);

/// Columns: ngram,freq_left,freq_right,log_ratio (pg-leaning rows first).
void write_differential_csv(std::ostream& out, const Differential& diff);

nlohmann::json differential_plot_json(const Differential& diff);

}  // namespace fairpair::analysis
