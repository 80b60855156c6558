#include "fairpair/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "fairpair/error.hpp"
#include "fairpair/scoring.hpp"
#include "fairpair/stats.hpp"

namespace fairpair::analysis {

namespace {

std::string join(const Ngram& gram) {
  std::string out;
  for (std::size_t i = 0; i < gram.size(); ++i) {
    if (i) out += ' ';
    out += gram[i];
  }
  return out;
}

bool ranks_before(const DifferentialEntry& a, const DifferentialEntry& b) {
  const double ma = std::abs(a.log_ratio);
  const double mb = std::abs(b.log_ratio);
  if (ma != mb) return ma > mb;
  const auto ta = a.count_pg + a.count_gp;
  const auto tb = b.count_pg + b.count_gp;
  if (ta != tb) return ta > tb;
  return a.ngram < b.ngram;
}

nlohmann::json entry_json(const DifferentialEntry& e) {
  return {{"ngram", e.ngram},         {"count_left", e.count_pg}, {"count_right", e.count_gp},
          {"freq_left", e.freq_pg},   {"freq_right", e.freq_gp},  {"ratio", e.ratio},
          {"log_ratio", e.log_ratio}};
}

}  // namespace

void NgramTable::merge(const NgramTable& other) {
  if (other.n != n) throw Error(ErrorCode::kInvalidArgument, "cannot merge tables of different n");
  for (const auto& [gram, c] : other.counts) counts[gram] += c;
  total += other.total;
}

NgramTable ngram_counts(std::span<const std::string> texts, int n) {
  if (n < 1 || n > 4) throw Error(ErrorCode::kInvalidArgument, "n-gram order must be in [1, 4]");
  NgramTable table;
  table.n = n;
  const auto width = static_cast<std::size_t>(n);
  for (const auto& text : texts) {
    const auto tokens = scoring::tokenize(text);
    if (tokens.size() < width) continue;
    for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
      ++table.counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i + width))];
      ++table.total;
    }
  }
  return table;
}

Differential differential_ngrams(const NgramTable& pg, const NgramTable& gp, int top_k,
                                 std::int64_t min_count,
                                 const std::unordered_set<std::string>* stop_unigrams) {
  if (top_k < 1) throw Error(ErrorCode::kInvalidArgument, "top_k must be at least 1");
  if (pg.n != gp.n) throw Error(ErrorCode::kInvalidArgument, "tables have different n");

  std::map<Ngram, std::pair<std::int64_t, std::int64_t>> joint;
  for (const auto& [gram, c] : pg.counts) joint[gram].first = c;
  for (const auto& [gram, c] : gp.counts) joint[gram].second = c;
  const double vocab = static_cast<double>(joint.size());
  const double denom_pg = static_cast<double>(pg.total) + vocab;
  const double denom_gp = static_cast<double>(gp.total) + vocab;

  Differential diff;
  diff.n = pg.n;
  for (const auto& [gram, counts] : joint) {
    const auto [c_pg, c_gp] = counts;
    if (std::max(c_pg, c_gp) < min_count) continue;
    if (stop_unigrams &&
        std::all_of(gram.begin(), gram.end(),
                    [&](const std::string& t) { return stop_unigrams->contains(t); })) {
      continue;
    }
    DifferentialEntry e;
    e.ngram = join(gram);
    e.count_pg = c_pg;
    e.count_gp = c_gp;
    e.freq_pg = pg.total ? static_cast<double>(c_pg) / static_cast<double>(pg.total) : 0.0;
    e.freq_gp = gp.total ? static_cast<double>(c_gp) / static_cast<double>(gp.total) : 0.0;
    const double p_pg = (static_cast<double>(c_pg) + 1.0) / denom_pg;
    const double p_gp = (static_cast<double>(c_gp) + 1.0) / denom_gp;
    e.log_ratio = std::log(p_pg) - std::log(p_gp);
    e.ratio = p_pg / p_gp;
    if (e.log_ratio > 0.0) {
      diff.pg_leaning.push_back(std::move(e));
    } else if (e.log_ratio < 0.0) {
      diff.gp_leaning.push_back(std::move(e));
    }
  }
  for (auto* list : {&diff.pg_leaning, &diff.gp_leaning}) {
    std::sort(list->begin(), list->end(), ranks_before);
    if (list->size() > static_cast<std::size_t>(top_k)) list->resize(static_cast<std::size_t>(top_k));
  }
  return diff;
}

std::unordered_set<std::string> most_frequent_unigrams(std::span<const std::string> texts,
                                                       std::size_t count) {
  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& text : texts) {
    for (auto& t : scoring::tokenize(text)) ++freq[std::move(t)];
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::unordered_set<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < count; ++i) out.insert(ranked[i].first);
  return out;
}

LengthComparison length_comparison(std::span<const std::string> side_pg,
                                   std::span<const std::string> side_gp) {
  if (side_pg.empty() || side_gp.empty()) {
    throw Error(ErrorCode::kEmptyInput, "length comparison needs two non-empty sides");
  }
  auto lengths = [](std::span<const std::string> side) {
    std::vector<double> out;
    out.reserve(side.size());
    for (const auto& t : side) out.push_back(static_cast<double>(scoring::tokenize(t).size()));
    return out;
  };
  const auto a = lengths(side_pg);
  const auto b = lengths(side_gp);
  LengthComparison r;
  r.mean_pg = stats::mean(a);
  r.mean_gp = stats::mean(b);
  try {
    const auto t = stats::welch_t_test(a, b);
    r.t = t.t;
    r.p = t.p;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDegenerateVariance) throw;
    if (r.mean_pg == r.mean_gp) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = r.mean_pg > r.mean_gp ? std::numeric_limits<double>::infinity()
                                  : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
  }
  return r;
}

void write_differential_csv(std::ostream& out, const Differential& diff) {
  out << "ngram,freq_left,freq_right,log_ratio\n";
  out.precision(17);
  for (const auto* list : {&diff.pg_leaning, &diff.gp_leaning}) {
    for (const auto& e : *list) {
      out << e.ngram << ',' << e.freq_pg << ',' << e.freq_gp << ',' << e.log_ratio << '\n';
    }
  }
}

nlohmann::json differential_plot_json(const Differential& diff) {
  nlohmann::json left = nlohmann::json::array();
  nlohmann::json right = nlohmann::json::array();
  for (const auto& e : diff.pg_leaning) left.push_back(entry_json(e));
  for (const auto& e : diff.gp_leaning) right.push_back(entry_json(e));
  return {{"n", diff.n},
          {"left_label", "p(g(x))"},
          {"right_label", "g(p(x))"},
          {"left", std::move(left)},
          {"right", std::move(right)}};
}

}  // namespace fairpair::analysis
