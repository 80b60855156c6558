// Randomized invariants. Generators are seeded so failures reproduce.

#include <cmath>
#include <random>

#include <doctest.h>

#include "fairpair/metrics.hpp"
#include "fairpair/perturbation.hpp"
#include "fairpair/scoring.hpp"
#include "support.hpp"

using namespace fairpair;
using namespace fairpair::metrics;

namespace {

double nested_bias(const std::vector<std::string>& a, const std::vector<std::string>& b, const scoring::Phi& phi) {
  double s = 0.0;
  for (const auto& x : a)
    for (const auto& y : b) s += phi(x, y);
  return s / static_cast<double>(a.size() * b.size());
}

double nested_variability(const std::vector<std::string>& a, const scoring::Phi& phi) {
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      s += phi(a[i], a[j]);
      ++pairs;
    }
  return s / static_cast<double>(pairs);
}

bool close(double a, double b, double rel = 1e-12) {
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("phi: identity, symmetry and range over random pairs") {
  std::mt19937_64 rng(2024);
  const scoring::JaccardPhi jaccard;
  const scoring::JaccardPhi multiset(scoring::JaccardMode::kMultiset);
  const scoring::SentimentPhi sentiment(testing::small_lexicon());
  for (int i = 0; i < 1000; ++i) {
    const auto u = testing::random_text(rng);
    const auto v = testing::random_text(rng);
    for (const scoring::Phi* phi : {static_cast<const scoring::Phi*>(&jaccard),
                                    static_cast<const scoring::Phi*>(&multiset),
                                    static_cast<const scoring::Phi*>(&sentiment)}) {
      CHECK((*phi)(u, u) == 0.0);
      CHECK((*phi)(u, v) == (*phi)(v, u));
      CHECK((*phi)(u, v) >= 0.0);
      const double upper = phi->kind() == scoring::PhiKind::kJaccard ? 1.0 : 2.0;
      CHECK((*phi)(u, v) <= upper);
    }
  }
}

TEST_CASE("sentiment score stays inside [-1, 1]") {
  std::mt19937_64 rng(77);
  const auto lex = testing::small_lexicon();
  for (int i = 0; i < 1000; ++i) {
    const double s = scoring::sentiment_score(testing::random_text(rng, 40), *lex);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("bias and variability equal the nested-loop definitions") {
  std::mt19937_64 rng(9);
  const scoring::JaccardPhi jaccard;
  const scoring::SentimentPhi sentiment(testing::small_lexicon());
  std::uniform_int_distribution<int> size(2, 15);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = testing::random_texts(rng, static_cast<std::size_t>(size(rng)));
    const auto b = testing::random_texts(rng, static_cast<std::size_t>(size(rng)));
    for (const scoring::Phi* phi : {static_cast<const scoring::Phi*>(&jaccard), static_cast<const scoring::Phi*>(&sentiment)}) {
      CHECK(close(bias(a, b, *phi).value, nested_bias(a, b, *phi)));
      CHECK(close(sampling_variability(a, *phi).value, nested_variability(a, *phi)));
      CHECK(bias(a, b, *phi).value >= 0.0);
    }
  }
}

TEST_CASE("F is invariant to a common rescaling of B and V") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double b = u(rng), vp = u(rng), vg = u(rng), c = scale(rng);
    const auto f = fairpair_metric(b, vp, vg);
    const auto g = fairpair_metric(c * b, c * vp, c * vg);
    REQUIRE(f.has_value());
    CHECK(close(*f, *g, 1e-12));
  }
}

TEST_CASE("k = n reduces to the per-sample path bit for bit") {
  std::mt19937_64 rng(101);
  const scoring::JaccardPhi jaccard;
  const scoring::SentimentPhi sentiment(testing::small_lexicon());
  std::uniform_int_distribution<int> size(2, 20);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    const auto fp = make_fairpair_set("p", testing::random_texts(rng, n), testing::random_texts(rng, n));
    for (const scoring::Phi* phi : {static_cast<const scoring::Phi*>(&jaccard), static_cast<const scoring::Phi*>(&sentiment)}) {
      const auto plain = evaluate_prompt(fp, *phi);
      const auto folded = evaluate_prompt(fp, *phi, static_cast<int>(n), rng());
      CHECK(plain.b == folded.b);
      CHECK(plain.v_pg == folded.v_pg);
      CHECK(plain.v_gp == folded.v_gp);
      CHECK(plain.f == folded.f);
      CHECK(plain.p_value == folded.p_value);
    }
  }
}

TEST_CASE("fold sizes always partition n") {
  for (std::size_t n = 2; n < 60; ++n) {
    for (std::size_t k = 2; k <= n; ++k) {
      const auto sizes = fold_sizes(n, k);
      std::size_t total = 0;
      for (auto s : sizes) {
        total += s;
        CHECK(s >= n / k);
        CHECK(s <= n / k + 1);
      }
      CHECK(total == n);
    }
  }
}

TEST_CASE("rule perturbation is idempotent on random text") {
  std::mt19937_64 rng(55);
  const auto p = perturbation::EntityPerturbation::male_to_female("John", "Jane");
  static const std::vector<std::string> words{"John", "he", "His", "HIM", "himself", "man", "Mr", "the", "doctor",
                                              "she", "Jane", "works", "johnny", "mankind"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(0, 20);
  for (int i = 0; i < 1000; ++i) {
    std::string text;
    for (int w = len(rng); w > 0; --w) text += words[pick(rng)] + (w % 3 ? " " : ". ");
    const auto once = perturbation::rule_perturb(text, p);
    CHECK(perturbation::rule_perturb(once, p) == once);
    CHECK(scoring::tokenize(once).size() == scoring::tokenize(text).size());
    CHECK_FALSE(perturbation::contains_word(once, "John"));
  }
}
