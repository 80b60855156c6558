#include <cmath>
#include <random>

#include <doctest.h>

#include "fairpair/error.hpp"
#include "fairpair/metrics.hpp"
#include "support.hpp"

using namespace fairpair;
using namespace fairpair::metrics;
using scoring::Feature;
using scoring::JaccardPhi;
using scoring::SentimentPhi;

namespace {
using Texts = std::vector<std::string>;
}

TEST_CASE("bias examples") {
  const JaccardPhi phi;
  const Texts same{"t u", "t u", "t u"};
  CHECK(bias(same, same, phi).value == 0.0);

  const Texts pg{"a b", "a c"};
  const Texts gp{"a b", "d e"};
  const auto b = bias(pg, gp, phi);
  CHECK(b.value == doctest::Approx((0.0 + 1.0 + 2.0 / 3.0 + 1.0) / 4.0));
  CHECK(b.scores.size() == 4);
  CHECK(b.scores[1] == 1.0);  // row-major: (pg0, gp1)
  CHECK(bias(gp, pg, phi).value == doctest::Approx(b.value));

  const Texts empty;
  CHECK_THROWS_AS(bias(empty, gp, phi), Error);
}

TEST_CASE("sampling variability examples") {
  const JaccardPhi phi;
  const Texts same{"x", "x", "x"};
  CHECK(sampling_variability(same, phi).value == 0.0);
  const Texts side{"a b", "a c", "a d"};
  const auto v = sampling_variability(side, phi);
  CHECK(v.value == doctest::Approx(2.0 / 3.0));
  CHECK(v.scores.size() == 3);
  const Texts one{"a"};
  try {
    sampling_variability(one, phi);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientSamples);
  }
}

TEST_CASE("fairpair metric arithmetic") {
  CHECK(*fairpair_metric(0.858, 0.853, 0.859) == doctest::Approx(1.0047).epsilon(1e-4));
  CHECK(*fairpair_metric(0.192, 0.163, 0.208) == doctest::Approx(1.0873).epsilon(1e-4));
  CHECK(*fairpair_metric(0.37, 0.37, 0.37) == 1.0);
  CHECK_FALSE(fairpair_metric(0.5, 0.0, 0.3).has_value());
  CHECK_FALSE(fairpair_metric(0.5, 0.3, 0.0).has_value());
  CHECK_THROWS_AS(fairpair_metric(-0.1, 0.3, 0.3), Error);
}

TEST_CASE("fold sizes") {
  CHECK(fold_sizes(10, 5) == std::vector<std::size_t>{2, 2, 2, 2, 2});
  CHECK(fold_sizes(10, 3) == std::vector<std::size_t>{4, 3, 3});
  CHECK(fold_sizes(4, 4) == std::vector<std::size_t>{1, 1, 1, 1});
  CHECK_THROWS_AS(fold_sizes(4, 5), Error);
  CHECK_THROWS_AS(fold_sizes(4, 1), Error);
}

TEST_CASE("fold aggregates: union for jaccard, mean for sentiment") {
  const JaccardPhi jaccard;
  const std::vector<Feature> f1{jaccard.featurize("a b"), jaccard.featurize("a c")};
  const std::vector<Feature> f2{jaccard.featurize("a d"), jaccard.featurize("b d")};
  CHECK(jaccard.compare(jaccard.aggregate(f1), jaccard.aggregate(f2)) == doctest::Approx(0.5));

  const SentimentPhi sentiment(testing::small_lexicon());
  const std::vector<Feature> s1{0.2, 0.4};
  const std::vector<Feature> s2{0.1, 0.1};
  CHECK(sentiment.compare(sentiment.aggregate(s1), sentiment.aggregate(s2)) == doctest::Approx(0.2));
}

TEST_CASE("kfold aggregation partitions the samples") {
  const JaccardPhi phi;
  const Texts side{"a", "b", "c", "d", "e", "f", "g"};
  const auto folds = kfold_aggregate(side, 3, phi, 11);
  REQUIRE(folds.size() == 3);
  std::vector<std::size_t> sizes;
  scoring::TokenSet all;
  for (const auto& f : folds) {
    const auto& set = std::get<scoring::TokenSet>(f);
    sizes.push_back(set.size());
    all.merge(set);
  }
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{2, 2, 3});
  CHECK(all.size() == 7);
  // same seed, same folds
  const auto again = kfold_aggregate(side, 3, phi, 11);
  for (std::size_t i = 0; i < folds.size(); ++i) {
    CHECK(std::get<scoring::TokenSet>(folds[i]).tokens() == std::get<scoring::TokenSet>(again[i]).tokens());
  }
  CHECK_THROWS_AS(kfold_aggregate(side, 8, phi, 1), Error);
  CHECK_THROWS_AS(kfold_aggregate(side, 1, phi, 1), Error);
}

TEST_CASE("evaluate_prompt with k = n equals the per-sample path") {
  std::mt19937_64 rng(5);
  const auto fp = make_fairpair_set("p", testing::random_texts(rng, 30), testing::random_texts(rng, 30));
  const JaccardPhi jaccard;
  const SentimentPhi sentiment(testing::small_lexicon());
  for (const scoring::Phi* phi : {static_cast<const scoring::Phi*>(&jaccard), static_cast<const scoring::Phi*>(&sentiment)}) {
    auto per_sample = evaluate_prompt(fp, *phi);
    auto folded = evaluate_prompt(fp, *phi, 30, 99);
    CHECK(folded.k_folds == 30);
    folded.k_folds.reset();
    CHECK(per_sample == folded);
  }
}

TEST_CASE("evaluate_prompt record contents") {
  const JaccardPhi phi;
  const auto fp = make_fairpair_set("p1", Texts{"a b", "a c", "a d"}, Texts{"a b", "d e", "x y"});
  const auto r = evaluate_prompt(fp, phi);
  CHECK(r.prompt_id == "p1");
  CHECK(r.phi_label == "jaccard");
  CHECK(r.n_used == 3);
  CHECK_FALSE(r.k_folds.has_value());
  CHECK(r.v_pg == doctest::Approx(2.0 / 3.0));
  REQUIRE(r.f.has_value());
  CHECK(*r.f == doctest::Approx(r.b * r.b / (r.v_pg * r.v_gp)));
  REQUIRE(r.p_value.has_value());
  CHECK(*r.p_value >= 0.0);
  CHECK(*r.p_value <= 1.0);

  const auto tiny = make_fairpair_set("p2", Texts{"a"}, Texts{"b"});
  CHECK_THROWS_AS(evaluate_prompt(tiny, phi), Error);
}

TEST_CASE("degenerate sides give undefined F and no t-test") {
  const JaccardPhi phi;
  const auto fp = make_fairpair_set("p", Texts{"a", "a", "a"}, Texts{"a", "a", "a"});
  const auto r = evaluate_prompt(fp, phi);
  CHECK(r.b == 0.0);
  CHECK_FALSE(r.f.has_value());
  CHECK_FALSE(r.p_value.has_value());
}

TEST_CASE("make_fairpair_set equalizes and drops residual source mentions") {
  std::vector<IndexedText> pg{{2, "Jane two"}, {0, "Jane zero"}, {1, "John slipped in"}};
  std::vector<IndexedText> gp{{0, "Jane a"}, {1, "Jane b"}, {2, "Jane c"}, {3, "Jane d"}};
  const auto fp = make_fairpair_set("p", pg, gp, {}, "John");
  CHECK(fp.n() == 2);
  CHECK(fp.pg_indices == std::vector<int>{0, 2});
  CHECK(fp.gp_indices == std::vector<int>{0, 1});
  REQUIRE(fp.dropped.size() == 3);
  CHECK(fp.dropped[0] == DroppedSample{"pg", 1, "residual_source_entity"});
  CHECK(fp.dropped[1] == DroppedSample{"gp", 2, "equalization"});
  CHECK(fp.dropped[2] == DroppedSample{"gp", 3, "equalization"});
}

TEST_CASE("MetricsRecord JSON round trip keeps full precision and nulls") {
  MetricsRecord r;
  r.prompt_id = "x";
  r.phi_label = "jaccard";
  r.b = 0.1 + 0.2;
  r.v_pg = 1.0 / 3.0;
  r.v_gp = 2.0 / 7.0;
  r.f = 0.123456789012345678;
  r.n_used = 12;
  r.k_folds = 4;
  const nlohmann::json j = r;
  CHECK(j["F"].get<double>() == *r.f);
  CHECK(j["p_value"].is_null());
  CHECK(j.get<MetricsRecord>() == r);
}

TEST_CASE("convergence curve") {
  std::mt19937_64 rng(1);
  const auto fp = make_fairpair_set("p", testing::random_texts(rng, 100), testing::random_texts(rng, 100));
  const JaccardPhi phi;
  const auto curve = convergence_curve(fp, phi, 10);
  REQUIRE(curve.size() == 10);
  CHECK(curve.front().n_used == 10);
  CHECK(curve.back().n_used == 100);
  const auto full = evaluate_prompt(fp, phi);
  CHECK(curve.back().b == full.b);
  CHECK(curve.back().v_pg == full.v_pg);
  CHECK(curve.back().v_gp == full.v_gp);

  // prefix point equals evaluating the prefix directly
  const auto prefix = make_fairpair_set("p", Texts(fp.side_pg.begin(), fp.side_pg.begin() + 30),
                                        Texts(fp.side_gp.begin(), fp.side_gp.begin() + 30));
  const auto direct = evaluate_prompt(prefix, phi);
  CHECK(curve[2].b == doctest::Approx(direct.b).epsilon(1e-12));
  CHECK(curve[2].v_pg == doctest::Approx(direct.v_pg).epsilon(1e-12));

  // a step that does not divide n still ends on n
  const auto odd = convergence_curve(fp, phi, 30);
  CHECK(odd.back().n_used == 100);
  CHECK(odd.size() == 4);
  CHECK_THROWS_AS(convergence_curve(fp, phi, 0), Error);
}

TEST_CASE("kfold sweep skips infeasible k") {
  std::mt19937_64 rng(2);
  const auto fp = make_fairpair_set("p", testing::random_texts(rng, 20), testing::random_texts(rng, 20));
  const JaccardPhi phi;
  const std::vector<int> ks{1, 2, 5, 20, 50};
  const auto sweep = kfold_sweep(fp, phi, ks, 3);
  REQUIRE(sweep.size() == 3);
  CHECK(sweep[0].k == 2);
  CHECK(sweep[2].k == 20);
  CHECK(sweep[2].b == evaluate_prompt(fp, phi).b);
}

TEST_CASE("large inputs take the threaded path with identical results") {
  std::mt19937_64 rng(3);
  const auto a = testing::random_texts(rng, 300);
  const auto b = testing::random_texts(rng, 300);
  const JaccardPhi phi;
  const auto threaded = bias(a, b, phi);
  double s = 0.0;
  for (const auto& x : a) {
    for (const auto& y : b) s += phi(x, y);
  }
  CHECK(threaded.value == s / (300.0 * 300.0));
}
