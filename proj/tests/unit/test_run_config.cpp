#include <cstdlib>

#include <doctest.h>

#include "fairpair/error.hpp"
#include "fairpair/run_config.hpp"
#include "support.hpp"

using namespace fairpair;
using nlohmann::json;
using store::Stage;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no fairpair::Error thrown");
  return ErrorCode::kConfig;
}

}  // namespace

TEST_CASE("defaults round trip through JSON") {
  const RunConfig c;
  const auto j = c.to_json();
  const auto back = RunConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.config_digest() == c.config_digest());
  CHECK(c.sampling.top_p == 0.9);
  CHECK(c.sampling.max_new_tokens == 128);
  CHECK(c.sampling.n_samples == 100);
  CHECK(c.perturbation.tau == 0.15);
}

TEST_CASE("unknown keys and bad enums are rejected") {
  CHECK(code_of([] { RunConfig::from_json(json{{"runid", "x"}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { RunConfig::from_json(json{{"sampling", {{"temperature", 1.0}}}}); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { RunConfig::from_json(json{{"scoring", {{"phi", "toxicity"}}}}); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { RunConfig::from_json(json{{"backend", {{"kind", "magic"}}}}); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { RunConfig::from_json(json{{"sampling", {{"n_samples", "ten"}}}}); }) ==
        ErrorCode::kConfig);
}

TEST_CASE("api keys are interpolated from the environment and never serialized") {
  ::setenv("FAIRPAIR_TEST_KEY", "s3cret", 1);
  const auto c = RunConfig::from_json(json{
      {"backend", {{"kind", "remote"}, {"remote", {{"url", "http://h/v1"}, {"model", "m"}, {"api_key", "${FAIRPAIR_TEST_KEY}"}}}}}});
  CHECK(c.backend.remote.api_key == "s3cret");
  CHECK(c.to_json().dump().find("s3cret") == std::string::npos);
  CHECK(interpolate_env("Bearer ${FAIRPAIR_TEST_KEY}!") == "Bearer s3cret!");
  CHECK(interpolate_env("plain") == "plain");
  ::unsetenv("FAIRPAIR_TEST_KEY_MISSING");
  CHECK(code_of([] { interpolate_env("${FAIRPAIR_TEST_KEY_MISSING}"); }) == ErrorCode::kConfig);
  // the key does not feed any digest
  auto other = c;
  other.backend.remote.api_key = "different";
  CHECK(other.config_digest() == c.config_digest());
}

TEST_CASE("stage digests change exactly when an input of that stage changes") {
  const RunConfig base;
  auto later = base;
  later.metrics.k = 5;
  CHECK(later.stage_digest(Stage::kScoring) == base.stage_digest(Stage::kScoring));
  CHECK(later.stage_digest(Stage::kMetrics) != base.stage_digest(Stage::kMetrics));

  auto gen = base;
  gen.sampling.seed = 3;
  CHECK(gen.stage_digest(Stage::kCorpus) == base.stage_digest(Stage::kCorpus));
  CHECK(gen.stage_digest(Stage::kGeneration) != base.stage_digest(Stage::kGeneration));
  CHECK(gen.stage_digest(Stage::kMetrics) != base.stage_digest(Stage::kMetrics));

  auto same = base;
  same.run_id = "another";
  CHECK(same.stage_digest(Stage::kMetrics) == base.stage_digest(Stage::kMetrics));

  auto tau = base;
  tau.perturbation.tau = 0.2;
  CHECK(tau.stage_digest(Stage::kPerturbation) == base.stage_digest(Stage::kPerturbation));
  CHECK(tau.stage_digest(Stage::kValidation) != base.stage_digest(Stage::kValidation));
}

TEST_CASE("lexicon file content feeds the scoring digest") {
  testing::TempDir dir;
  testing::write_file(dir / "lex.tsv", "good\t2.0\n");
  auto c = RunConfig::from_json(json{{"scoring", {{"phi", "sentiment"}, {"lexicon", "lex.tsv"}}}}, dir.path());
  c.validate();
  const auto before = c.stage_digest(Stage::kScoring);
  CHECK(c.stage_digest(Stage::kScoring) == before);
  testing::write_file(dir / "lex.tsv", "good\t2.5\n");
  CHECK(c.stage_digest(Stage::kScoring) != before);
  CHECK(c.resolve("lex.tsv") == dir.path() / "lex.tsv");
}

TEST_CASE("validation") {
  auto c = RunConfig::from_json(json{{"scoring", {{"phi", "sentiment"}}}});
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kConfig);
  c.scoring.lexicon = "/no/such/lexicon.tsv";
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kConfig);

  RunConfig k;
  k.sampling.n_samples = 10;
  k.metrics.k = 11;
  CHECK(code_of([&] { k.validate(); }) == ErrorCode::kConfig);
  k.metrics.k = 1;
  CHECK(code_of([&] { k.validate(); }) == ErrorCode::kConfig);
  k.metrics.k = 10;
  CHECK_NOTHROW(k.validate());

  RunConfig names;
  names.corpus.target_name = names.corpus.source_name;
  CHECK_THROWS_AS(names.validate(), Error);

  RunConfig orders;
  orders.analysis.ngram_orders = {5};
  CHECK(code_of([&] { orders.validate(); }) == ErrorCode::kConfig);

  RunConfig remote;
  remote.backend.kind = BackendKind::kRemote;
  CHECK(code_of([&] { remote.validate(); }) == ErrorCode::kConfig);

  RunConfig replay;
  replay.backend.kind = BackendKind::kReplay;
  replay.backend.replay_path = "/no/such/replay.jsonl";
  CHECK(code_of([&] { replay.validate(); }) == ErrorCode::kConfig);
}

TEST_CASE("load reads a file with comments and resolves relative to it") {
  testing::TempDir dir;
  testing::write_file(dir / "run.json", R"({
    // small run
    "run_id": "r1",
    "output_dir": "out",
    "sampling": {"n_samples": 12, "seed": 4},
    "corpus": {"descriptor_sets": [[["man", "woman"]], []]}
  })");
  const auto c = RunConfig::load(dir / "run.json");
  CHECK(c.run_id == "r1");
  CHECK(c.sampling.n_samples == 12);
  CHECK(c.corpus.descriptor_sets.size() == 2);
  CHECK(c.resolve(c.output_dir) == dir.path() / "out");
  CHECK(code_of([&] { RunConfig::load(dir / "missing.json"); }) != ErrorCode::kKeyCollision);
  testing::write_file(dir / "broken.json", "{not json");
  CHECK(code_of([&] { RunConfig::load(dir / "broken.json"); }) == ErrorCode::kConfig);
}

TEST_CASE("endpoint helpers") {
  EndpointConfig e;
  e.url = "http://h/v1";
  e.timeout_ms = 250;
  e.max_attempts = 2;
  e.initial_backoff_ms = 10;
  CHECK(make_endpoint(e).timeout.count() == 250);
  CHECK(make_retry_policy(e).max_attempts == 2);
  CHECK(make_retry_policy(e).initial_backoff.count() == 10);
}
