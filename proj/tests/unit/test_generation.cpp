#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>
#include <httplib.h>

#include "fairpair/error.hpp"
#include "fairpair/generation.hpp"
#include "fairpair/http_client.hpp"
#include "fairpair/scoring.hpp"
#include "support.hpp"

using namespace fairpair;
using namespace fairpair::generation;

namespace {

SamplingParams params(int n, std::uint64_t seed = 7) {
  SamplingParams p;
  p.n_samples = n;
  p.seed = seed;
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no fairpair::Error thrown");
  return ErrorCode::kConfig;
}

// Completion endpoint on localhost. Fails the first `failures` requests with
// `failure_status`, then answers with `n` choices in reverse index order,
// each echoing the prompt.
class FakeServer {
 public:
  FakeServer(int failures, int failure_status) : failures_(failures), status_(failure_status) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        bodies_.push_back(nlohmann::json::parse(req.body));
        auth_ = req.get_header_value("Authorization");
      }
      if (failures_.fetch_sub(1) > 0) {
        res.status = status_;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      const int n = body["n"].get<int>();
      const std::string prompt = body["prompt"].get<std::string>();
      nlohmann::json choices = nlohmann::json::array();
      for (int i = n - 1; i >= 0; --i) {
        choices.push_back({{"index", i}, {"text", prompt + " sample " + std::to_string(next_++)}});
      }
      res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/completions"; }
  std::vector<nlohmann::json> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::string auth() {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> failures_;
  int status_;
  std::atomic<int> next_{0};
  std::mutex mutex_;
  std::vector<nlohmann::json> bodies_;
  std::string auth_;
};

http::RetryPolicy fast_retry(int attempts = 5) {
  http::RetryPolicy r;
  r.max_attempts = attempts;
  r.initial_backoff = std::chrono::milliseconds(1);
  r.max_backoff = std::chrono::milliseconds(4);
  return r;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic per seed and entity") {
  const auto config = SyntheticBiasConfig::make_default({"John", "Jane"}, 50, 10, 0.3);
  const auto a = synthetic_generate("John", config, 7, 3);
  const auto b = synthetic_generate("John", config, 7, 3);
  REQUIRE(a.samples.size() == 3);
  CHECK(a.samples == b.samples);
  CHECK(synthetic_generate("John", config, 8, 3).samples != a.samples);
  // sample i does not depend on n
  const auto longer = synthetic_generate("John", config, 7, 10);
  for (int i = 0; i < 3; ++i) CHECK(longer.samples[i] == a.samples[i]);
  for (const auto& s : a.samples) {
    const auto n = scoring::tokenize(s.text).size();
    CHECK(n >= 8);
    CHECK(n <= 16);
  }
}

TEST_CASE("skew 1 gives entity-disjoint vocabularies") {
  const auto config = SyntheticBiasConfig::make_default({"John", "Jane"}, 50, 10, 1.0);
  const auto john = synthetic_generate("John", config, 1, 50);
  const auto jane = synthetic_generate("Jane", config, 1, 50);
  std::set<std::string> vj, va;
  for (const auto& s : john.samples)
    for (const auto& t : scoring::tokenize(s.text)) vj.insert(t);
  for (const auto& s : jane.samples)
    for (const auto& t : scoring::tokenize(s.text)) va.insert(t);
  for (const auto& t : vj) CHECK(va.count(t) == 0);
}

TEST_CASE("entity token fraction tracks skew") {
  const auto config = SyntheticBiasConfig::make_default({"John", "Jane"}, 50, 10, 0.3);
  const auto set = synthetic_generate("John", config, 3, 400);
  std::size_t own = 0, total = 0;
  for (const auto& s : set.samples) {
    for (const auto& t : scoring::tokenize(s.text)) {
      ++total;
      if (t.rfind("johnv", 0) == 0) ++own;
    }
  }
  CHECK(static_cast<double>(own) / static_cast<double>(total) == doctest::Approx(0.3).epsilon(0.05 / 0.3));
}

TEST_CASE("skew 0 draws shared tokens uniformly") {
  const auto config = SyntheticBiasConfig::make_default({"John", "Jane"}, 50, 10, 0.0);
  const auto set = synthetic_generate("Jane", config, 11, 1000);
  std::map<std::string, double> counts;
  double total = 0.0;
  for (const auto& s : set.samples) {
    for (const auto& t : scoring::tokenize(s.text)) {
      counts[t] += 1.0;
      total += 1.0;
    }
  }
  CHECK(counts.size() == 50);
  const double expected = total / 50.0;
  double chi2 = 0.0;
  for (const auto& [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(49.0);
  CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 0.01);
}

TEST_CASE("synthetic backend resolves the entity from the prompt") {
  SyntheticBackend backend(SyntheticBiasConfig::make_default({"John", "Jane"}, 50, 10, 1.0));
  const auto set = sample_continuations({"p1:x", "John is a doctor."}, params(5), backend);
  CHECK(set.samples.size() == 5);
  CHECK(set.backend_label == "synthetic");
  for (const auto& s : set.samples) CHECK(s.text.rfind("johnv", 0) == 0);
  CHECK(code_of([&] { sample_continuations({"p", "Alex is here"}, params(5), backend); }) ==
        ErrorCode::kUnknownEntity);
  CHECK(code_of([] { synthetic_generate("Alex", SyntheticBiasConfig::make_default({"John"}, 5, 5, 0.5), 1, 2); }) ==
        ErrorCode::kUnknownEntity);
}

TEST_CASE("synthetic config validation") {
  auto c = SyntheticBiasConfig::make_default({"John"});
  c.skew = 1.5;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kConfig);
  c.skew = 0.0;
  c.length_min = 5;
  c.length_max = 4;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::kConfig);
  SamplingParams p;
  p.top_p = 0.0;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::kConfig);
}

TEST_CASE("replay backend") {
  std::ostringstream lines;
  for (int i = 99; i >= 0; --i) lines << replay_record("p1", {i, "text " + std::to_string(i)}).dump() << "\n";
  lines << R"({"prompt_id":"p2","index":0,"text":"only one","extra":true})" << "\n";
  testing::TempDir dir;
  testing::write_file(dir / "replay.jsonl", lines.str());

  ReplayBackend backend(dir / "replay.jsonl");
  CHECK(backend.prompt_count() == 2);
  const auto set = sample_continuations({"p1", "prompt"}, params(100), backend);
  REQUIRE(set.samples.size() == 100);
  for (int i = 0; i < 100; ++i) {
    CHECK(set.samples[i].index == i);
    CHECK(set.samples[i].text == "text " + std::to_string(i));
  }

  CHECK(code_of([&] { sample_continuations({"p9", "x"}, params(3), backend); }) ==
        ErrorCode::kReplayMissingPrompt);
  CHECK(code_of([&] { sample_continuations({"p2", "x"}, params(3), backend); }) ==
        ErrorCode::kPartialBatch);

  ReplayBackend holes(dir / "replay.jsonl", "replay", FailurePolicy::kHolePunch);
  const auto partial = sample_continuations({"p2", "x"}, params(3), holes);
  CHECK(partial.samples.size() == 1);
  CHECK(partial.missing == std::vector<int>{1, 2});
  CHECK_FALSE(partial.complete());

  CHECK(code_of([&] { ReplayBackend(dir / "absent.jsonl"); }) == ErrorCode::kMissingFile);
  std::istringstream dup(R"({"prompt_id":"a","index":0,"text":"x"})"
                         "\n"
                         R"({"prompt_id":"a","index":0,"text":"y"})"
                         "\n");
  CHECK(code_of([&] { ReplayBackend b(dup); }) == ErrorCode::kKeyCollision);
}

TEST_CASE("prompt echo stripping") {
  CHECK(strip_prompt_echo("John is a doctor. He works", "John is a doctor.") == " He works");
  CHECK(strip_prompt_echo("He works", "John is a doctor.") == "He works");
  CHECK(strip_prompt_echo("John is", "John is a doctor.") == "John is");
  CHECK(strip_prompt_echo("abc", "") == "abc");
}

TEST_CASE("backoff grows geometrically up to the cap") {
  http::RetryPolicy r;
  r.jitter = 0.0;
  r.initial_backoff = std::chrono::milliseconds(100);
  r.max_backoff = std::chrono::milliseconds(1000);
  CHECK(http::backoff_for_attempt(r, 0, 1).count() == 100);
  CHECK(http::backoff_for_attempt(r, 2, 1).count() == 400);
  CHECK(http::backoff_for_attempt(r, 10, 1).count() == 1000);
  r.jitter = 0.5;
  const auto d = http::backoff_for_attempt(r, 1, 42).count();
  CHECK(d >= 200);
  CHECK(d <= 300);
  CHECK(http::backoff_for_attempt(r, 1, 42).count() == d);
}

TEST_CASE("request body carries the sampling parameters") {
  const auto body = http::request_body({"http://x/v1", "m", "", {}}, {"hi", 0.9, 128, 4});
  CHECK(body["model"] == "m");
  CHECK(body["top_p"].get<double>() == 0.9);
  CHECK(body["max_tokens"] == 128);
  CHECK(body["n"] == 4);
}

TEST_CASE("remote backend against a local endpoint") {
  FakeServer server(2, 503);
  http::Endpoint endpoint{server.url(), "tiny", "secret", std::chrono::milliseconds(5000)};
  auto client = std::make_shared<const http::CompletionClient>(endpoint, fast_retry());
  RemoteBackend backend(client, {2, 4, FailurePolicy::kAbort});
  const auto set = sample_continuations({"p1", "John is a doctor."}, params(10), backend);
  REQUIRE(set.samples.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(set.samples[i].index == i);
    CHECK(set.samples[i].text.rfind(" sample ", 0) == 0);  // echo removed
  }
  const auto bodies = server.bodies();
  CHECK(bodies.size() == 5);  // two failures + three chunks of 4,4,2
  for (const auto& b : bodies) {
    CHECK(b["top_p"].get<double>() == 0.9);
    CHECK(b["max_tokens"] == 128);
    CHECK(b["prompt"] == "John is a doctor.");
  }
  CHECK(server.auth() == "Bearer secret");

  // record through the remote backend, replay it, same texts
  std::ostringstream recorded;
  for (const auto& s : set.samples) recorded << replay_record("p1", s).dump() << "\n";
  std::istringstream in(recorded.str());
  ReplayBackend replay(in);
  const auto again = sample_continuations({"p1", "John is a doctor."}, params(10), replay);
  CHECK(again.samples == set.samples);
}

TEST_CASE("remote backend gives up after retries") {
  FakeServer server(1000, 429);
  auto client = std::make_shared<const http::CompletionClient>(
      http::Endpoint{server.url(), "tiny", "", std::chrono::milliseconds(5000)}, fast_retry(3));
  RemoteBackend backend(client, {1, 10, FailurePolicy::kAbort});
  CHECK(code_of([&] { sample_continuations({"p", "x"}, params(4), backend); }) ==
        ErrorCode::kBackendUnreachable);
  CHECK(server.bodies().size() == 3);

  FakeServer bad(1000, 400);
  auto c2 = std::make_shared<const http::CompletionClient>(
      http::Endpoint{bad.url(), "tiny", "", std::chrono::milliseconds(5000)}, fast_retry(3));
  CHECK(code_of([&] { c2->complete({"x", 0.9, 8, 1}); }) == ErrorCode::kBackendUnreachable);
  CHECK(bad.bodies().size() == 1);  // 400 is not retried

  auto nowhere = std::make_shared<const http::CompletionClient>(
      http::Endpoint{"http://127.0.0.1:1/v1/completions", "m", "", std::chrono::milliseconds(200)},
      fast_retry(2));
  CHECK(code_of([&] { nowhere->complete({"x", 0.9, 8, 1}); }) == ErrorCode::kBackendUnreachable);
  CHECK(code_of([] { http::CompletionClient({"localhost/v1", "m", "", {}}); }) == ErrorCode::kConfig);
}
