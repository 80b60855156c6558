#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairpair::http {

struct Endpoint {
  std::string url;      // e.g. http://localhost:8000/v1/completions
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{60000};
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{32000};
  double jitter = 0.25;  // fraction of the delay added uniformly at random
};

/// Delay before retry number `attempt` (0-based), jitter drawn from `seed`.
std::chrono::milliseconds backoff_for_attempt(const RetryPolicy& policy, int attempt,
                                              std::uint64_t seed);

struct CompletionRequest {
  std::string prompt;
  double top_p = 0.9;
  int max_tokens = 128;
  int n = 1;
};

nlohmann::json request_body(const Endpoint& endpoint, const CompletionRequest& request);

/// Minimal client for an OpenAI-style completion endpoint. Responses are
/// `{"choices": [{"index": i, "text": ...}, ...]}`; choices come back sorted
/// by index. Safe to share across threads.
class CompletionClient {
 public:
  explicit CompletionClient(Endpoint endpoint, RetryPolicy retry = {});

  /// Retries connection failures, 408, 429 and 5xx. Throws
  /// Error(kBackendUnreachable) once attempts are exhausted or on any other
  /// HTTP failure. May return fewer than request.n texts.
  std::vector<std::string> complete(const CompletionRequest& request) const;

  const Endpoint& endpoint() const noexcept { return endpoint_; }
  const RetryPolicy& retry_policy() const noexcept { return retry_; }

 private:
  Endpoint endpoint_;
  RetryPolicy retry_;
  std::string origin_;  // scheme://host:port
  std::string path_;
};

}  // namespace fairpair::http
