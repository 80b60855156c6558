#include "fairpair/http_client.hpp"

#include <algorithm>
#include <atomic>
#include <random>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "fairpair/error.hpp"

namespace fairpair::http {

namespace {

bool is_retriable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status < 600);
}

std::vector<std::string> parse_choices(const std::string& body) {
  const auto doc = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.contains("choices") || !doc["choices"].is_array()) {
    throw Error(ErrorCode::kBackendUnreachable, "malformed completion response");
  }
  std::vector<std::pair<std::int64_t, std::string>> indexed;
  std::int64_t arrival = 0;
  for (const auto& choice : doc["choices"]) {
    const auto index = choice.value("index", arrival);
    indexed.emplace_back(index, choice.value("text", std::string{}));
    ++arrival;
  }
  std::stable_sort(indexed.begin(), indexed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> texts;
  texts.reserve(indexed.size());
  for (auto& [_, text] : indexed) texts.push_back(std::move(text));
  return texts;
}

std::uint64_t next_jitter_seed() {
  static std::atomic<std::uint64_t> counter{0x9e3779b97f4a7c15ULL};
  return counter.fetch_add(0x9e3779b97f4a7c15ULL);
}

}  // namespace

std::chrono::milliseconds backoff_for_attempt(const RetryPolicy& policy, int attempt,
                                              std::uint64_t seed) {
  double delay = static_cast<double>(policy.initial_backoff.count());
  for (int i = 0; i < attempt; ++i) delay *= policy.multiplier;
  delay = std::min(delay, static_cast<double>(policy.max_backoff.count()));
  if (policy.jitter > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    delay += delay * policy.jitter * unit(rng);
  }
  return std::chrono::milliseconds(static_cast<std::int64_t>(delay));
}

nlohmann::json request_body(const Endpoint& endpoint, const CompletionRequest& request) {
  return nlohmann::json{{"model", endpoint.model},
                        {"prompt", request.prompt},
                        {"top_p", request.top_p},
                        {"max_tokens", request.max_tokens},
                        {"n", request.n}};
}

CompletionClient::CompletionClient(Endpoint endpoint, RetryPolicy retry)
    : endpoint_(std::move(endpoint)), retry_(retry) {
  const auto scheme_end = endpoint_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfig, "endpoint url needs a scheme: " + endpoint_.url);
  }
  const auto path_start = endpoint_.url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = endpoint_.url;
    path_ = "/";
  } else {
    origin_ = endpoint_.url.substr(0, path_start);
    path_ = endpoint_.url.substr(path_start);
  }
  if (retry_.max_attempts < 1) {
    throw Error(ErrorCode::kConfig, "retry policy needs at least one attempt");
  }
}

std::vector<std::string> CompletionClient::complete(const CompletionRequest& request) const {
  const std::string body = request_body(endpoint_, request).dump();
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
  }
  const auto timeout_s = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(
      endpoint_.timeout - timeout_s);

  std::string last_error;
  for (int attempt = 0; attempt < retry_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const auto delay = backoff_for_attempt(retry_, attempt - 1, next_jitter_seed());
      spdlog::debug("completion retry {} after {} ms: {}", attempt, delay.count(), last_error);
      std::this_thread::sleep_for(delay);
    }
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_s.count(), timeout_us.count());
    client.set_read_timeout(timeout_s.count(), timeout_us.count());
    client.set_write_timeout(timeout_s.count(), timeout_us.count());
    auto result = client.Post(path_, headers, body, "application/json");
    if (!result) {
      last_error = "transport error: " + httplib::to_string(result.error());
      continue;
    }
    if (result->status == 200) return parse_choices(result->body);
    last_error = "HTTP " + std::to_string(result->status);
    if (!is_retriable_status(result->status)) break;
  }
  throw Error(ErrorCode::kBackendUnreachable,
              endpoint_.url + " failed after retries (" + last_error + ")");
}

}  // namespace fairpair::http
