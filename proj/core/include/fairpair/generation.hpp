#pragma once

// Sources of continuations g_1(x)..g_n(x): a remote completion endpoint, a
// replay store of previously recorded continuations, and a seeded synthetic
// generator with a tunable entity skew used for calibration.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairpair::http {
class CompletionClient;
}

namespace fairpair::generation {

struct SamplingParams {
  double top_p = 0.9;
  int max_new_tokens = 128;
  int n_samples = 100;
  std::optional<std::uint64_t> seed;

  void validate() const;
};

struct Sample {
  int index = 0;
  std::string text;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct ContinuationSet {
  std::string prompt_id;
  std::string prompt_text;
  std::vector<Sample> samples;  // ascending index
  std::string backend_label;
  SamplingParams params;
  /// Only non-empty when a backend runs with FailurePolicy::kHolePunch.
  std::vector<int> missing;

  bool complete() const noexcept { return missing.empty(); }
  std::vector<std::string> texts() const;
};

/// Abort raises PartialBatch when any sample is missing; hole-punch returns
/// the set with the gaps listed in `missing`.
enum class FailurePolicy { kAbort, kHolePunch };

struct PromptRequest {
  std::string prompt_id;
  std::string prompt_text;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string label() const = 0;
  virtual ContinuationSet sample(const PromptRequest& prompt, const SamplingParams& params) = 0;
};

/// Draws through `backend` and enforces the set invariants (exact count,
/// index order, continuation-only text).
ContinuationSet sample_continuations(const PromptRequest& prompt, const SamplingParams& params,
                                     Backend& backend);

/// Removes a verbatim copy of the prompt from the front of a completion.
std::string strip_prompt_echo(std::string_view text, std::string_view prompt);

// ---------------------------------------------------------------------------
// Synthetic

struct SyntheticBiasConfig {
  std::vector<std::string> shared_vocabulary;
  std::map<std::string, std::vector<std::string>> entity_vocabularies;
  double skew = 0.0;  // probability a token comes from the entity's own list
  int length_min = 8;
  int length_max = 16;

  void validate() const;

  /// `shared_size` shared tokens and `entity_size` tokens per entity, all
  /// pairwise disjoint.
  static SyntheticBiasConfig make_default(const std::vector<std::string>& entities,
                                          std::size_t shared_size = 50,
                                          std::size_t entity_size = 10, double skew = 0.0);
};

/// Each continuation is a run of tokens drawn from the shared list with
/// probability 1 - skew and from the entity's list otherwise. Sample i depends
/// only on (seed, entity, i).
ContinuationSet synthetic_generate(std::string_view entity, const SyntheticBiasConfig& config,
                                   std::uint64_t seed, int n);

class SyntheticBackend final : public Backend {
 public:
  explicit SyntheticBackend(SyntheticBiasConfig config, std::string label = "synthetic");

  std::string label() const override { return label_; }
  /// The entity is the first prompt word naming a configured entity; the
  /// seed mixes params.seed with the prompt id.
  ContinuationSet sample(const PromptRequest& prompt, const SamplingParams& params) override;

 private:
  SyntheticBiasConfig config_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// Replay

/// JSONL lines with prompt_id, index and text; extra fields are ignored so a
/// run-store continuations file replays directly.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& path, std::string label = "replay",
                         FailurePolicy policy = FailurePolicy::kAbort);
  ReplayBackend(std::istream& in, std::string label = "replay",
                FailurePolicy policy = FailurePolicy::kAbort);

  std::string label() const override { return label_; }
  ContinuationSet sample(const PromptRequest& prompt, const SamplingParams& params) override;
  std::size_t prompt_count() const noexcept { return store_.size(); }

 private:
  void load(std::istream& in);
  std::map<std::string, std::map<int, std::string>> store_;
  std::string label_;
  FailurePolicy policy_;
};

nlohmann::json replay_record(const std::string& prompt_id, const Sample& sample);

// ---------------------------------------------------------------------------
// Remote

struct RemoteOptions {
  int max_in_flight = 8;
  int samples_per_request = 10;
  FailurePolicy failure_policy = FailurePolicy::kAbort;
};

/// Splits the n samples into requests of `samples_per_request`, keeps at most
/// `max_in_flight` outstanding, and slots results by sample index.
class RemoteBackend final : public Backend {
 public:
  RemoteBackend(std::shared_ptr<const http::CompletionClient> client, RemoteOptions options = {},
                std::string label = "remote");

  std::string label() const override { return label_; }
  ContinuationSet sample(const PromptRequest& prompt, const SamplingParams& params) override;

 private:
  std::shared_ptr<const http::CompletionClient> client_;
  RemoteOptions options_;
  std::string label_;
};

}  // namespace fairpair::generation
