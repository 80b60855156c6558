#pragma once

// Declarative run configuration (JSON). Unknown keys are rejected. The only
// place `${VAR}` is expanded from the environment is an endpoint's api_key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairpair/corpus.hpp"
#include "fairpair/generation.hpp"
#include "fairpair/http_client.hpp"
#include "fairpair/perturbation.hpp"
#include "fairpair/store.hpp"

namespace fairpair {

struct EndpointConfig {
  std::string url;
  std::string model;
  std::string api_key;  // after interpolation; never part of a digest
  std::int64_t timeout_ms = 60000;
  int max_attempts = 5;
  std::int64_t initial_backoff_ms = 1000;
};

struct CorpusConfig {
  std::string source_name = "John";
  std::string target_name = "Jane";
  std::vector<corpus::DescriptorSet> descriptor_sets{{{"man", "woman"}}};
  std::string occupations{corpus::kBuiltinOccupations};  // "builtin" or a file path
  std::string surface_form{corpus::kCanonicalSurfaceForm};
};

enum class BackendKind { kSynthetic, kReplay, kRemote };

struct SyntheticConfig {
  double skew = 0.0;
  std::size_t shared_vocabulary_size = 50;
  std::size_t entity_vocabulary_size = 10;
  int length_min = 8;
  int length_max = 16;
};

struct BackendConfig {
  BackendKind kind = BackendKind::kSynthetic;
  std::string label;       // model column of the summary; defaults to the kind
  std::string model_size;  // size column of the summary
  generation::FailurePolicy failure_policy = generation::FailurePolicy::kAbort;
  SyntheticConfig synthetic;
  std::string replay_path;
  EndpointConfig remote;
  int max_in_flight = 8;
  int samples_per_request = 10;
};

enum class PerturbationMode { kRule, kRemote };

struct PerturbationConfig {
  PerturbationMode mode = PerturbationMode::kRule;
  std::string word_map;  // empty: shipped male-to-female map
  std::string source_group = "male";
  std::string target_group = "female";
  double tau = 0.15;
  perturbation::Neutralization neutralize = perturbation::Neutralization::kNamesAndWordMap;
  EndpointConfig remote;
};

enum class PhiSelection { kJaccard, kSentiment, kBoth };
enum class Grounding { kFull, kContinuation };

struct ScoringConfig {
  PhiSelection phi = PhiSelection::kJaccard;
  std::string lexicon;  // required for sentiment
  bool jaccard_multiset = false;
  Grounding grounding = Grounding::kFull;
  int negation_window = 3;
  double negation_scalar = -0.74;
  double alpha = 15.0;
};

struct MetricsConfig {
  std::optional<int> k;
  std::uint64_t seed = 0;
};

struct AnalysisConfig {
  std::vector<int> ngram_orders{1, 2, 3};
  int top_k = 20;
  std::int64_t min_count = 5;
  /// N-grams made only of the most frequent unigrams are skipped; 0 keeps all.
  std::size_t stop_unigrams = 50;
};

struct RunConfig {
  std::string run_id = "default";
  std::string output_dir = "runs";
  CorpusConfig corpus;
  BackendConfig backend;
  generation::SamplingParams sampling;
  PerturbationConfig perturbation;
  ScoringConfig scoring;
  MetricsConfig metrics;
  AnalysisConfig analysis;

  /// Relative paths inside the file resolve against this directory.
  std::filesystem::path base_dir;

  static RunConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  /// Effective configuration as JSON, secrets removed.
  nlohmann::json to_json() const;

  /// Throws Error(kConfig) on inconsistent or unresolvable settings,
  /// including a sentiment Φ without a readable lexicon.
  void validate() const;

  std::filesystem::path resolve(const std::string& path) const;

  /// Cumulative digest of everything that influences `stage`, including the
  /// content of referenced files.
  std::string stage_digest(store::Stage stage) const;
  /// Digest over the whole effective configuration.
  std::string config_digest() const;

  corpus::TemplateSpec template_spec() const;
  perturbation::EntityPerturbation entity_perturbation() const;
  std::string backend_label() const;
};

std::string_view to_string(BackendKind kind) noexcept;
std::string_view to_string(PhiSelection phi) noexcept;
std::string_view to_string(Grounding g) noexcept;

/// Replaces `${NAME}` with the environment value; a missing variable is a
/// config error.
std::string interpolate_env(const std::string& value);

http::Endpoint make_endpoint(const EndpointConfig& c);
http::RetryPolicy make_retry_policy(const EndpointConfig& c);

}  // namespace fairpair
