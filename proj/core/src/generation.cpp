#include "fairpair/generation.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "fairpair/digest.hpp"
#include "fairpair/error.hpp"
#include "fairpair/http_client.hpp"
#include "fairpair/scoring.hpp"

namespace fairpair::generation {

namespace {

std::string join_indices(const std::vector<int>& indices) {
  std::string out;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) out += ',';
    if (i == 16) {
      out += "... (" + std::to_string(indices.size()) + " total)";
      break;
    }
    out += std::to_string(indices[i]);
  }
  return out;
}

void enforce_policy(ContinuationSet& set, FailurePolicy policy, std::string_view what) {
  if (set.missing.empty()) return;
  std::sort(set.missing.begin(), set.missing.end());
  if (policy == FailurePolicy::kAbort) {
    throw Error(ErrorCode::kPartialBatch, std::string(what) + " prompt '" + set.prompt_id +
                                              "' missing samples [" +
                                              join_indices(set.missing) + "]");
  }
  spdlog::warn("{} prompt '{}': {} samples missing, continuing", what, set.prompt_id,
               set.missing.size());
}

}  // namespace

void SamplingParams::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::kConfig, "top_p must lie in (0, 1]");
  }
  if (max_new_tokens < 1) throw Error(ErrorCode::kConfig, "max_new_tokens must be positive");
  if (n_samples < 1) throw Error(ErrorCode::kConfig, "n_samples must be positive");
}

std::vector<std::string> ContinuationSet::texts() const {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.text);
  return out;
}

std::string strip_prompt_echo(std::string_view text, std::string_view prompt) {
  if (!prompt.empty() && text.substr(0, prompt.size()) == prompt) text.remove_prefix(prompt.size());
  return std::string(text);
}

ContinuationSet sample_continuations(const PromptRequest& prompt, const SamplingParams& params,
                                     Backend& backend) {
  params.validate();
  auto set = backend.sample(prompt, params);
  std::sort(set.samples.begin(), set.samples.end(),
            [](const Sample& a, const Sample& b) { return a.index < b.index; });
  const auto expected = static_cast<std::size_t>(params.n_samples);
  if (set.samples.size() + set.missing.size() != expected) {
    throw Error(ErrorCode::kPartialBatch,
                "backend returned " + std::to_string(set.samples.size()) + " of " +
                    std::to_string(expected) + " samples for '" + prompt.prompt_id + "'");
  }
  if (set.missing.empty()) {
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
      if (set.samples[i].index != static_cast<int>(i)) {
        throw Error(ErrorCode::kPartialBatch, "sample indices are not 0..n-1 for '" +
                                                  prompt.prompt_id + "'");
      }
    }
  }
  for (auto& s : set.samples) s.text = strip_prompt_echo(s.text, prompt.prompt_text);
  set.prompt_id = prompt.prompt_id;
  set.prompt_text = prompt.prompt_text;
  set.params = params;
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic

void SyntheticBiasConfig::validate() const {
  if (shared_vocabulary.empty()) {
    throw Error(ErrorCode::kConfig, "synthetic generator needs a shared vocabulary");
  }
  if (!(skew >= 0.0 && skew <= 1.0)) throw Error(ErrorCode::kConfig, "skew must lie in [0, 1]");
  if (length_min < 1 || length_max < length_min) {
    throw Error(ErrorCode::kConfig, "synthetic length range must satisfy 1 <= min <= max");
  }
  for (const auto& [entity, vocab] : entity_vocabularies) {
    if (vocab.empty() && skew > 0.0) {
      throw Error(ErrorCode::kConfig, "entity '" + entity + "' has an empty vocabulary");
    }
  }
}

SyntheticBiasConfig SyntheticBiasConfig::make_default(const std::vector<std::string>& entities,
                                                      std::size_t shared_size,
                                                      std::size_t entity_size, double skew) {
  SyntheticBiasConfig config;
  config.skew = skew;
  for (std::size_t i = 0; i < shared_size; ++i) {
    config.shared_vocabulary.push_back("w" + std::to_string(i));
  }
  for (const auto& e : entities) {
    auto& vocab = config.entity_vocabularies[e];
    const auto prefix = scoring::ascii_lower(e);
    for (std::size_t i = 0; i < entity_size; ++i) {
      vocab.push_back(prefix + "v" + std::to_string(i));
    }
  }
  return config;
}

ContinuationSet synthetic_generate(std::string_view entity, const SyntheticBiasConfig& config,
                                   std::uint64_t seed, int n) {
  config.validate();
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "n must be positive");
  const std::vector<std::string>* own = nullptr;
  for (const auto& [name, vocab] : config.entity_vocabularies) {
    if (scoring::ascii_lower(name) == scoring::ascii_lower(entity)) own = &vocab;
  }
  if (own == nullptr && config.skew > 0.0) {
    throw Error(ErrorCode::kUnknownEntity,
                "no synthetic vocabulary for entity '" + std::string(entity) + "'");
  }
  const std::uint64_t entity_seed = mix_seed(seed, fnv1a64(scoring::ascii_lower(entity)));

  ContinuationSet set;
  set.prompt_id = std::string(entity);
  set.backend_label = "synthetic";
  set.params.n_samples = n;
  set.params.seed = seed;
  set.samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(entity_seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<int> length(config.length_min, config.length_max);
    std::bernoulli_distribution from_entity(config.skew);
    std::uniform_int_distribution<std::size_t> pick_shared(0, config.shared_vocabulary.size() - 1);
    const int len = length(rng);
    std::string text;
    for (int t = 0; t < len; ++t) {
      if (t) text += ' ';
      if (own != nullptr && !own->empty() && from_entity(rng)) {
        std::uniform_int_distribution<std::size_t> pick_own(0, own->size() - 1);
        text += (*own)[pick_own(rng)];
      } else {
        text += config.shared_vocabulary[pick_shared(rng)];
      }
    }
    set.samples.push_back({i, std::move(text)});
  }
  return set;
}

SyntheticBackend::SyntheticBackend(SyntheticBiasConfig config, std::string label)
    : config_(std::move(config)), label_(std::move(label)) {
  config_.validate();
}

ContinuationSet SyntheticBackend::sample(const PromptRequest& prompt, const SamplingParams& params) {
  std::string entity;
  for (const auto& token : scoring::tokenize(prompt.prompt_text)) {
    for (const auto& [name, _] : config_.entity_vocabularies) {
      if (scoring::ascii_lower(name) == token) {
        entity = name;
        break;
      }
    }
    if (!entity.empty()) break;
  }
  if (entity.empty() && config_.skew > 0.0) {
    throw Error(ErrorCode::kUnknownEntity,
                "prompt '" + prompt.prompt_id + "' names no configured entity");
  }
  const std::uint64_t seed = mix_seed(params.seed.value_or(0), fnv1a64(prompt.prompt_id));
  auto set = synthetic_generate(entity, config_, seed, params.n_samples);
  set.prompt_id = prompt.prompt_id;
  set.prompt_text = prompt.prompt_text;
  set.backend_label = label_;
  set.params = params;
  return set;
}

// ---------------------------------------------------------------------------
// Replay

ReplayBackend::ReplayBackend(const std::filesystem::path& path, std::string label,
                             FailurePolicy policy)
    : label_(std::move(label)), policy_(policy) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open replay file " + path.string());
  load(in);
}

ReplayBackend::ReplayBackend(std::istream& in, std::string label, FailurePolicy policy)
    : label_(std::move(label)), policy_(policy) {
  load(in);
}

void ReplayBackend::load(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("prompt_id") || !j.contains("index") ||
        !j.contains("text")) {
      throw Error(ErrorCode::kInvalidArgument,
                  "replay line " + std::to_string(line_no) + " lacks prompt_id/index/text");
    }
    auto& slot = store_[j["prompt_id"].get<std::string>()];
    const int index = j["index"].get<int>();
    auto text = j["text"].get<std::string>();
    const auto [it, inserted] = slot.emplace(index, text);
    if (!inserted && it->second != text) {
      throw Error(ErrorCode::kKeyCollision, "replay line " + std::to_string(line_no) +
                                                " conflicts with an earlier record");
    }
  }
}

ContinuationSet ReplayBackend::sample(const PromptRequest& prompt, const SamplingParams& params) {
  const auto it = store_.find(prompt.prompt_id);
  if (it == store_.end()) {
    throw Error(ErrorCode::kReplayMissingPrompt,
                "replay store has no prompt '" + prompt.prompt_id + "'");
  }
  ContinuationSet set;
  set.prompt_id = prompt.prompt_id;
  set.prompt_text = prompt.prompt_text;
  set.backend_label = label_;
  set.params = params;
  for (int i = 0; i < params.n_samples; ++i) {
    const auto s = it->second.find(i);
    if (s == it->second.end()) {
      set.missing.push_back(i);
    } else {
      set.samples.push_back({i, s->second});
    }
  }
  enforce_policy(set, policy_, "replay");
  return set;
}

nlohmann::json replay_record(const std::string& prompt_id, const Sample& sample) {
  return nlohmann::json{{"prompt_id", prompt_id}, {"index", sample.index}, {"text", sample.text}};
}

// ---------------------------------------------------------------------------
// Remote

RemoteBackend::RemoteBackend(std::shared_ptr<const http::CompletionClient> client,
                             RemoteOptions options, std::string label)
    : client_(std::move(client)), options_(options), label_(std::move(label)) {
  if (!client_) throw Error(ErrorCode::kInvalidArgument, "remote backend needs a client");
  if (options_.max_in_flight < 1 || options_.samples_per_request < 1) {
    throw Error(ErrorCode::kConfig, "max_in_flight and samples_per_request must be positive");
  }
}

ContinuationSet RemoteBackend::sample(const PromptRequest& prompt, const SamplingParams& params) {
  const int n = params.n_samples;
  const int chunk = options_.samples_per_request;
  const int chunks = (n + chunk - 1) / chunk;

  std::vector<std::optional<std::string>> slots(static_cast<std::size_t>(n));
  std::vector<std::string> errors;
  std::mutex merge_mutex;
  std::atomic<int> next_chunk{0};

  auto worker = [&] {
    for (int c = next_chunk.fetch_add(1); c < chunks; c = next_chunk.fetch_add(1)) {
      const int first = c * chunk;
      const int count = std::min(chunk, n - first);
      http::CompletionRequest request{prompt.prompt_text, params.top_p, params.max_new_tokens,
                                      count};
      try {
        auto texts = client_->complete(request);
        std::lock_guard lock(merge_mutex);
        for (int k = 0; k < count && k < static_cast<int>(texts.size()); ++k) {
          slots[static_cast<std::size_t>(first + k)] = std::move(texts[static_cast<std::size_t>(k)]);
        }
      } catch (const Error& e) {
        std::lock_guard lock(merge_mutex);
        errors.emplace_back(e.what());
      }
    }
  };
  {
    const int workers = std::min(options_.max_in_flight, chunks);
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  ContinuationSet set;
  set.prompt_id = prompt.prompt_id;
  set.prompt_text = prompt.prompt_text;
  set.backend_label = label_;
  set.params = params;
  for (int i = 0; i < n; ++i) {
    auto& slot = slots[static_cast<std::size_t>(i)];
    if (slot) {
      set.samples.push_back({i, strip_prompt_echo(*slot, prompt.prompt_text)});
    } else {
      set.missing.push_back(i);
    }
  }
  if (set.samples.empty() && !errors.empty()) {
    throw Error(ErrorCode::kBackendUnreachable, errors.front());
  }
  for (const auto& e : errors) spdlog::warn("remote prompt '{}': {}", prompt.prompt_id, e);
  enforce_policy(set, options_.failure_policy, "remote");
  return set;
}

}  // namespace fairpair::generation
