#include "fairpair/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "fairpair/digest.hpp"
#include "fairpair/error.hpp"

namespace fairpair {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfig, msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.contains(key)) config_error("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    config_error("bad value for '" + std::string(key) + "' in " + where);
  }
}

EndpointConfig parse_endpoint(const json& j, const std::string& where) {
  check_keys(j, where, {"url", "model", "api_key", "timeout_ms", "max_attempts", "initial_backoff_ms"});
  EndpointConfig c;
  read(j, "url", c.url, where);
  read(j, "model", c.model, where);
  read(j, "api_key", c.api_key, where);
  read(j, "timeout_ms", c.timeout_ms, where);
  read(j, "max_attempts", c.max_attempts, where);
  read(j, "initial_backoff_ms", c.initial_backoff_ms, where);
  c.api_key = interpolate_env(c.api_key);
  return c;
}

json endpoint_json(const EndpointConfig& c) {
  return {{"url", c.url},
          {"model", c.model},
          {"timeout_ms", c.timeout_ms},
          {"max_attempts", c.max_attempts},
          {"initial_backoff_ms", c.initial_backoff_ms}};
}

std::vector<corpus::DescriptorSet> parse_descriptor_sets(const json& j) {
  if (!j.is_array()) config_error("corpus.descriptor_sets must be an array of sets");
  std::vector<corpus::DescriptorSet> sets;
  for (const auto& set : j) {
    if (!set.is_array()) config_error("each descriptor set must be an array of pairs");
    corpus::DescriptorSet out;
    for (const auto& pair : set) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
        config_error("descriptor pairs are [source, target] string arrays");
      }
      out.push_back({pair[0].get<std::string>(), pair[1].get<std::string>()});
    }
    sets.push_back(std::move(out));
  }
  return sets;
}

template <typename E>
E parse_enum(const json& j, const char* key, const std::string& where,
             std::initializer_list<std::pair<const char*, E>> options, E fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string()) config_error(std::string(key) + " in " + where + " must be a string");
  const auto value = j[key].get<std::string>();
  for (const auto& [name, e] : options) {
    if (value == name) return e;
  }
  config_error("unknown " + std::string(key) + " '" + value + "' in " + where);
}

std::string file_digest(const fs::path& path) {
  if (!fs::exists(path)) config_error("file not found: " + path.string());
  return sha256_file_hex(path);
}

}  // namespace

std::string_view to_string(BackendKind kind) noexcept {
  switch (kind) {
    case BackendKind::kSynthetic: return "synthetic";
    case BackendKind::kReplay: return "replay";
    case BackendKind::kRemote: return "remote";
  }
  return "synthetic";
}

std::string_view to_string(PhiSelection phi) noexcept {
  switch (phi) {
    case PhiSelection::kJaccard: return "jaccard";
    case PhiSelection::kSentiment: return "sentiment";
    case PhiSelection::kBoth: return "both";
  }
  return "jaccard";
}

std::string_view to_string(Grounding g) noexcept {
  return g == Grounding::kFull ? "full" : "continuation";
}

std::string interpolate_env(const std::string& value) {
  std::string out;
  std::size_t pos = 0;
  while (pos < value.size()) {
    const auto open = value.find("${", pos);
    if (open == std::string::npos) {
      out.append(value, pos, std::string::npos);
      break;
    }
    const auto close = value.find('}', open + 2);
    if (close == std::string::npos) config_error("unterminated ${ in api_key");
    out.append(value, pos, open - pos);
    const auto name = value.substr(open + 2, close - open - 2);
    const char* env = std::getenv(name.c_str());
    if (!env) config_error("environment variable " + name + " is not set");
    out += env;
    pos = close + 1;
  }
  return out;
}

http::Endpoint make_endpoint(const EndpointConfig& c) {
  http::Endpoint e;
  e.url = c.url;
  e.model = c.model;
  e.api_key = c.api_key;
  e.timeout = std::chrono::milliseconds(c.timeout_ms);
  return e;
}

http::RetryPolicy make_retry_policy(const EndpointConfig& c) {
  http::RetryPolicy r;
  r.max_attempts = c.max_attempts;
  r.initial_backoff = std::chrono::milliseconds(c.initial_backoff_ms);
  return r;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, "config", {"run_id", "output_dir", "corpus", "backend", "sampling", "perturbation",
                           "scoring", "metrics", "analysis"});
  RunConfig c;
  c.base_dir = base_dir;
  read(j, "run_id", c.run_id, "config");
  read(j, "output_dir", c.output_dir, "config");

  if (j.contains("corpus")) {
    const auto& s = j["corpus"];
    check_keys(s, "corpus", {"source_name", "target_name", "descriptor_sets", "occupations", "surface_form"});
    read(s, "source_name", c.corpus.source_name, "corpus");
    read(s, "target_name", c.corpus.target_name, "corpus");
    if (s.contains("descriptor_sets")) c.corpus.descriptor_sets = parse_descriptor_sets(s["descriptor_sets"]);
    read(s, "occupations", c.corpus.occupations, "corpus");
    read(s, "surface_form", c.corpus.surface_form, "corpus");
  }

  if (j.contains("backend")) {
    const auto& s = j["backend"];
    check_keys(s, "backend", {"kind", "label", "model_size", "failure_policy", "synthetic", "replay_path",
                              "remote", "max_in_flight", "samples_per_request"});
    c.backend.kind = parse_enum<BackendKind>(
        s, "kind", "backend",
        {{"synthetic", BackendKind::kSynthetic}, {"replay", BackendKind::kReplay}, {"remote", BackendKind::kRemote}},
        BackendKind::kSynthetic);
    read(s, "label", c.backend.label, "backend");
    read(s, "model_size", c.backend.model_size, "backend");
    c.backend.failure_policy = parse_enum<generation::FailurePolicy>(
        s, "failure_policy", "backend",
        {{"abort", generation::FailurePolicy::kAbort}, {"hole_punch", generation::FailurePolicy::kHolePunch}},
        generation::FailurePolicy::kAbort);
    if (s.contains("synthetic")) {
      const auto& y = s["synthetic"];
      check_keys(y, "backend.synthetic",
                 {"skew", "shared_vocabulary_size", "entity_vocabulary_size", "length_min", "length_max"});
      read(y, "skew", c.backend.synthetic.skew, "backend.synthetic");
      read(y, "shared_vocabulary_size", c.backend.synthetic.shared_vocabulary_size, "backend.synthetic");
      read(y, "entity_vocabulary_size", c.backend.synthetic.entity_vocabulary_size, "backend.synthetic");
      read(y, "length_min", c.backend.synthetic.length_min, "backend.synthetic");
      read(y, "length_max", c.backend.synthetic.length_max, "backend.synthetic");
    }
    read(s, "replay_path", c.backend.replay_path, "backend");
    if (s.contains("remote")) c.backend.remote = parse_endpoint(s["remote"], "backend.remote");
    read(s, "max_in_flight", c.backend.max_in_flight, "backend");
    read(s, "samples_per_request", c.backend.samples_per_request, "backend");
  }

  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    check_keys(s, "sampling", {"top_p", "max_new_tokens", "n_samples", "seed"});
    read(s, "top_p", c.sampling.top_p, "sampling");
    read(s, "max_new_tokens", c.sampling.max_new_tokens, "sampling");
    read(s, "n_samples", c.sampling.n_samples, "sampling");
    if (s.contains("seed") && !s["seed"].is_null()) {
      std::uint64_t seed = 0;
      read(s, "seed", seed, "sampling");
      c.sampling.seed = seed;
    }
  }

  if (j.contains("perturbation")) {
    const auto& s = j["perturbation"];
    check_keys(s, "perturbation",
               {"mode", "word_map", "source_group", "target_group", "tau", "neutralize", "remote"});
    c.perturbation.mode = parse_enum<PerturbationMode>(
        s, "mode", "perturbation", {{"rule", PerturbationMode::kRule}, {"remote", PerturbationMode::kRemote}},
        PerturbationMode::kRule);
    read(s, "word_map", c.perturbation.word_map, "perturbation");
    read(s, "source_group", c.perturbation.source_group, "perturbation");
    read(s, "target_group", c.perturbation.target_group, "perturbation");
    read(s, "tau", c.perturbation.tau, "perturbation");
    if (s.contains("neutralize")) {
      try {
        c.perturbation.neutralize = perturbation::parse_neutralization(s["neutralize"].get<std::string>());
      } catch (const std::exception&) {
        config_error("bad perturbation.neutralize");
      }
    }
    if (s.contains("remote")) c.perturbation.remote = parse_endpoint(s["remote"], "perturbation.remote");
  }

  if (j.contains("scoring")) {
    const auto& s = j["scoring"];
    check_keys(s, "scoring", {"phi", "lexicon", "jaccard_multiset", "grounding", "negation_window",
                              "negation_scalar", "alpha"});
    c.scoring.phi = parse_enum<PhiSelection>(
        s, "phi", "scoring",
        {{"jaccard", PhiSelection::kJaccard}, {"sentiment", PhiSelection::kSentiment}, {"both", PhiSelection::kBoth}},
        PhiSelection::kJaccard);
    read(s, "lexicon", c.scoring.lexicon, "scoring");
    read(s, "jaccard_multiset", c.scoring.jaccard_multiset, "scoring");
    c.scoring.grounding = parse_enum<Grounding>(
        s, "grounding", "scoring", {{"full", Grounding::kFull}, {"continuation", Grounding::kContinuation}},
        Grounding::kFull);
    read(s, "negation_window", c.scoring.negation_window, "scoring");
    read(s, "negation_scalar", c.scoring.negation_scalar, "scoring");
    read(s, "alpha", c.scoring.alpha, "scoring");
  }

  if (j.contains("metrics")) {
    const auto& s = j["metrics"];
    check_keys(s, "metrics", {"k", "seed"});
    if (s.contains("k") && !s["k"].is_null()) {
      int k = 0;
      read(s, "k", k, "metrics");
      c.metrics.k = k;
    }
    read(s, "seed", c.metrics.seed, "metrics");
  }

  if (j.contains("analysis")) {
    const auto& s = j["analysis"];
    check_keys(s, "analysis", {"ngram_orders", "top_k", "min_count", "stop_unigrams"});
    read(s, "ngram_orders", c.analysis.ngram_orders, "analysis");
    read(s, "top_k", c.analysis.top_k, "analysis");
    read(s, "min_count", c.analysis.min_count, "analysis");
    read(s, "stop_unigrams", c.analysis.stop_unigrams, "analysis");
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path.string());
  const auto j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) config_error("config " + path.string() + " is not valid JSON");
  return from_json(j, path.parent_path());
}

fs::path RunConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

json RunConfig::to_json() const {
  json sets = json::array();
  for (const auto& set : corpus.descriptor_sets) {
    json s = json::array();
    for (const auto& d : set) s.push_back({d.source, d.target});
    sets.push_back(s);
  }
  json sampling_j{{"top_p", sampling.top_p},
                  {"max_new_tokens", sampling.max_new_tokens},
                  {"n_samples", sampling.n_samples},
                  {"seed", sampling.seed ? json(*sampling.seed) : json(nullptr)}};
  return {
      {"run_id", run_id},
      {"output_dir", output_dir},
      {"corpus",
       {{"source_name", corpus.source_name},
        {"target_name", corpus.target_name},
        {"descriptor_sets", sets},
        {"occupations", corpus.occupations},
        {"surface_form", corpus.surface_form}}},
      {"backend",
       {{"kind", to_string(backend.kind)},
        {"label", backend.label},
        {"model_size", backend.model_size},
        {"failure_policy",
         backend.failure_policy == generation::FailurePolicy::kAbort ? "abort" : "hole_punch"},
        {"synthetic",
         {{"skew", backend.synthetic.skew},
          {"shared_vocabulary_size", backend.synthetic.shared_vocabulary_size},
          {"entity_vocabulary_size", backend.synthetic.entity_vocabulary_size},
          {"length_min", backend.synthetic.length_min},
          {"length_max", backend.synthetic.length_max}}},
        {"replay_path", backend.replay_path},
        {"remote", endpoint_json(backend.remote)},
        {"max_in_flight", backend.max_in_flight},
        {"samples_per_request", backend.samples_per_request}}},
      {"sampling", sampling_j},
      {"perturbation",
       {{"mode", perturbation.mode == PerturbationMode::kRule ? "rule" : "remote"},
        {"word_map", perturbation.word_map},
        {"source_group", perturbation.source_group},
        {"target_group", perturbation.target_group},
        {"tau", perturbation.tau},
        {"neutralize", perturbation::to_string(perturbation.neutralize)},
        {"remote", endpoint_json(perturbation.remote)}}},
      {"scoring",
       {{"phi", to_string(scoring.phi)},
        {"lexicon", scoring.lexicon},
        {"jaccard_multiset", scoring.jaccard_multiset},
        {"grounding", to_string(scoring.grounding)},
        {"negation_window", scoring.negation_window},
        {"negation_scalar", scoring.negation_scalar},
        {"alpha", scoring.alpha}}},
      {"metrics", {{"k", metrics.k ? json(*metrics.k) : json(nullptr)}, {"seed", metrics.seed}}},
      {"analysis",
       {{"ngram_orders", analysis.ngram_orders},
        {"top_k", analysis.top_k},
        {"min_count", analysis.min_count},
        {"stop_unigrams", analysis.stop_unigrams}}},
  };
}

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find('/') != std::string::npos) config_error("invalid run_id");
  if (corpus.source_name == corpus.target_name) config_error("source and target names are identical");
  if (corpus.occupations != corpus::kBuiltinOccupations && !fs::exists(resolve(corpus.occupations))) {
    config_error("occupation list not found: " + resolve(corpus.occupations).string());
  }
  try {
    sampling.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  switch (backend.kind) {
    case BackendKind::kSynthetic:
      if (backend.synthetic.skew < 0.0 || backend.synthetic.skew > 1.0) config_error("skew must be in [0, 1]");
      if (backend.synthetic.length_min < 1 || backend.synthetic.length_max < backend.synthetic.length_min) {
        config_error("bad synthetic length range");
      }
      break;
    case BackendKind::kReplay:
      if (backend.replay_path.empty() || !fs::exists(resolve(backend.replay_path))) {
        config_error("replay file not found: " + backend.replay_path);
      }
      break;
    case BackendKind::kRemote:
      if (backend.remote.url.empty()) config_error("backend.remote.url is required");
      break;
  }
  if (backend.max_in_flight < 1 || backend.samples_per_request < 1) config_error("bad remote concurrency");
  if (!perturbation.word_map.empty() && !fs::exists(resolve(perturbation.word_map))) {
    config_error("word map not found: " + perturbation.word_map);
  }
  if (perturbation.mode == PerturbationMode::kRemote && perturbation.remote.url.empty()) {
    config_error("perturbation.remote.url is required for remote perturbation");
  }
  if (perturbation.tau < 0.0 || perturbation.tau > 1.0) config_error("tau must be in [0, 1]");
  if (scoring.phi != PhiSelection::kJaccard) {
    if (scoring.lexicon.empty()) config_error("sentiment scoring needs scoring.lexicon");
    if (!fs::exists(resolve(scoring.lexicon))) {
      config_error("sentiment lexicon not found: " + resolve(scoring.lexicon).string());
    }
  }
  if (scoring.alpha <= 0.0) config_error("alpha must be positive");
  if (scoring.negation_window < 0) config_error("negation_window must be non-negative");
  if (metrics.k && *metrics.k < 2) config_error("metrics.k must be at least 2");
  if (metrics.k && *metrics.k > sampling.n_samples) config_error("metrics.k exceeds n_samples");
  for (const int n : analysis.ngram_orders) {
    if (n < 1 || n > 4) config_error("ngram orders must be in [1, 4]");
  }
  if (analysis.top_k < 1) config_error("analysis.top_k must be at least 1");
  try {
    (void)entity_perturbation();
  } catch (const Error& e) {
    config_error(e.what());
  }
}

std::string RunConfig::stage_digest(store::Stage stage) const {
  const auto full = to_json();
  json parts = json::object();
  auto add = [&](store::Stage s) {
    switch (s) {
      case store::Stage::kCorpus:
        parts["corpus"] = full["corpus"];
        parts["occupations_sha256"] = corpus.occupations == corpus::kBuiltinOccupations
                                          ? std::string("builtin")
                                          : file_digest(resolve(corpus.occupations));
        break;
      case store::Stage::kGeneration:
        parts["backend"] = full["backend"];
        parts["sampling"] = full["sampling"];
        if (backend.kind == BackendKind::kReplay) {
          parts["replay_sha256"] = file_digest(resolve(backend.replay_path));
        }
        break;
      case store::Stage::kPerturbation:
        parts["perturbation_mode"] = full["perturbation"]["mode"];
        parts["groups"] = {perturbation.source_group, perturbation.target_group};
        parts["word_map_sha256"] =
            perturbation.word_map.empty() ? std::string("builtin") : file_digest(resolve(perturbation.word_map));
        if (perturbation.mode == PerturbationMode::kRemote) {
          parts["perturbation_remote"] = full["perturbation"]["remote"];
        }
        break;
      case store::Stage::kValidation:
        parts["tau"] = perturbation.tau;
        parts["neutralize"] = full["perturbation"]["neutralize"];
        break;
      case store::Stage::kScoring:
        parts["scoring"] = full["scoring"];
        if (!scoring.lexicon.empty() && fs::exists(resolve(scoring.lexicon))) {
          parts["lexicon_sha256"] = file_digest(resolve(scoring.lexicon));
        }
        break;
      case store::Stage::kMetrics:
        parts["metrics"] = full["metrics"];
        break;
    }
  };
  for (const auto s : store::kStages) {
    add(s);
    if (s == stage) break;
  }
  return sha256_hex(parts.dump());
}

std::string RunConfig::config_digest() const {
  const json parts{{"metrics", stage_digest(store::Stage::kMetrics)}, {"analysis", to_json()["analysis"]}};
  return sha256_hex(parts.dump());
}

corpus::TemplateSpec RunConfig::template_spec() const {
  corpus::TemplateSpec spec;
  spec.source_name = corpus.source_name;
  spec.target_name = corpus.target_name;
  spec.descriptor_sets = corpus.descriptor_sets;
  spec.surface_form = corpus.surface_form;
  const auto source = corpus.occupations == corpus::kBuiltinOccupations
                          ? std::string(corpus::kBuiltinOccupations)
                          : resolve(corpus.occupations).string();
  spec.occupations = corpus::load_occupations(source).occupations;
  return spec;
}

perturbation::EntityPerturbation RunConfig::entity_perturbation() const {
  auto map = perturbation.word_map.empty()
                 ? perturbation::EntityPerturbation::default_male_to_female_map()
                 : perturbation::EntityPerturbation::load_word_map(resolve(perturbation.word_map));
  return perturbation::EntityPerturbation(corpus.source_name, corpus.target_name, std::move(map),
                                          perturbation.source_group, perturbation.target_group);
}

std::string RunConfig::backend_label() const {
  return backend.label.empty() ? std::string(to_string(backend.kind)) : backend.label;
}

}  // namespace fairpair
