#include "fairpair/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "fairpair/analysis.hpp"
#include "fairpair/corpus.hpp"
#include "fairpair/digest.hpp"
#include "fairpair/http_client.hpp"
#include "fairpair/metrics.hpp"
#include "fairpair/perturbation.hpp"
#include "fairpair/stats.hpp"

namespace fairpair::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using store::Stage;

namespace {

constexpr double kSignificance = 0.001;

std::map<std::string, std::vector<json>> group_by_pair(const std::vector<json>& records) {
  std::map<std::string, std::vector<json>> out;
  for (const auto& r : records) out[r.at("pair_id").get<std::string>()].push_back(r);
  for (auto& [_, list] : out) {
    std::stable_sort(list.begin(), list.end(), [](const json& a, const json& b) {
      const auto sa = a.value("side", std::string());
      const auto sb = b.value("side", std::string());
      if (sa != sb) return sa < sb;
      return a.at("index").get<int>() < b.at("index").get<int>();
    });
  }
  return out;
}

std::set<std::string> finished_pairs(const std::vector<json>& records) {
  std::set<std::string> out;
  for (const auto& r : records) {
    if (r.contains("pair_id")) out.insert(r["pair_id"].get<std::string>());
    else if (r.contains("prompt_id")) out.insert(r["prompt_id"].get<std::string>());
  }
  return out;
}

std::vector<corpus::PromptPair> load_pairs(const store::RunStore& st, const std::string& run_id) {
  std::vector<corpus::PromptPair> pairs;
  for (const auto& r : st.read_records(run_id, Stage::kCorpus)) pairs.push_back(r.get<corpus::PromptPair>());
  return pairs;
}

std::vector<std::pair<std::string, std::string>> descriptor_pairs(const corpus::PromptPair& pair) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& d : pair.descriptors) {
    const auto slash = d.find('/');
    if (slash == std::string::npos) continue;
    out.emplace_back(d.substr(0, slash), d.substr(slash + 1));
  }
  return out;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Scores records of one prompt -> FairPairSet.
metrics::FairPairSet fairpair_set_from_scores(const std::string& pair_id, const std::vector<json>& scores,
                                              const std::string& source_name) {
  std::vector<metrics::IndexedText> pg, gp;
  std::vector<metrics::DroppedSample> dropped;
  for (const auto& r : scores) {
    const auto side = r.at("side").get<std::string>();
    const int index = r.at("index").get<int>();
    if (!r.at("included").get<bool>()) {
      dropped.push_back({side, index, r.value("reason", std::string("excluded"))});
      continue;
    }
    auto& target = side == "pg" ? pg : gp;
    target.push_back({index, r.at("text").get<std::string>()});
  }
  return metrics::make_fairpair_set(pair_id, std::move(pg), std::move(gp), std::move(dropped), source_name);
}

void write_text(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kMissingFile, "cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

}  // namespace

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kMissingFile:
    case ErrorCode::kEmptyOccupationList:
    case ErrorCode::kUnfilledSlot:
    case ErrorCode::kNameCollision:
    case ErrorCode::kIdenticalEntities:
      return kExitConfig;
    case ErrorCode::kBackendUnreachable:
    case ErrorCode::kReplayMissingPrompt:
    case ErrorCode::kPartialBatch:
    case ErrorCode::kUnknownEntity:
      return kExitBackend;
    case ErrorCode::kInsufficientSamples:
    case ErrorCode::kDegenerateVariance:
    case ErrorCode::kEmptyInput:
      return kExitInsufficientSamples;
    case ErrorCode::kStageSealed:
    case ErrorCode::kKeyCollision:
    case ErrorCode::kManifestCorrupted:
    case ErrorCode::kStageDependency:
      return kExitStore;
  }
  return kExitFailure;
}

std::string ground(std::string_view prompt, std::string_view continuation) {
  std::string out(prompt);
  if (continuation.empty()) return out;
  const auto first = static_cast<unsigned char>(continuation.front());
  if (!std::isspace(first)) out += ' ';
  out.append(continuation);
  return out;
}

Pipeline::Pipeline(RunConfig config, std::shared_ptr<generation::Backend> backend)
    : config_(std::move(config)), store_(config_.resolve(config_.output_dir)), backend_(std::move(backend)) {
  config_.validate();
}

void Pipeline::open(bool resume) {
  if (store_.exists(config_.run_id)) {
    if (!resume) {
      throw Error(ErrorCode::kConfig, "run '" + config_.run_id + "' already exists; pass --resume to continue it");
    }
    const auto m = store_.load_manifest(config_.run_id);
    if (m.config_digest != config_.config_digest()) {
      spdlog::warn("configuration differs from the one run '{}' was created with", config_.run_id);
    }
    return;
  }
  ensure_run();
}

void Pipeline::ensure_run() {
  if (store_.exists(config_.run_id)) return;
  const auto n = static_cast<std::size_t>(config_.sampling.n_samples);
  const std::size_t n_phi = config_.scoring.phi == PhiSelection::kBoth ? 2 : 1;
  store_.create(config_.run_id, config_.config_digest(),
                {{Stage::kCorpus, 1},
                 {Stage::kGeneration, 2 * n},
                 {Stage::kPerturbation, n},
                 {Stage::kValidation, n},
                 {Stage::kScoring, 2 * n},
                 {Stage::kMetrics, n_phi}});
}

void Pipeline::require_complete(Stage stage) const {
  if (!store_.exists(config_.run_id)) {
    throw Error(ErrorCode::kStageDependency, "run '" + config_.run_id + "' does not exist; run the corpus stage first");
  }
  const auto m = store_.load_manifest(config_.run_id);
  if (m.stage_status.at(stage) != store::StageStatus::kComplete) {
    throw Error(ErrorCode::kStageDependency, "stage '" + std::string(store::to_string(stage)) + "' is not complete");
  }
}

std::shared_ptr<generation::Backend> Pipeline::make_backend() const {
  if (backend_) return backend_;
  const auto label = config_.backend_label();
  switch (config_.backend.kind) {
    case BackendKind::kSynthetic: {
      const auto& s = config_.backend.synthetic;
      auto cfg = generation::SyntheticBiasConfig::make_default({config_.corpus.source_name, config_.corpus.target_name},
                                                               s.shared_vocabulary_size, s.entity_vocabulary_size,
                                                               s.skew);
      cfg.length_min = s.length_min;
      cfg.length_max = s.length_max;
      return std::make_shared<generation::SyntheticBackend>(std::move(cfg), label);
    }
    case BackendKind::kReplay:
      return std::make_shared<generation::ReplayBackend>(config_.resolve(config_.backend.replay_path), label,
                                                         config_.backend.failure_policy);
    case BackendKind::kRemote: {
      auto client = std::make_shared<const http::CompletionClient>(make_endpoint(config_.backend.remote),
                                                                   make_retry_policy(config_.backend.remote));
      generation::RemoteOptions options;
      options.max_in_flight = config_.backend.max_in_flight;
      options.samples_per_request = config_.backend.samples_per_request;
      options.failure_policy = config_.backend.failure_policy;
      return std::make_shared<generation::RemoteBackend>(std::move(client), options, label);
    }
  }
  throw Error(ErrorCode::kConfig, "unknown backend");
}

std::shared_ptr<const scoring::SentimentLexicon> Pipeline::lexicon() {
  if (!lexicon_ && !config_.scoring.lexicon.empty()) {
    scoring::SentimentLexicon::Settings settings;
    settings.negation_window = config_.scoring.negation_window;
    settings.negation_scalar = config_.scoring.negation_scalar;
    settings.alpha = config_.scoring.alpha;
    lexicon_ = std::make_shared<const scoring::SentimentLexicon>(
        scoring::SentimentLexicon::load(config_.resolve(config_.scoring.lexicon), settings));
  }
  return lexicon_;
}

const std::vector<std::unique_ptr<scoring::Phi>>& Pipeline::phis() {
  if (phis_.empty()) {
    const auto sel = config_.scoring.phi;
    if (sel != PhiSelection::kSentiment) {
      phis_.push_back(std::make_unique<scoring::JaccardPhi>(
          config_.scoring.jaccard_multiset ? scoring::JaccardMode::kMultiset : scoring::JaccardMode::kSet));
    }
    if (sel != PhiSelection::kJaccard) phis_.push_back(std::make_unique<scoring::SentimentPhi>(lexicon()));
  }
  return phis_;
}

// ---------------------------------------------------------------------------
// Stages

void Pipeline::run_corpus() {
  ensure_run();
  const auto& id = config_.run_id;
  if (store_.begin_stage(id, Stage::kCorpus, config_.stage_digest(Stage::kCorpus)) ==
      store::RunStore::BeginResult::kAlreadyComplete) {
    return;
  }
  const auto pairs = corpus::expand_templates(config_.template_spec());
  std::vector<json> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs) records.emplace_back(p);
  store_.append_records(id, Stage::kCorpus, records);
  store_.seal(id, Stage::kCorpus);
  spdlog::info("corpus: {} prompt pairs", pairs.size());
}

void Pipeline::run_generation() {
  require_complete(Stage::kCorpus);
  const auto& id = config_.run_id;
  if (store_.begin_stage(id, Stage::kGeneration, config_.stage_digest(Stage::kGeneration)) ==
      store::RunStore::BeginResult::kAlreadyComplete) {
    return;
  }
  const auto done = finished_pairs(store_.read_records(id, Stage::kGeneration));
  auto backend = make_backend();
  const auto pairs = load_pairs(store_, id);
  try {
    for (const auto& pair : pairs) {
      if (done.contains(pair.id)) continue;
      std::vector<json> records;
      for (const auto& [side, text] : {std::pair<std::string, const std::string*>{"x", &pair.original},
                                       std::pair<std::string, const std::string*>{"px", &pair.perturbed}}) {
        const generation::PromptRequest request{pair.id + ":" + side, *text};
        const auto set = generation::sample_continuations(request, config_.sampling, *backend);
        for (const auto& s : set.samples) {
          records.push_back({{"pair_id", pair.id},
                             {"prompt_id", request.prompt_id},
                             {"side", side},
                             {"index", s.index},
                             {"text", s.text}});
        }
        for (const int missing : set.missing) {
          records.push_back({{"pair_id", pair.id},
                             {"prompt_id", request.prompt_id},
                             {"side", side},
                             {"index", missing},
                             {"text", nullptr},
                             {"missing", true}});
        }
      }
      store_.append_records(id, Stage::kGeneration, records);
      spdlog::debug("generation: {} done", pair.id);
    }
  } catch (...) {
    store_.mark_failed(id, Stage::kGeneration);
    throw;
  }
  store_.seal(id, Stage::kGeneration);
  spdlog::info("generation: {} prompt pairs x {} samples per side", pairs.size(), config_.sampling.n_samples);
}

void Pipeline::run_perturbation() {
  require_complete(Stage::kGeneration);
  const auto& id = config_.run_id;
  if (store_.begin_stage(id, Stage::kPerturbation, config_.stage_digest(Stage::kPerturbation)) ==
      store::RunStore::BeginResult::kAlreadyComplete) {
    return;
  }
  const auto done = finished_pairs(store_.read_records(id, Stage::kPerturbation));
  const auto continuations = group_by_pair(store_.read_records(id, Stage::kGeneration));
  const auto base = config_.entity_perturbation();
  std::unique_ptr<perturbation::LlmPerturber> llm;
  if (config_.perturbation.mode == PerturbationMode::kRemote) {
    auto client = std::make_shared<const http::CompletionClient>(make_endpoint(config_.perturbation.remote),
                                                                 make_retry_policy(config_.perturbation.remote));
    llm = std::make_unique<perturbation::LlmPerturber>(std::move(client), base);
  }
  try {
    for (const auto& pair : load_pairs(store_, id)) {
      if (done.contains(pair.id)) continue;
      const auto pairs = descriptor_pairs(pair);
      const auto p = base.with_pairs(pairs);
      std::vector<json> records;
      const auto it = continuations.find(pair.id);
      if (it == continuations.end()) {
        throw Error(ErrorCode::kStageDependency, "no continuations for " + pair.id);
      }
      for (const auto& c : it->second) {
        if (c.at("side") != "x") continue;
        json r{{"pair_id", pair.id}, {"side", "pg"}, {"index", c.at("index")}};
        if (c.value("missing", false)) {
          r["missing"] = true;
          r["original"] = nullptr;
          r["text"] = nullptr;
        } else {
          const auto grounded = ground(pair.original, c.at("text").get<std::string>());
          r["original"] = grounded;
          if (llm) {
            r["text"] = llm->perturb(grounded, pair.occupation);
          } else {
            std::vector<perturbation::AmbiguityResolution> resolutions;
            r["text"] = perturbation::rule_perturb(grounded, p, &resolutions);
            if (!resolutions.empty()) {
              json res = json::array();
              for (const auto& a : resolutions) {
                res.push_back({{"offset", a.offset}, {"source", a.source}, {"chosen", a.chosen}});
              }
              r["resolutions"] = std::move(res);
            }
          }
        }
        records.push_back(std::move(r));
      }
      store_.append_records(id, Stage::kPerturbation, records);
    }
  } catch (...) {
    store_.mark_failed(id, Stage::kPerturbation);
    throw;
  }
  store_.seal(id, Stage::kPerturbation);
  spdlog::info("perturbation: done");
}

void Pipeline::run_validation() {
  require_complete(Stage::kPerturbation);
  const auto& id = config_.run_id;
  if (store_.begin_stage(id, Stage::kValidation, config_.stage_digest(Stage::kValidation)) ==
      store::RunStore::BeginResult::kAlreadyComplete) {
    return;
  }
  const auto done = finished_pairs(store_.read_records(id, Stage::kValidation));
  const auto perturbed = group_by_pair(store_.read_records(id, Stage::kPerturbation));
  const auto base = config_.entity_perturbation();
  perturbation::ValidationOptions options;
  options.tau = config_.perturbation.tau;
  options.neutralize = config_.perturbation.neutralize;
  std::size_t accepted = 0, total = 0;
  for (const auto& pair : load_pairs(store_, id)) {
    if (done.contains(pair.id)) continue;
    const auto p = base.with_pairs(descriptor_pairs(pair));
    std::vector<json> records;
    const auto it = perturbed.find(pair.id);
    if (it == perturbed.end()) continue;
    for (const auto& r : it->second) {
      json v{{"pair_id", pair.id}, {"side", "pg"}, {"index", r.at("index")}};
      if (r.value("missing", false)) {
        v["accepted"] = false;
        v["reason"] = "missing";
        v["jaccard_dissimilarity"] = nullptr;
      } else {
        const auto verdict = perturbation::validate_perturbation(
            r.at("original").get<std::string>(), r.at("text").get<std::string>(), pair.perturbed, p, options);
        v["accepted"] = verdict.accepted;
        v["reason"] = perturbation::to_string(verdict.reason);
        v["jaccard_dissimilarity"] = verdict.jaccard_dissimilarity;
        accepted += verdict.accepted ? 1 : 0;
        ++total;
      }
      records.push_back(std::move(v));
    }
    store_.append_records(id, Stage::kValidation, records);
  }
  store_.seal(id, Stage::kValidation);
  if (total) spdlog::info("validation: {}/{} perturbations accepted", accepted, total);
}

void Pipeline::run_scoring() {
  require_complete(Stage::kValidation);
  const auto& id = config_.run_id;
  if (store_.begin_stage(id, Stage::kScoring, config_.stage_digest(Stage::kScoring)) ==
      store::RunStore::BeginResult::kAlreadyComplete) {
    return;
  }
  const auto done = finished_pairs(store_.read_records(id, Stage::kScoring));
  const auto continuations = group_by_pair(store_.read_records(id, Stage::kGeneration));
  const auto perturbed = group_by_pair(store_.read_records(id, Stage::kPerturbation));
  const auto verdicts = group_by_pair(store_.read_records(id, Stage::kValidation));
  const auto lex = lexicon();
  const bool continuation_only = config_.scoring.grounding == Grounding::kContinuation;

  auto score_record = [&](const std::string& pair_id, const char* side, int index, const std::string& text,
                          bool included, const std::string& reason) {
    json r{{"pair_id", pair_id}, {"side", side}, {"index", index}, {"included", included}};
    r["text"] = text;
    r["n_tokens"] = scoring::tokenize(text).size();
    if (lex) r["sentiment"] = scoring::sentiment_score(text, *lex);
    if (!included) r["reason"] = reason;
    return r;
  };

  for (const auto& pair : load_pairs(store_, id)) {
    if (done.contains(pair.id)) continue;
    std::vector<json> records;
    std::map<int, json> verdict_by_index;
    if (const auto it = verdicts.find(pair.id); it != verdicts.end()) {
      for (const auto& v : it->second) verdict_by_index[v.at("index").get<int>()] = v;
    }
    if (const auto it = perturbed.find(pair.id); it != perturbed.end()) {
      for (const auto& r : it->second) {
        const int index = r.at("index").get<int>();
        if (r.value("missing", false)) {
          records.push_back(score_record(pair.id, "pg", index, "", false, "missing"));
          continue;
        }
        std::string text = r.at("text").get<std::string>();
        if (continuation_only) {
          if (text.starts_with(pair.perturbed)) {
            text.erase(0, pair.perturbed.size());
            text.erase(0, text.find_first_not_of(" \t\n\r"));
          } else {
            spdlog::warn("{} pg {}: perturbed prompt prefix not found; scoring full text", pair.id, index);
          }
        }
        const auto vit = verdict_by_index.find(index);
        const bool ok = vit != verdict_by_index.end() && vit->second.at("accepted").get<bool>();
        const auto reason = vit == verdict_by_index.end() ? std::string("unvalidated")
                                                          : vit->second.at("reason").get<std::string>();
        records.push_back(score_record(pair.id, "pg", index, text, ok, reason));
      }
    }
    if (const auto it = continuations.find(pair.id); it != continuations.end()) {
      for (const auto& c : it->second) {
        if (c.at("side") != "px") continue;
        const int index = c.at("index").get<int>();
        if (c.value("missing", false)) {
          records.push_back(score_record(pair.id, "gp", index, "", false, "missing"));
          continue;
        }
        const auto cont = c.at("text").get<std::string>();
        std::string text = continuation_only ? cont : ground(pair.perturbed, cont);
        if (continuation_only) text.erase(0, std::min(text.size(), text.find_first_not_of(" \t\n\r")));
        records.push_back(score_record(pair.id, "gp", index, text, true, ""));
      }
    }
    store_.append_records(id, Stage::kScoring, records);
  }
  store_.seal(id, Stage::kScoring);
  spdlog::info("scoring: done");
}

void Pipeline::run_metrics() {
  require_complete(Stage::kScoring);
  const auto& id = config_.run_id;
  const auto digest = config_.stage_digest(Stage::kMetrics);
  const auto manifest = store_.load_manifest(id);
  const bool sealed_elsewhere = manifest.stage_status.at(Stage::kMetrics) == store::StageStatus::kComplete &&
                                manifest.stage_digests.count(Stage::kMetrics) &&
                                manifest.stage_digests.at(Stage::kMetrics) != digest;

  const auto scores = group_by_pair(store_.read_records(id, Stage::kScoring));
  auto compute = [&](const std::set<std::string>& skip_ids) {
    std::vector<json> records;
    std::size_t evaluated = 0, skipped = 0;
    for (const auto& pair : load_pairs(store_, id)) {
      if (skip_ids.contains(pair.id)) continue;
      const auto it = scores.find(pair.id);
      if (it == scores.end()) continue;
      const auto fp = fairpair_set_from_scores(pair.id, it->second, config_.corpus.source_name);
      if (fp.n() < 2 || (config_.metrics.k && static_cast<std::size_t>(*config_.metrics.k) > fp.n())) {
        spdlog::warn("{}: {} usable samples, skipped", pair.id, fp.n());
        ++skipped;
        continue;
      }
      const auto seed = mix_seed(config_.metrics.seed, fnv1a64(pair.id));
      for (const auto& phi : phis()) records.emplace_back(metrics::evaluate_prompt(fp, *phi, config_.metrics.k, seed));
      ++evaluated;
    }
    if (evaluated == 0 && skipped > 0) {
      throw Error(ErrorCode::kInsufficientSamples, "no prompt has enough usable samples");
    }
    return records;
  };

  if (sealed_elsewhere) {
    // A sealed run re-scored with different metric settings gets a variant file.
    const auto records = compute({});
    const auto name = config_.metrics.k ? "metrics_k" + std::to_string(*config_.metrics.k) + ".jsonl"
                                        : "metrics_" + digest.substr(0, 12) + ".jsonl";
    std::string content;
    for (const auto& r : records) content += store::dump_line(r) + "\n";
    write_text(run_dir() / name, content);
    spdlog::info("metrics: stage already sealed; wrote variant {}", name);
    return;
  }
  if (store_.begin_stage(id, Stage::kMetrics, digest) == store::RunStore::BeginResult::kAlreadyComplete) return;
  try {
    const auto records = compute(finished_pairs(store_.read_records(id, Stage::kMetrics)));
    store_.append_records(id, Stage::kMetrics, records);
  } catch (...) {
    store_.mark_failed(id, Stage::kMetrics);
    throw;
  }
  store_.seal(id, Stage::kMetrics);
  spdlog::info("metrics: done");
}

// ---------------------------------------------------------------------------
// Reports

Reports Pipeline::write_reports() {
  require_complete(Stage::kMetrics);
  const auto& id = config_.run_id;
  Reports reports;
  reports.run_dir = run_dir();
  reports.metrics = store_.artifact_path(id, Stage::kMetrics);

  std::vector<metrics::MetricsRecord> records;
  for (const auto& r : store_.read_records(id, Stage::kMetrics)) records.push_back(r.get<metrics::MetricsRecord>());

  // Summary row: x100 with two decimals, F of the mean scores.
  json per_phi = json::object();
  std::string header = "model,size";
  std::string row = csv_field(config_.backend_label()) + "," + csv_field(config_.backend.model_size);
  for (const auto& phi : phis()) {
    const auto label = phi->label();
    std::vector<double> b, vpg, vgp, f;
    std::size_t significant = 0;
    for (const auto& r : records) {
      if (r.phi_label != label) continue;
      b.push_back(r.b);
      vpg.push_back(r.v_pg);
      vgp.push_back(r.v_gp);
      if (r.f) f.push_back(*r.f);
      if (r.p_value && *r.p_value < kSignificance) ++significant;
    }
    if (b.empty()) continue;
    const double mb = stats::mean(b), mpg = stats::mean(vpg), mgp = stats::mean(vgp);
    const auto f_means = metrics::fairpair_metric(mb, mpg, mgp);
    header += "," + label + "_V_pg," + label + "_V_gp," + label + "_B," + label + "_F";
    row += "," + fixed2(100.0 * mpg) + "," + fixed2(100.0 * mgp) + "," + fixed2(100.0 * mb) + "," +
           (f_means ? fixed2(*f_means) : std::string("NA"));
    per_phi[label] = {{"prompts", b.size()},
                      {"mean_B", mb},
                      {"mean_V_pg", mpg},
                      {"mean_V_gp", mgp},
                      {"F_of_means", f_means ? json(*f_means) : json(nullptr)},
                      {"mean_F", f.empty() ? json(nullptr) : json(stats::mean(f))},
                      {"median_F", f.empty() ? json(nullptr) : nullable(median(f))},
                      {"fraction_significant", static_cast<double>(significant) / static_cast<double>(b.size())},
                      {"significance_level", kSignificance}};
  }
  reports.summary_csv = reports.run_dir / "summary.csv";
  write_text(reports.summary_csv, header + "\n" + row + "\n");

  // Perturbation success rate over attempted (non-missing) perturbations.
  std::vector<perturbation::ValidationVerdict> verdicts;
  std::map<std::string, std::size_t> reasons;
  for (const auto& v : store_.read_records(id, Stage::kValidation)) {
    const auto reason = v.at("reason").get<std::string>();
    ++reasons[reason];
    if (reason == "missing") continue;
    perturbation::ValidationVerdict verdict;
    verdict.accepted = v.at("accepted").get<bool>();
    verdicts.push_back(verdict);
  }

  // Pooled texts for the length comparison and n-gram analysis.
  std::vector<std::string> pg_texts, gp_texts;
  std::set<std::string> skipped;
  const auto scores = group_by_pair(store_.read_records(id, Stage::kScoring));
  std::set<std::string> evaluated;
  for (const auto& r : records) evaluated.insert(r.prompt_id);
  for (const auto& [pair_id, list] : scores) {
    if (!evaluated.contains(pair_id)) skipped.insert(pair_id);
    const auto fp = fairpair_set_from_scores(pair_id, list, config_.corpus.source_name);
    pg_texts.insert(pg_texts.end(), fp.side_pg.begin(), fp.side_pg.end());
    gp_texts.insert(gp_texts.end(), fp.side_gp.begin(), fp.side_gp.end());
  }

  json report{{"run_id", id},
              {"model", config_.backend_label()},
              {"size", config_.backend.model_size},
              {"config_digest", config_.config_digest()},
              {"phi", per_phi},
              {"verdict_reasons", reasons},
              {"skipped_prompts", skipped}};
  report["perturbation_success_rate"] =
      verdicts.empty() ? json(nullptr) : json(perturbation::perturbation_success_rate(verdicts));
  if (!pg_texts.empty() && !gp_texts.empty()) {
    const auto lc = analysis::length_comparison(pg_texts, gp_texts);
    report["length_comparison"] = {{"mean_tokens_pg", lc.mean_pg},
                                   {"mean_tokens_gp", lc.mean_gp},
                                   {"t_statistic", nullable(lc.t)},
                                   {"p_value", lc.p}};
  }

  // Differential n-grams.
  std::unordered_set<std::string> stop;
  if (config_.analysis.stop_unigrams > 0) {
    std::vector<std::string> all(pg_texts);
    all.insert(all.end(), gp_texts.begin(), gp_texts.end());
    stop = analysis::most_frequent_unigrams(all, config_.analysis.stop_unigrams);
  }
  json plots = json::array();
  for (const int n : config_.analysis.ngram_orders) {
    const auto diff =
        analysis::differential_ngrams(analysis::ngram_counts(pg_texts, n), analysis::ngram_counts(gp_texts, n),
                                      config_.analysis.top_k, config_.analysis.min_count, stop.empty() ? nullptr : &stop);
    std::ostringstream csv;
    analysis::write_differential_csv(csv, diff);
    const auto path = reports.run_dir / ("ngrams_" + std::to_string(n) + ".csv");
    write_text(path, csv.str());
    reports.ngram_files.push_back(path);
    plots.push_back(analysis::differential_plot_json(diff));
  }
  const auto ngram_json = reports.run_dir / "ngrams.json";
  write_text(ngram_json, plots.dump(2) + "\n");
  reports.ngram_files.push_back(ngram_json);

  reports.report_json = reports.run_dir / "report.json";
  write_text(reports.report_json, report.dump(2) + "\n");
  return reports;
}

std::vector<fs::path> Pipeline::ablate(const AblationOptions& options) {
  require_complete(Stage::kScoring);
  if (options.step < 1) throw Error(ErrorCode::kConfig, "--step must be at least 1");
  if (options.max_n && *options.max_n < 2) throw Error(ErrorCode::kConfig, "--max-n must be at least 2");
  const auto& id = config_.run_id;
  const auto dir = run_dir() / "ablation";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const auto scores = group_by_pair(store_.read_records(id, Stage::kScoring));
  for (const auto& [pair_id, list] : scores) {
    auto fp = fairpair_set_from_scores(pair_id, list, config_.corpus.source_name);
    if (options.max_n && fp.n() > static_cast<std::size_t>(*options.max_n)) {
      const auto m = static_cast<std::size_t>(*options.max_n);
      fp.side_pg.resize(m);
      fp.side_gp.resize(m);
      fp.pg_indices.resize(m);
      fp.gp_indices.resize(m);
    }
    if (fp.n() < 2) continue;
    const auto seed = mix_seed(config_.metrics.seed, fnv1a64(pair_id));
    for (const auto& phi : phis()) {
      std::ostringstream curve;
      curve.precision(17);
      curve << "n,B,V_pg,V_gp,F\n";
      for (const auto& p : metrics::convergence_curve(fp, *phi, options.step)) {
        const auto f = metrics::fairpair_metric(p.b, p.v_pg, p.v_gp);
        curve << p.n_used << ',' << p.b << ',' << p.v_pg << ',' << p.v_gp << ',';
        if (f) curve << *f;
        curve << '\n';
      }
      const auto stem = pair_id + "_" + phi->label();
      const auto curve_path = dir / ("curve_" + stem + ".csv");
      write_text(curve_path, curve.str());
      written.push_back(curve_path);

      std::ostringstream sweep;
      sweep.precision(17);
      sweep << "k,B,V_pg,V_gp,F\n";
      for (const auto& p : metrics::kfold_sweep(fp, *phi, options.ks, seed)) {
        sweep << p.k << ',' << p.b << ',' << p.v_pg << ',' << p.v_gp << ',';
        if (p.f) sweep << *p.f;
        sweep << '\n';
      }
      const auto sweep_path = dir / ("kfold_" + stem + ".csv");
      write_text(sweep_path, sweep.str());
      written.push_back(sweep_path);
    }
  }
  return written;
}

Reports Pipeline::run_all(bool resume) {
  open(resume);
  run_corpus();
  run_generation();
  run_perturbation();
  run_validation();
  run_scoring();
  run_metrics();
  return write_reports();
}

int run_pipeline(const RunConfig& config, bool resume, Reports* reports) {
  try {
    Pipeline pipeline(config);
    auto r = pipeline.run_all(resume);
    if (reports) *reports = std::move(r);
    return kExitOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
}

}  // namespace fairpair::pipeline
