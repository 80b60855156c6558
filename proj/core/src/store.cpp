#include "fairpair/store.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fairpair/digest.hpp"
#include "fairpair/error.hpp"

namespace fairpair::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kMissingFile, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::kMissingFile, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& content) {
  std::vector<std::string> lines;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Stage stage_from_json_key(const std::string& key) {
  if (const auto s = parse_stage(key)) return *s;
  throw Error(ErrorCode::kManifestCorrupted, "unknown stage '" + key + "' in manifest");
}

std::string pair_id_of(const json& record) {
  for (const char* key : {"pair_id", "id", "prompt_id"}) {
    if (record.contains(key) && record[key].is_string()) return record[key].get<std::string>();
  }
  return {};
}

}  // namespace

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::kCorpus: return "corpus";
    case Stage::kGeneration: return "generation";
    case Stage::kPerturbation: return "perturbation";
    case Stage::kValidation: return "validation";
    case Stage::kScoring: return "scoring";
    case Stage::kMetrics: return "metrics";
  }
  return "corpus";
}

std::optional<Stage> parse_stage(std::string_view name) noexcept {
  for (auto s : kStages) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

std::string_view artifact_name(Stage stage) noexcept {
  switch (stage) {
    case Stage::kCorpus: return "corpus";
    case Stage::kGeneration: return "continuations";
    case Stage::kPerturbation: return "perturbations";
    case Stage::kValidation: return "verdicts";
    case Stage::kScoring: return "scores";
    case Stage::kMetrics: return "metrics";
  }
  return "corpus";
}

std::string_view to_string(StageStatus status) noexcept {
  switch (status) {
    case StageStatus::kPending: return "pending";
    case StageStatus::kComplete: return "complete";
    case StageStatus::kFailed: return "failed";
  }
  return "pending";
}

// ---------------------------------------------------------------------------
// Manifest

json manifest_to_json(const RunManifest& m) {
  json status = json::object();
  json counts = json::object();
  json digests = json::object();
  json quotas = json::object();
  for (const auto& [s, v] : m.stage_status) status[std::string(to_string(s))] = to_string(v);
  for (const auto& [s, v] : m.counts) counts[std::string(to_string(s))] = v;
  for (const auto& [s, v] : m.stage_digests) digests[std::string(to_string(s))] = v;
  for (const auto& [s, v] : m.quotas) quotas[std::string(to_string(s))] = v;
  json j{{"run_id", m.run_id},
         {"created_at", m.created_at},
         {"config_digest", m.config_digest},
         {"stage_status", status},
         {"counts", counts},
         {"stage_digests", digests},
         {"quotas", quotas}};
  j["manifest_digest"] = sha256_hex(j.dump());
  return j;
}

RunManifest manifest_from_json(const json& j) {
  try {
    json body = j;
    const auto stored = body.at("manifest_digest").get<std::string>();
    body.erase("manifest_digest");
    if (sha256_hex(body.dump()) != stored) {
      throw Error(ErrorCode::kManifestCorrupted, "manifest digest mismatch");
    }
    RunManifest m;
    body.at("run_id").get_to(m.run_id);
    body.at("created_at").get_to(m.created_at);
    body.at("config_digest").get_to(m.config_digest);
    for (const auto& [k, v] : body.at("stage_status").items()) {
      const auto value = v.get<std::string>();
      StageStatus st = StageStatus::kPending;
      if (value == "complete") st = StageStatus::kComplete;
      else if (value == "failed") st = StageStatus::kFailed;
      else if (value != "pending") throw Error(ErrorCode::kManifestCorrupted, "bad status " + value);
      m.stage_status[stage_from_json_key(k)] = st;
    }
    for (const auto& [k, v] : body.at("counts").items()) m.counts[stage_from_json_key(k)] = v.get<std::size_t>();
    for (const auto& [k, v] : body.at("stage_digests").items()) {
      m.stage_digests[stage_from_json_key(k)] = v.get<std::string>();
    }
    for (const auto& [k, v] : body.at("quotas").items()) m.quotas[stage_from_json_key(k)] = v.get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestCorrupted, e.what());
  }
}

std::string record_key(const json& record) {
  std::string key;
  for (const char* field : {"id", "pair_id", "prompt_id", "side", "index", "phi"}) {
    if (!record.contains(field)) continue;
    key += field;
    key += '=';
    key += record[field].is_string() ? record[field].get<std::string>() : record[field].dump();
    key += '\x1f';
  }
  if (key.empty()) throw Error(ErrorCode::kInvalidArgument, "record has no key fields");
  return key;
}

std::string dump_line(const json& record) { return record.dump(); }

// ---------------------------------------------------------------------------
// RunStore

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

fs::path RunStore::run_dir(std::string_view run_id) const { return root_ / std::string(run_id); }

fs::path RunStore::artifact_path(std::string_view run_id, Stage stage) const {
  return run_dir(run_id) / (std::string(artifact_name(stage)) + ".jsonl");
}

bool RunStore::exists(std::string_view run_id) const {
  return fs::exists(run_dir(run_id) / "manifest.json");
}

RunManifest RunStore::create(std::string_view run_id, std::string config_digest,
                             std::map<Stage, std::size_t> quotas) {
  if (run_id.empty() || run_id.find('/') != std::string_view::npos) {
    throw Error(ErrorCode::kConfig, "invalid run id '" + std::string(run_id) + "'");
  }
  if (exists(run_id)) throw Error(ErrorCode::kConfig, "run '" + std::string(run_id) + "' exists");
  fs::create_directories(run_dir(run_id));
  RunManifest m;
  m.run_id = std::string(run_id);
  m.created_at = utc_now_iso8601();
  m.config_digest = std::move(config_digest);
  m.quotas = std::move(quotas);
  for (auto s : kStages) {
    m.stage_status[s] = StageStatus::kPending;
    m.counts[s] = 0;
  }
  save_manifest(m);
  return m;
}

RunManifest RunStore::load_manifest(std::string_view run_id) const {
  const auto path = run_dir(run_id) / "manifest.json";
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kStageDependency, "run '" + std::string(run_id) + "' has no manifest");
  }
  const auto doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::kManifestCorrupted, "manifest is not JSON");
  auto m = manifest_from_json(doc);
  if (m.run_id != run_id) throw Error(ErrorCode::kManifestCorrupted, "manifest run id mismatch");
  for (const auto& [stage, status] : m.stage_status) {
    if (status != StageStatus::kComplete) continue;
    const auto artifact = artifact_path(run_id, stage);
    if (!fs::exists(artifact) || lines_of(read_file(artifact)).size() != m.counts[stage]) {
      throw Error(ErrorCode::kManifestCorrupted,
                  "artifact for sealed stage '" + std::string(to_string(stage)) +
                      "' is missing or has the wrong line count");
    }
  }
  return m;
}

void RunStore::save_manifest(const RunManifest& manifest) const {
  write_atomically(run_dir(manifest.run_id) / "manifest.json",
                   manifest_to_json(manifest).dump(2) + "\n");
}

RunStore::BeginResult RunStore::begin_stage(std::string_view run_id, Stage stage,
                                            const std::string& digest) const {
  auto m = load_manifest(run_id);
  const auto status = m.stage_status[stage];
  const auto it = m.stage_digests.find(stage);
  const bool same = it != m.stage_digests.end() && it->second == digest;
  if (status == StageStatus::kComplete) {
    if (same) return BeginResult::kAlreadyComplete;
    throw Error(ErrorCode::kStageSealed, "stage '" + std::string(to_string(stage)) +
                                             "' is complete under a different configuration");
  }
  if (it != m.stage_digests.end() && !same && m.counts[stage] > 0) {
    throw Error(ErrorCode::kConfig, "stage '" + std::string(to_string(stage)) +
                                        "' was started under a different configuration");
  }
  const bool had_records = m.counts[stage] > 0;
  m.stage_digests[stage] = digest;
  m.stage_status[stage] = StageStatus::kPending;
  save_manifest(m);
  return had_records ? BeginResult::kContinue : BeginResult::kFresh;
}

std::size_t RunStore::append_records(std::string_view run_id, Stage stage,
                                     std::span<const json> records) const {
  auto m = load_manifest(run_id);
  if (m.stage_status[stage] == StageStatus::kComplete) {
    throw Error(ErrorCode::kStageSealed, "stage '" + std::string(to_string(stage)) + "' is sealed");
  }
  const auto path = artifact_path(run_id, stage);
  std::string content = read_file(path);
  std::unordered_map<std::string, std::string> existing;
  for (const auto& line : lines_of(content)) {
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kManifestCorrupted, "corrupt line in " + path.string());
    existing.emplace(record_key(j), line);
  }
  std::size_t written = 0;
  std::size_t total = existing.size();
  for (const auto& record : records) {
    const auto key = record_key(record);
    const auto line = dump_line(record);
    const auto [it, inserted] = existing.emplace(key, line);
    if (!inserted) {
      if (it->second != line) {
        throw Error(ErrorCode::kKeyCollision, "record key collides with a different payload in " +
                                                  std::string(to_string(stage)));
      }
      continue;
    }
    content += line;
    content += '\n';
    ++written;
    ++total;
  }
  if (written > 0) write_atomically(path, content);
  m.counts[stage] = total;
  save_manifest(m);
  return written;
}

std::vector<json> RunStore::read_records(std::string_view run_id, Stage stage) const {
  std::vector<json> out;
  for (const auto& line : lines_of(read_file(artifact_path(run_id, stage)))) {
    out.push_back(json::parse(line));
  }
  return out;
}

void RunStore::seal(std::string_view run_id, Stage stage) const {
  auto m = load_manifest(run_id);
  const auto path = artifact_path(run_id, stage);
  if (!fs::exists(path)) write_atomically(path, "");
  m.counts[stage] = lines_of(read_file(path)).size();
  m.stage_status[stage] = StageStatus::kComplete;
  save_manifest(m);
}

void RunStore::mark_failed(std::string_view run_id, Stage stage) const {
  auto m = load_manifest(run_id);
  m.stage_status[stage] = StageStatus::kFailed;
  save_manifest(m);
}

ResumePoint RunStore::resume_point(std::string_view run_id) const {
  const auto m = load_manifest(run_id);
  ResumePoint point;
  for (auto stage : kStages) {
    if (m.stage_status.at(stage) == StageStatus::kComplete) continue;
    point.stage = stage;
    break;
  }
  if (point.terminal() || *point.stage == Stage::kCorpus) return point;

  std::vector<std::string> prompt_ids;
  for (const auto& r : read_records(run_id, Stage::kCorpus)) prompt_ids.push_back(pair_id_of(r));
  std::map<std::string, std::size_t> done;
  for (const auto& r : read_records(run_id, *point.stage)) ++done[pair_id_of(r)];
  const auto quota_it = m.quotas.find(*point.stage);
  const std::size_t quota = quota_it == m.quotas.end() ? 1 : quota_it->second;
  for (const auto& id : prompt_ids) {
    const auto it = done.find(id);
    if (it == done.end() || it->second < quota) point.remaining_prompt_ids.push_back(id);
  }
  return point;
}

}  // namespace fairpair::store
