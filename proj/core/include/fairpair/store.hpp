#pragma once

// Append-only run artifacts: runs/<run_id>/manifest.json plus one JSONL file
// per pipeline stage. Appends are idempotent on record keys, so a crashed
// stage can simply be re-run.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairpair::store {

enum class Stage { kCorpus, kGeneration, kPerturbation, kValidation, kScoring, kMetrics };

inline constexpr std::array<Stage, 6> kStages = {Stage::kCorpus,     Stage::kGeneration,
                                                 Stage::kPerturbation, Stage::kValidation,
                                                 Stage::kScoring,    Stage::kMetrics};

std::string_view to_string(Stage stage) noexcept;
std::optional<Stage> parse_stage(std::string_view name) noexcept;
/// File stem of the stage artifact (generation -> "continuations").
std::string_view artifact_name(Stage stage) noexcept;

enum class StageStatus { kPending, kComplete, kFailed };

std::string_view to_string(StageStatus status) noexcept;

struct RunManifest {
  std::string run_id;
  std::string created_at;  // ISO-8601 UTC
  std::string config_digest;
  std::map<Stage, StageStatus> stage_status;
  std::map<Stage, std::size_t> counts;
  /// Digest of the configuration a stage was produced under.
  std::map<Stage, std::string> stage_digests;
  /// Records each prompt contributes to a stage once done.
  std::map<Stage, std::size_t> quotas;
};

nlohmann::json manifest_to_json(const RunManifest& m);
/// Throws ManifestCorrupted when the embedded digest does not match.
RunManifest manifest_from_json(const nlohmann::json& j);

struct ResumePoint {
  std::optional<Stage> stage;  // empty: run complete
  std::vector<std::string> remaining_prompt_ids;

  bool terminal() const noexcept { return !stage.has_value(); }
};

/// Unique key of a record: the values of id, pair_id, prompt_id, side, index
/// and phi that are present.
std::string record_key(const nlohmann::json& record);

/// Compact dump with sorted keys; the on-disk line format.
std::string dump_line(const nlohmann::json& record);

class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path run_dir(std::string_view run_id) const;
  std::filesystem::path artifact_path(std::string_view run_id, Stage stage) const;
  bool exists(std::string_view run_id) const;

  RunManifest create(std::string_view run_id, std::string config_digest,
                     std::map<Stage, std::size_t> quotas);
  RunManifest load_manifest(std::string_view run_id) const;
  void save_manifest(const RunManifest& manifest) const;

  enum class BeginResult { kFresh, kContinue, kAlreadyComplete };

  /// Binds `stage` to `digest`. A complete stage with a different digest
  /// raises StageSealed; a partial one raises Config.
  BeginResult begin_stage(std::string_view run_id, Stage stage, const std::string& digest) const;

  /// Appends via write-then-rename. Records whose key already exists with
  /// the same payload are skipped; a differing payload raises KeyCollision.
  /// Returns the number of new lines.
  std::size_t append_records(std::string_view run_id, Stage stage,
                             std::span<const nlohmann::json> records) const;
  std::vector<nlohmann::json> read_records(std::string_view run_id, Stage stage) const;

  void seal(std::string_view run_id, Stage stage) const;
  void mark_failed(std::string_view run_id, Stage stage) const;

  ResumePoint resume_point(std::string_view run_id) const;

 private:
  std::filesystem::path root_;
};

}  // namespace fairpair::store
