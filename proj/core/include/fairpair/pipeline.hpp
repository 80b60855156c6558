#pragma once

// Stage runner over a RunStore. Each stage reads the previous stage's
// artifact, skips prompts it already finished and seals itself at the end,
// so an interrupted run resumes from the first unfinished prompt.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairpair/error.hpp"
#include "fairpair/generation.hpp"
#include "fairpair/run_config.hpp"
#include "fairpair/scoring.hpp"
#include "fairpair/store.hpp"

namespace fairpair::pipeline {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitBackend = 3,
  kExitInsufficientSamples = 4,
  kExitStore = 5,
};

int exit_code_for(ErrorCode code) noexcept;

struct Reports {
  std::filesystem::path run_dir;
  std::filesystem::path metrics;
  std::filesystem::path summary_csv;
  std::filesystem::path report_json;
  std::vector<std::filesystem::path> ngram_files;
};

struct AblationOptions {
  std::optional<int> max_n;  // default: all usable samples
  int step = 50;
  std::vector<int> ks{2, 5, 10, 20, 50, 100, 200};
};

/// prompt + continuation with exactly one separating space unless the
/// continuation already starts with whitespace.
std::string ground(std::string_view prompt, std::string_view continuation);

class Pipeline {
 public:
  /// `backend` replaces the configured generation backend when given.
  explicit Pipeline(RunConfig config, std::shared_ptr<generation::Backend> backend = nullptr);

  const RunConfig& config() const noexcept { return config_; }
  const store::RunStore& store() const noexcept { return store_; }
  std::filesystem::path run_dir() const { return store_.run_dir(config_.run_id); }

  /// Creates the run directory. With `resume`, an existing run is reused;
  /// without it an existing run is a config error.
  void open(bool resume);

  void run_corpus();
  void run_generation();
  void run_perturbation();
  void run_validation();
  void run_scoring();
  void run_metrics();
  /// Summary CSV, report JSON and differential n-grams from sealed stages.
  Reports write_reports();
  /// Convergence curves and k-fold sweeps per prompt and Φ.
  std::vector<std::filesystem::path> ablate(const AblationOptions& options);

  /// Every stage in order followed by the reports.
  Reports run_all(bool resume);

 private:
  void ensure_run();
  void require_complete(store::Stage stage) const;
  std::shared_ptr<generation::Backend> make_backend() const;
  const std::vector<std::unique_ptr<scoring::Phi>>& phis();
  std::shared_ptr<const scoring::SentimentLexicon> lexicon();

  RunConfig config_;
  store::RunStore store_;
  std::shared_ptr<generation::Backend> backend_;
  std::shared_ptr<const scoring::SentimentLexicon> lexicon_;
  std::vector<std::unique_ptr<scoring::Phi>> phis_;
};

/// run_all wrapped in error-to-exit-code translation.
int run_pipeline(const RunConfig& config, bool resume, Reports* reports = nullptr);

}  // namespace fairpair::pipeline
