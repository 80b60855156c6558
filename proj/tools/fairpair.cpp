// fairpair: command-line front end for the counterfactual bias pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "fairpair/error.hpp"
#include "fairpair/pipeline.hpp"
#include "fairpair/run_config.hpp"

namespace {

using fairpair::RunConfig;
using fairpair::pipeline::Pipeline;

struct Overrides {
  std::string config_path;
  std::optional<std::string> run_id;
  std::optional<std::string> output_dir;
  std::optional<std::string> backend;
  std::optional<std::string> replay;
  std::optional<double> skew;
  std::optional<int> n;
  std::optional<double> top_p;
  std::optional<int> max_new_tokens;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> perturbation_mode;
  std::optional<double> tau;
  std::optional<std::string> phi;
  std::optional<std::string> lexicon;
  std::optional<std::string> grounding;
  std::optional<int> k;
  std::optional<std::uint64_t> metrics_seed;
  bool resume = false;
  bool verbose = false;
};

RunConfig load_config(const Overrides& o) {
  auto c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  nlohmann::json j = c.to_json();
  // Route overrides through the JSON form so they get the same parsing.
  if (o.run_id) j["run_id"] = *o.run_id;
  if (o.output_dir) j["output_dir"] = *o.output_dir;
  if (o.backend) j["backend"]["kind"] = *o.backend;
  if (o.replay) j["backend"]["replay_path"] = *o.replay;
  if (o.skew) j["backend"]["synthetic"]["skew"] = *o.skew;
  if (o.n) j["sampling"]["n_samples"] = *o.n;
  if (o.top_p) j["sampling"]["top_p"] = *o.top_p;
  if (o.max_new_tokens) j["sampling"]["max_new_tokens"] = *o.max_new_tokens;
  if (o.seed) j["sampling"]["seed"] = *o.seed;
  if (o.perturbation_mode) j["perturbation"]["mode"] = *o.perturbation_mode;
  if (o.tau) j["perturbation"]["tau"] = *o.tau;
  if (o.phi) j["scoring"]["phi"] = *o.phi;
  if (o.lexicon) j["scoring"]["lexicon"] = *o.lexicon;
  if (o.grounding) j["scoring"]["grounding"] = *o.grounding;
  if (o.k) j["metrics"]["k"] = *o.k;
  if (o.metrics_seed) j["metrics"]["seed"] = *o.metrics_seed;
  // Secrets never appear in to_json(); carry the interpolated keys over.
  auto out = RunConfig::from_json(j, c.base_dir);
  out.backend.remote.api_key = c.backend.remote.api_key;
  out.perturbation.remote.api_key = c.perturbation.remote.api_key;
  return out;
}

void print_reports(const fairpair::pipeline::Reports& r) {
  std::cout << "metrics: " << r.metrics.string() << "\n"
            << "summary: " << r.summary_csv.string() << "\n"
            << "report:  " << r.report_json.string() << "\n";
  for (const auto& p : r.ngram_files) std::cout << "ngrams:  " << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual bias evaluation of text generators"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--run-id", o.run_id, "Run directory name under the output directory");
  app.add_option("--output-dir", o.output_dir, "Root of the run store");
  app.add_option("--backend", o.backend, "synthetic | replay | remote");
  app.add_option("--replay", o.replay, "Replay JSONL for the replay backend");
  app.add_option("--skew", o.skew, "Synthetic backend entity skew in [0, 1]");
  app.add_option("--n", o.n, "Samples per prompt");
  app.add_option("--top-p", o.top_p, "Nucleus sampling threshold");
  app.add_option("--max-new-tokens", o.max_new_tokens, "Tokens per generation");
  app.add_option("--seed", o.seed, "Generation seed");
  app.add_option("--perturbation", o.perturbation_mode, "rule | remote");
  app.add_option("--tau", o.tau, "Maximum Jaccard dissimilarity of an accepted perturbation");
  app.add_option("--phi", o.phi, "jaccard | sentiment | both");
  app.add_option("--lexicon", o.lexicon, "Sentiment lexicon TSV");
  app.add_option("--grounding", o.grounding, "full | continuation");
  app.add_option("--k", o.k, "Number of folds (omit for the per-sample path)");
  app.add_option("--metrics-seed", o.metrics_seed, "Fold assignment seed");
  app.add_flag("-v,--verbose", o.verbose, "Debug logging");

  auto* run = app.add_subcommand("run", "Run every stage and write the reports");
  run->add_flag("--resume", o.resume, "Continue an existing run");
  auto* corpus = app.add_subcommand("corpus", "Expand the prompt templates");
  auto* generate = app.add_subcommand("generate", "Sample continuations for both prompt sides");
  auto* perturb = app.add_subcommand("perturb", "Perturb side-x continuations and validate them");
  auto* score = app.add_subcommand("score", "Score every grounded sample");
  auto* metrics = app.add_subcommand("metrics", "Bias, sampling variability and FairPair metric per prompt");
  auto* ngrams = app.add_subcommand("ngrams", "Summary, report and differential n-grams");
  auto* ablate = app.add_subcommand("ablate", "Convergence curves and k-fold sweeps");
  fairpair::pipeline::AblationOptions ablation;
  int max_n = 0;
  ablate->add_option("--max-n", max_n, "Largest prefix length");
  ablate->add_option("--step", ablation.step, "Prefix length increment");
  ablate->add_option("--ks", ablation.ks, "Fold counts for the k-fold sweep")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const auto config = load_config(o);
    if (run->parsed()) {
      fairpair::pipeline::Reports reports;
      const int code = fairpair::pipeline::run_pipeline(config, o.resume, &reports);
      if (code == 0) print_reports(reports);
      return code;
    }
    Pipeline p(config);
    if (corpus->parsed()) p.run_corpus();
    if (generate->parsed()) p.run_generation();
    if (perturb->parsed()) {
      p.run_perturbation();
      p.run_validation();
    }
    if (score->parsed()) p.run_scoring();
    if (metrics->parsed()) p.run_metrics();
    if (ngrams->parsed()) print_reports(p.write_reports());
    if (ablate->parsed()) {
      if (max_n > 0) ablation.max_n = max_n;
      for (const auto& path : p.ablate(ablation)) std::cout << path.string() << "\n";
    }
    return 0;
  } catch (const fairpair::Error& e) {
    spdlog::error("{}", e.what());
    return fairpair::pipeline::exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return fairpair::pipeline::kExitFailure;
  }
}
