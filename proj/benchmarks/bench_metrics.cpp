#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "fairpair/metrics.hpp"
#include "fairpair/perturbation.hpp"
#include "fairpair/scoring.hpp"

namespace {

std::vector<std::string> random_texts(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(0, 199);
  std::uniform_int_distribution<int> len(20, 60);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s = "John is a man, working as a doctor.";
    for (int j = len(rng); j > 0; --j) s += " w" + std::to_string(word(rng));
    out.push_back(std::move(s));
  }
  return out;
}

void BM_Bias(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_texts(n, 1);
  const auto b = random_texts(n, 2);
  const fairpair::scoring::JaccardPhi phi;
  for (auto _ : state) benchmark::DoNotOptimize(fairpair::metrics::bias(a, b, phi).value);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Bias)->RangeMultiplier(2)->Range(50, 800)->Complexity();

void BM_Variability(benchmark::State& state) {
  const auto a = random_texts(static_cast<std::size_t>(state.range(0)), 3);
  const fairpair::scoring::JaccardPhi phi;
  for (auto _ : state) benchmark::DoNotOptimize(fairpair::metrics::sampling_variability(a, phi).value);
}
BENCHMARK(BM_Variability)->Arg(100)->Arg(500);

void BM_EvaluatePromptKFold(benchmark::State& state) {
  const auto fp = fairpair::metrics::make_fairpair_set("p", random_texts(500, 4), random_texts(500, 5));
  const fairpair::scoring::JaccardPhi phi;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fairpair::metrics::evaluate_prompt(fp, phi, static_cast<int>(state.range(0)), 7).b);
  }
}
BENCHMARK(BM_EvaluatePromptKFold)->Arg(50)->Arg(200);

void BM_Tokenize(benchmark::State& state) {
  const auto texts = random_texts(100, 6);
  for (auto _ : state) {
    for (const auto& t : texts) benchmark::DoNotOptimize(fairpair::scoring::tokenize(t));
  }
}
BENCHMARK(BM_Tokenize);

void BM_RulePerturb(benchmark::State& state) {
  const auto texts = random_texts(100, 8);
  const auto p = fairpair::perturbation::EntityPerturbation::male_to_female();
  for (auto _ : state) {
    for (const auto& t : texts) benchmark::DoNotOptimize(fairpair::perturbation::rule_perturb(t, p));
  }
}
BENCHMARK(BM_RulePerturb);

}  // namespace

BENCHMARK_MAIN();
