#pragma once

// The perturbation function p: a deterministic word-level rewriter, an
// LLM-backed rewriter, and the filters that decide whether a rewrite is
// acceptable.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fairpair/scoring.hpp"

namespace fairpair::http {
class CompletionClient;
}

namespace fairpair::perturbation {

/// One source token and its replacement. A mapping with two targets is
/// ambiguous: the first target is used when the next word is an ordinary
/// alphabetic word (possessive reading), the second otherwise.
struct WordMapping {
  std::string source;
  std::vector<std::string> targets;
};

struct AmbiguityResolution {
  std::size_t offset;  // byte offset of the token in the input text
  std::string source;
  std::string chosen;
};

class EntityPerturbation {
 public:
  EntityPerturbation(std::string source_name, std::string target_name,
                     std::vector<WordMapping> word_map,
                     std::string source_group = "male",
                     std::string target_group = "female");

  /// John (male) -> Jane (female) with the shipped pronoun/title map.
  static EntityPerturbation male_to_female(std::string source_name = "John",
                                           std::string target_name = "Jane");
  static std::vector<WordMapping> default_male_to_female_map();

  /// Two-column `source<TAB>target` lines; `a|b` in the target column marks
  /// an ambiguous mapping.
  static std::vector<WordMapping> load_word_map(const std::filesystem::path& path);

  /// Reverse direction. Sources sharing a target collapse into one ambiguous
  /// mapping whose targets keep the forward order (his, him -> her|his|him).
  EntityPerturbation inverse() const;

  /// Adds descriptor pairs (man -> woman) not already covered by the map.
  EntityPerturbation with_pairs(
      std::span<const std::pair<std::string, std::string>> pairs) const;

  const std::string& source_name() const noexcept { return source_name_; }
  const std::string& target_name() const noexcept { return target_name_; }
  const std::string& source_group() const noexcept { return source_group_; }
  const std::string& target_group() const noexcept { return target_group_; }
  const std::vector<WordMapping>& word_map() const noexcept { return word_map_; }
  std::string direction_label() const;

  /// Lowercased lookup; nullptr when the token is not a map source.
  const WordMapping* find(std::string_view lowered_token) const;

 private:
  std::string source_name_;
  std::string target_name_;
  std::vector<WordMapping> word_map_;
  std::string source_group_;
  std::string target_group_;
};

/// Replaces word-boundary matches of the source name and word-map sources,
/// carrying over the matched token's case pattern. Everything else is
/// copied byte for byte.
std::string rule_perturb(std::string_view text, const EntityPerturbation& p,
                         std::vector<AmbiguityResolution>* resolutions = nullptr);

/// Instruction prompt for an LLM rewriter.
std::string build_llm_perturb_request(std::string_view original,
                                      const EntityPerturbation& p,
                                      std::string_view occupation);

enum class VerdictReason { kOk, kBadPrefix, kResidualSourceEntity, kExcessiveDissimilarity };

std::string_view to_string(VerdictReason reason) noexcept;
VerdictReason parse_verdict_reason(std::string_view name);

struct ValidationVerdict {
  bool accepted = false;
  VerdictReason reason = VerdictReason::kOk;
  double jaccard_dissimilarity = 0.0;
};

/// What gets mapped to shared placeholders before the Jaccard check.
enum class Neutralization { kNone, kNames, kNamesAndWordMap };

std::string_view to_string(Neutralization n) noexcept;
Neutralization parse_neutralization(std::string_view name);

struct ValidationOptions {
  double tau = 0.15;
  Neutralization neutralize = Neutralization::kNamesAndWordMap;
  scoring::JaccardMode jaccard_mode = scoring::JaccardMode::kSet;
};

/// Lowercases, turns punctuation into spaces and collapses whitespace.
std::string normalize_for_prefix(std::string_view text);

/// Token list with entity names (and optionally word-map terms) mapped onto
/// shared placeholders.
std::vector<std::string> neutralized_tokens(std::string_view text,
                                            const EntityPerturbation& p,
                                            Neutralization mode);

/// Checks, in order: prefix, residual source entity, dissimilarity against
/// tau. The first failing check names the reason. An empty expected_prefix
/// disables the prefix check.
ValidationVerdict validate_perturbation(std::string_view original,
                                        std::string_view perturbed,
                                        std::string_view expected_prefix,
                                        const EntityPerturbation& p,
                                        const ValidationOptions& options = {});

/// True when `name` occurs as a whole word (case-insensitive) in `text`.
bool contains_word(std::string_view text, std::string_view name);

double perturbation_success_rate(std::span<const ValidationVerdict> verdicts);

struct LlmPerturberOptions {
  int max_tokens = 512;
  double top_p = 1.0;
};

/// Sends the instruction prompt to a completion endpoint and returns the
/// rewritten text.
class LlmPerturber {
 public:
  LlmPerturber(std::shared_ptr<const http::CompletionClient> client,
               EntityPerturbation p, LlmPerturberOptions options = {});

  std::string perturb(std::string_view original, std::string_view occupation) const;
  const EntityPerturbation& perturbation() const noexcept { return p_; }

 private:
  std::shared_ptr<const http::CompletionClient> client_;
  EntityPerturbation p_;
  LlmPerturberOptions options_;
};

}  // namespace fairpair::perturbation
