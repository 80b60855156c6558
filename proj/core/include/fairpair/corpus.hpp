#pragma once

// Templated prompt corpus: "{Name} is a {descriptor}, working as a
// {occupation}." instantiated for a source and target entity.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairpair::corpus {

struct DescriptorPair {
  std::string source;
  std::string target;
};

/// Descriptors rendered together in one prompt ("young man").
using DescriptorSet = std::vector<DescriptorPair>;

inline constexpr std::string_view kCanonicalSurfaceForm =
    "{name} is a {descriptor}, working as a {occupation}.";

struct TemplateSpec {
  std::string source_name = "John";
  std::string target_name = "Jane";
  /// Each entry yields one prompt per occupation. Empty means the
  /// zero-descriptor form "{Name} is working as a {occupation}."
  std::vector<DescriptorSet> descriptor_sets{{{"man", "woman"}}};
  std::vector<std::string> occupations;
  std::string surface_form{kCanonicalSurfaceForm};
};

struct PromptPair {
  std::string id;
  std::string original;
  std::string perturbed;
  std::string occupation;
  std::vector<std::string> descriptors;  // "source/target" per descriptor

  friend bool operator==(const PromptPair&, const PromptPair&) = default;
};

void to_json(nlohmann::json& j, const PromptPair& p);
void from_json(const nlohmann::json& j, PromptPair& p);

/// The 60 built-in occupations, in a fixed order.
const std::vector<std::string>& builtin_occupations();

inline constexpr std::string_view kBuiltinOccupations = "builtin";

struct OccupationList {
  std::vector<std::string> occupations;
  std::vector<std::string> duplicates;  // dropped repeats, in encounter order
};

/// One occupation per line, `#` comments ignored, duplicates dropped with a
/// warning. `source` may be kBuiltinOccupations.
OccupationList load_occupations(std::string_view source);
OccupationList parse_occupations(std::istream& in);

/// Lowercase, hyphen-separated.
std::string slugify(std::string_view text);

/// Occupation order, then descriptor-set order. Throws on unfilled slots and
/// on a name appearing inside an occupation.
std::vector<PromptPair> expand_templates(const TemplateSpec& spec);

void write_jsonl(std::ostream& out, const std::vector<PromptPair>& pairs);

}  // namespace fairpair::corpus
