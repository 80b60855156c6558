#include "fairpair/corpus.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "fairpair/error.hpp"
#include "fairpair/perturbation.hpp"
#include "fairpair/scoring.hpp"

namespace fairpair::corpus {

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string collapse_spaces(std::string s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == ' ' && !out.empty() && out.back() == ' ') continue;
    out.push_back(c);
  }
  return out;
}

std::string render(std::string_view form, std::string_view name, const std::string& descriptor,
                   std::string_view occupation) {
  std::string text(form);
  if (descriptor.empty()) {
    // Drop the optional descriptor clause together with its article/comma.
    for (std::string_view clause : {"a {descriptor}, ", "a {descriptor} ", "{descriptor}, ",
                                    "{descriptor} ", "{descriptor}"}) {
      const auto pos = text.find(clause);
      if (pos != std::string::npos) {
        text.erase(pos, clause.size());
        break;
      }
    }
  } else {
    replace_all(text, "{descriptor}", descriptor);
  }
  replace_all(text, "{name}", name);
  replace_all(text, "{occupation}", occupation);
  text = collapse_spaces(std::move(text));
  const auto open = text.find('{');
  if (open != std::string::npos && text.find('}', open) != std::string::npos) {
    throw Error(ErrorCode::kUnfilledSlot, "slot left unfilled in '" + text + "'");
  }
  return text;
}

void validate(const TemplateSpec& spec) {
  if (spec.occupations.empty()) {
    throw Error(ErrorCode::kEmptyOccupationList, "template has no occupations");
  }
  if (scoring::ascii_lower(spec.source_name) == scoring::ascii_lower(spec.target_name)) {
    throw Error(ErrorCode::kIdenticalEntities, "source and target name are both '" + spec.source_name + "'");
  }
  std::unordered_set<std::string> seen;
  for (const auto& occ : spec.occupations) {
    if (!seen.insert(occ).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate occupation '" + occ + "'");
    }
  }
  if (count_occurrences(spec.surface_form, "{name}") != 1 ||
      count_occurrences(spec.surface_form, "{occupation}") != 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "surface form needs exactly one {name} and one {occupation} slot");
  }
  if (count_occurrences(spec.surface_form, "{descriptor}") > 1) {
    throw Error(ErrorCode::kInvalidArgument, "surface form has more than one {descriptor} slot");
  }
  if (spec.source_name.empty() || spec.target_name.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "entity names must be non-empty");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const PromptPair& p) {
  j = nlohmann::json{{"id", p.id},
                     {"original", p.original},
                     {"perturbed", p.perturbed},
                     {"occupation", p.occupation},
                     {"descriptors", p.descriptors}};
}

void from_json(const nlohmann::json& j, PromptPair& p) {
  j.at("id").get_to(p.id);
  j.at("original").get_to(p.original);
  j.at("perturbed").get_to(p.perturbed);
  j.at("occupation").get_to(p.occupation);
  j.at("descriptors").get_to(p.descriptors);
}

const std::vector<std::string>& builtin_occupations() {
  static const std::vector<std::string> kList = {
      "technician",  "accountant",   "supervisor",   "engineer",    "worker",
      "educator",    "clerk",        "counselor",    "inspector",   "mechanic",
      "manager",     "therapist",    "administrator", "salesperson", "receptionist",
      "librarian",   "advisor",      "pharmacist",   "janitor",     "psychologist",
      "physician",   "carpenter",    "nurse",        "investigator", "bartender",
      "specialist",  "electrician",  "officer",      "pathologist", "teacher",
      "lawyer",      "planner",      "practitioner", "plumber",     "instructor",
      "surgeon",     "veterinarian", "paramedic",    "examiner",    "chemist",
      "machinist",   "appraiser",    "nutritionist", "architect",   "hairdresser",
      "baker",       "programmer",   "paralegal",    "hygienist",   "scientist",
      "dispatcher",  "cashier",      "auditor",      "dietitian",   "painter",
      "broker",      "chef",         "doctor",       "firefighter", "secretary",
  };
  return kList;
}

OccupationList parse_occupations(std::istream& in) {
  OccupationList result;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    std::string occ = line.substr(first, last - first + 1);
    if (seen.insert(occ).second) {
      result.occupations.push_back(std::move(occ));
    } else {
      spdlog::warn("duplicate occupation '{}' ignored", occ);
      result.duplicates.push_back(std::move(occ));
    }
  }
  if (result.occupations.empty()) {
    throw Error(ErrorCode::kEmptyOccupationList, "occupation list is empty");
  }
  return result;
}

OccupationList load_occupations(std::string_view source) {
  if (source == kBuiltinOccupations) return OccupationList{builtin_occupations(), {}};
  const std::filesystem::path path(source);
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open occupation list " + path.string());
  return parse_occupations(in);
}

std::string slugify(std::string_view text) {
  std::string out;
  bool dash = false;
  for (unsigned char c : text) {
    if (scoring::is_word_byte(c)) {
      if (dash && !out.empty()) out.push_back('-');
      dash = false;
      out.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
    } else {
      dash = true;
    }
  }
  return out;
}

std::vector<PromptPair> expand_templates(const TemplateSpec& spec) {
  validate(spec);
  for (const auto& occ : spec.occupations) {
    for (const auto* name : {&spec.source_name, &spec.target_name}) {
      if (perturbation::contains_word(occ, *name)) {
        throw Error(ErrorCode::kNameCollision,
                    "name '" + *name + "' appears inside occupation '" + occ + "'");
      }
    }
  }
  const std::vector<DescriptorSet> sets =
      spec.descriptor_sets.empty() ? std::vector<DescriptorSet>{DescriptorSet{}}
                                   : spec.descriptor_sets;
  const auto name_slug = slugify(spec.source_name + " " + spec.target_name);

  std::vector<PromptPair> pairs;
  pairs.reserve(spec.occupations.size() * sets.size());
  for (const auto& occ : spec.occupations) {
    for (const auto& set : sets) {
      std::string src_desc;
      std::string tgt_desc;
      std::string desc_slug;
      PromptPair pair;
      for (const auto& d : set) {
        if (!src_desc.empty()) {
          src_desc += ' ';
          tgt_desc += ' ';
          desc_slug += ' ';
        }
        src_desc += d.source;
        tgt_desc += d.target;
        desc_slug += d.source + " " + d.target;
        pair.descriptors.push_back(d.source + "/" + d.target);
      }
      pair.occupation = occ;
      pair.original = render(spec.surface_form, spec.source_name, src_desc, occ);
      pair.perturbed = render(spec.surface_form, spec.target_name, tgt_desc, occ);
      pair.id = slugify(occ);
      if (!desc_slug.empty()) pair.id += "-" + slugify(desc_slug);
      pair.id += "-" + name_slug;
      if (pair.original == pair.perturbed) {
        throw Error(ErrorCode::kIdenticalEntities, "original and perturbed prompt coincide");
      }
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

void write_jsonl(std::ostream& out, const std::vector<PromptPair>& pairs) {
  for (const auto& p : pairs) out << nlohmann::json(p).dump() << '\n';
}

}  // namespace fairpair::corpus
