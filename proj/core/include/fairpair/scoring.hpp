#pragma once

// Comparison functions (Phi) over generated texts: token-set Jaccard
// dissimilarity and lexicon sentiment dissimilarity, plus the tokenizer both
// share.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

namespace fairpair::scoring {

/// Splits on every maximal run of non-alphanumeric bytes and lowercases ASCII.
/// Bytes >= 0x80 count as alphanumeric so UTF-8 words stay intact.
std::vector<std::string> tokenize(std::string_view text);

/// True for bytes that belong to a token under `tokenize`.
constexpr bool is_word_byte(unsigned char c) noexcept {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::string ascii_lower(std::string_view text);

enum class JaccardMode { kSet, kMultiset };

/// Distinct case-folded tokens of a text with their multiplicities.
class TokenSet {
 public:
  TokenSet() = default;

  static TokenSet from_tokens(std::span<const std::string> tokens);
  static TokenSet from_text(std::string_view text);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  /// Token count before collapsing duplicates.
  std::size_t source_length() const noexcept { return source_length_; }
  bool contains(std::string_view token) const;
  std::uint32_t count(std::string_view token) const;
  /// Distinct tokens in lexicographic order.
  std::vector<std::string> tokens() const;

  /// Set union; multiplicities add.
  void merge(const TokenSet& other);

  friend double jaccard_dissimilarity(const TokenSet& u, const TokenSet& v,
                                      JaccardMode mode);

 private:
  // Sorted by (hash, token); comparisons touch the string only on hash ties.
  struct Entry {
    std::uint64_t hash;
    std::string token;
    std::uint32_t count;
  };
  static bool entry_less(const Entry& a, const Entry& b);
  std::vector<Entry> entries_;
  std::size_t source_length_ = 0;
};

/// 1 - |u ∩ v| / |u ∪ v|, and 0 when both are empty.
double jaccard_dissimilarity(const TokenSet& u, const TokenSet& v,
                             JaccardMode mode = JaccardMode::kSet);
double jaccard_dissimilarity(std::span<const std::string> u,
                             std::span<const std::string> v,
                             JaccardMode mode = JaccardMode::kSet);

struct SentimentSettings {
  int negation_window = 3;
  double alpha = 15.0;
  double negation_scalar = -0.74;
};

class SentimentLexicon {
 public:
  using Settings = SentimentSettings;

  SentimentLexicon(std::unordered_map<std::string, double> entries,
                   std::unordered_set<std::string> negators,
                   Settings settings);
  SentimentLexicon(std::unordered_map<std::string, double> entries,
                   std::unordered_set<std::string> negators)
      : SentimentLexicon(std::move(entries), std::move(negators), Settings{}) {}

  /// `token<TAB>valence` lines, then negators one per line after a
  /// `[negators]` header. Blank lines and `#` comments are skipped.
  static SentimentLexicon parse(std::istream& in, Settings settings = {});
  static SentimentLexicon load(const std::filesystem::path& path,
                               Settings settings = {});

  std::optional<double> valence(std::string_view token) const;
  bool is_negator(std::string_view token) const;
  const Settings& settings() const noexcept { return settings_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::unordered_map<std::string, double> entries_;
  std::unordered_set<std::string> negators_;
  Settings settings_;
};

/// raw / sqrt(raw^2 + alpha) over summed valences, negated ones scaled.
double sentiment_score(std::string_view text, const SentimentLexicon& lexicon);
double sentiment_score(std::span<const std::string> tokens,
                       const SentimentLexicon& lexicon);
double sentiment_dissimilarity(std::string_view u, std::string_view v,
                               const SentimentLexicon& lexicon);

enum class PhiKind { kJaccard, kSentiment };

std::string_view to_string(PhiKind kind) noexcept;
std::optional<PhiKind> parse_phi_kind(std::string_view name) noexcept;

/// Per-text representation a Phi compares. Pre-computing it once per text
/// keeps the n^2 comparison loops free of tokenization.
using Feature = std::variant<TokenSet, double>;

/// A dissimilarity between two texts. Implementations must be symmetric and
/// return 0 on identical inputs.
class Phi {
 public:
  virtual ~Phi() = default;

  virtual std::string label() const = 0;
  virtual PhiKind kind() const = 0;
  virtual Feature featurize(std::string_view text) const = 0;
  virtual double compare(const Feature& a, const Feature& b) const = 0;
  /// Collapses a fold of features into one (union of tokens, mean score).
  virtual Feature aggregate(std::span<const Feature> members) const = 0;

  double operator()(std::string_view u, std::string_view v) const {
    return compare(featurize(u), featurize(v));
  }
};

class JaccardPhi final : public Phi {
 public:
  explicit JaccardPhi(JaccardMode mode = JaccardMode::kSet) : mode_(mode) {}

  std::string label() const override;
  PhiKind kind() const override { return PhiKind::kJaccard; }
  Feature featurize(std::string_view text) const override;
  double compare(const Feature& a, const Feature& b) const override;
  Feature aggregate(std::span<const Feature> members) const override;

 private:
  JaccardMode mode_;
};

class SentimentPhi final : public Phi {
 public:
  explicit SentimentPhi(std::shared_ptr<const SentimentLexicon> lexicon);

  std::string label() const override { return "sentiment"; }
  PhiKind kind() const override { return PhiKind::kSentiment; }
  Feature featurize(std::string_view text) const override;
  double compare(const Feature& a, const Feature& b) const override;
  Feature aggregate(std::span<const Feature> members) const override;

  const SentimentLexicon& lexicon() const noexcept { return *lexicon_; }

 private:
  std::shared_ptr<const SentimentLexicon> lexicon_;
};

}  // namespace fairpair::scoring
