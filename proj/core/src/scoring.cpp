#include "fairpair/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "fairpair/error.hpp"

namespace fairpair::scoring {

namespace {

std::uint64_t token_hash(std::string_view token) {
  return std::hash<std::string_view>{}(token);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.push_back(ascii_lower(text.substr(start, i - start)));
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// TokenSet

bool TokenSet::entry_less(const Entry& a, const Entry& b) {
  if (a.hash != b.hash) return a.hash < b.hash;
  return a.token < b.token;
}

TokenSet TokenSet::from_tokens(std::span<const std::string> tokens) {
  TokenSet set;
  set.source_length_ = tokens.size();
  set.entries_.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t.empty()) continue;
    set.entries_.push_back(Entry{token_hash(t), t, 1});
  }
  std::sort(set.entries_.begin(), set.entries_.end(), entry_less);
  // Collapse runs of equal tokens, accumulating counts.
  std::vector<Entry> unique;
  unique.reserve(set.entries_.size());
  for (auto& e : set.entries_) {
    if (!unique.empty() && unique.back().hash == e.hash &&
        unique.back().token == e.token) {
      ++unique.back().count;
    } else {
      unique.push_back(std::move(e));
    }
  }
  set.entries_ = std::move(unique);
  return set;
}

TokenSet TokenSet::from_text(std::string_view text) {
  const auto tokens = tokenize(text);
  return from_tokens(tokens);
}

bool TokenSet::contains(std::string_view token) const { return count(token) > 0; }

std::uint32_t TokenSet::count(std::string_view token) const {
  const Entry probe{token_hash(token), std::string(token), 0};
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), probe, entry_less);
  if (it != entries_.end() && it->hash == probe.hash && it->token == token) return it->count;
  return 0;
}

std::vector<std::string> TokenSet::tokens() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.token);
  std::sort(out.begin(), out.end());
  return out;
}

void TokenSet::merge(const TokenSet& other) {
  std::vector<Entry> merged;
  merged.reserve(entries_.size() + other.entries_.size());
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  while (a != entries_.end() || b != other.entries_.end()) {
    if (b == other.entries_.end() || (a != entries_.end() && entry_less(*a, *b))) {
      merged.push_back(std::move(*a++));
    } else if (a == entries_.end() || entry_less(*b, *a)) {
      merged.push_back(*b++);
    } else {
      Entry e = std::move(*a++);
      e.count += b->count;
      ++b;
      merged.push_back(std::move(e));
    }
  }
  entries_ = std::move(merged);
  source_length_ += other.source_length_;
}

double jaccard_dissimilarity(const TokenSet& u, const TokenSet& v, JaccardMode mode) {
  if (u.empty() && v.empty()) return 0.0;
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  auto a = u.entries_.begin();
  auto b = v.entries_.begin();
  const bool multiset = mode == JaccardMode::kMultiset;
  while (a != u.entries_.end() && b != v.entries_.end()) {
    if (TokenSet::entry_less(*a, *b)) {
      uni += multiset ? a->count : 1;
      ++a;
    } else if (TokenSet::entry_less(*b, *a)) {
      uni += multiset ? b->count : 1;
      ++b;
    } else {
      inter += multiset ? std::min(a->count, b->count) : 1;
      uni += multiset ? std::max(a->count, b->count) : 1;
      ++a;
      ++b;
    }
  }
  for (; a != u.entries_.end(); ++a) uni += multiset ? a->count : 1;
  for (; b != v.entries_.end(); ++b) uni += multiset ? b->count : 1;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

double jaccard_dissimilarity(std::span<const std::string> u,
                             std::span<const std::string> v, JaccardMode mode) {
  return jaccard_dissimilarity(TokenSet::from_tokens(u), TokenSet::from_tokens(v), mode);
}

// ---------------------------------------------------------------------------
// Sentiment

SentimentLexicon::SentimentLexicon(std::unordered_map<std::string, double> entries,
                                   std::unordered_set<std::string> negators,
                                   Settings settings)
    : settings_(settings) {
  if (!(settings_.alpha > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sentiment alpha must be > 0");
  }
  if (settings_.negation_window < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negation window must be >= 0");
  }
  for (auto& [token, valence] : entries) {
    if (!(valence >= -4.0 && valence <= 4.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "valence for '" + token + "' outside [-4, 4]");
    }
    entries_.emplace(ascii_lower(token), valence);
  }
  for (const auto& n : negators) negators_.insert(ascii_lower(n));
}

SentimentLexicon SentimentLexicon::parse(std::istream& in, Settings settings) {
  std::unordered_map<std::string, double> entries;
  std::unordered_set<std::string> negators;
  bool in_negators = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (body == "[negators]") {
      in_negators = true;
      continue;
    }
    if (in_negators) {
      negators.emplace(body);
      continue;
    }
    const auto tab = body.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "lexicon line " + std::to_string(line_no) + ": expected token<TAB>valence");
    }
    const std::string token(trim(body.substr(0, tab)));
    const std::string value(trim(body.substr(tab + 1)));
    double valence = 0.0;
    try {
      std::size_t used = 0;
      valence = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument,
                  "lexicon line " + std::to_string(line_no) + ": bad valence '" + value + "'");
    }
    entries[token] = valence;
  }
  return SentimentLexicon(std::move(entries), std::move(negators), settings);
}

SentimentLexicon SentimentLexicon::load(const std::filesystem::path& path,
                                        Settings settings) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open lexicon " + path.string());
  return parse(in, settings);
}

std::optional<double> SentimentLexicon::valence(std::string_view token) const {
  const auto it = entries_.find(std::string(token));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool SentimentLexicon::is_negator(std::string_view token) const {
  return negators_.contains(std::string(token));
}

double sentiment_score(std::span<const std::string> tokens, const SentimentLexicon& lexicon) {
  const auto& s = lexicon.settings();
  double raw = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto v = lexicon.valence(tokens[i]);
    if (!v) continue;
    double value = *v;
    const std::size_t window = static_cast<std::size_t>(s.negation_window);
    const std::size_t from = i >= window ? i - window : 0;
    for (std::size_t j = from; j < i; ++j) {
      if (lexicon.is_negator(tokens[j])) {
        value *= s.negation_scalar;
        break;
      }
    }
    raw += value;
  }
  if (raw == 0.0) return 0.0;
  return raw / std::sqrt(raw * raw + s.alpha);
}

double sentiment_score(std::string_view text, const SentimentLexicon& lexicon) {
  const auto tokens = tokenize(text);
  return sentiment_score(tokens, lexicon);
}

double sentiment_dissimilarity(std::string_view u, std::string_view v,
                               const SentimentLexicon& lexicon) {
  return std::abs(sentiment_score(u, lexicon) - sentiment_score(v, lexicon));
}

// ---------------------------------------------------------------------------
// Phi implementations

std::string_view to_string(PhiKind kind) noexcept {
  switch (kind) {
    case PhiKind::kJaccard: return "jaccard";
    case PhiKind::kSentiment: return "sentiment";
  }
  return "unknown";
}

std::optional<PhiKind> parse_phi_kind(std::string_view name) noexcept {
  if (name == "jaccard") return PhiKind::kJaccard;
  if (name == "sentiment") return PhiKind::kSentiment;
  return std::nullopt;
}

std::string JaccardPhi::label() const {
  return mode_ == JaccardMode::kSet ? "jaccard" : "jaccard_multiset";
}

Feature JaccardPhi::featurize(std::string_view text) const {
  return TokenSet::from_text(text);
}

double JaccardPhi::compare(const Feature& a, const Feature& b) const {
  return jaccard_dissimilarity(std::get<TokenSet>(a), std::get<TokenSet>(b), mode_);
}

Feature JaccardPhi::aggregate(std::span<const Feature> members) const {
  TokenSet out;
  for (const auto& m : members) out.merge(std::get<TokenSet>(m));
  return out;
}

SentimentPhi::SentimentPhi(std::shared_ptr<const SentimentLexicon> lexicon)
    : lexicon_(std::move(lexicon)) {
  if (!lexicon_) throw Error(ErrorCode::kInvalidArgument, "sentiment Phi needs a lexicon");
}

Feature SentimentPhi::featurize(std::string_view text) const {
  return sentiment_score(text, *lexicon_);
}

double SentimentPhi::compare(const Feature& a, const Feature& b) const {
  return std::abs(std::get<double>(a) - std::get<double>(b));
}

Feature SentimentPhi::aggregate(std::span<const Feature> members) const {
  if (members.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& m : members) sum += std::get<double>(m);
  return sum / static_cast<double>(members.size());
}

}  // namespace fairpair::scoring
