#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fairpair/scoring.hpp"

namespace fairpair::testing {

class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fairpair-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

// Random text over a small vocabulary with punctuation and mixed case, so the
// tokenizer has something to do.
inline std::string random_text(std::mt19937_64& rng, int max_words = 12) {
  static const std::vector<std::string> vocab = {
      "good", "bad",   "not",  "great", "terrible", "the", "a",     "John", "Jane", "he",
      "she",  "doctor", "work", "HAPPY", "sad",      "no",  "never", "x1",   "42",   "love"};
  static const std::vector<std::string> seps = {" ", ", ", ". ", "! ", "  ", " - "};
  std::uniform_int_distribution<int> len(0, max_words);
  std::uniform_int_distribution<std::size_t> w(0, vocab.size() - 1);
  std::uniform_int_distribution<std::size_t> s(0, seps.size() - 1);
  std::string out;
  for (int i = len(rng); i > 0; --i) {
    out += vocab[w(rng)];
    out += seps[s(rng)];
  }
  return out;
}

inline std::vector<std::string> random_texts(std::mt19937_64& rng, std::size_t n, int max_words = 12) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_text(rng, max_words));
  return out;
}

inline std::shared_ptr<const scoring::SentimentLexicon> small_lexicon() {
  return std::make_shared<const scoring::SentimentLexicon>(
      std::unordered_map<std::string, double>{
          {"good", 2.0}, {"great", 3.1}, {"happy", 2.7}, {"love", 3.2}, {"bad", -2.5}, {"terrible", -2.1}, {"sad", -2.1}},
      std::unordered_set<std::string>{"not", "no", "never"});
}

}  // namespace fairpair::testing
