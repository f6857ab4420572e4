#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clipose {

inline constexpr std::size_t kUnknownToken = 0;
inline constexpr std::string_view kUnknownTokenText = "<unk>";

/// Lowercases and drops punctuation other than hyphens, then splits on
/// whitespace. Empty pieces are discarded.
std::vector<std::string> split_words(std::string_view text);

/// Dense token index; index 0 is the unknown token.
class Vocabulary {
 public:
  Vocabulary();

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  /// Index of a normalized token, kUnknownToken when absent.
  std::size_t lookup(std::string_view token) const;
  bool contains(std::string_view token) const;

  /// Appends a token if new; returns its index.
  std::size_t add(const std::string& token);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Tokens in order of first occurrence across the corpus.
Vocabulary build_vocabulary(std::span<const std::string> corpus);

struct TokenSequence {
  std::vector<std::size_t> ids;  // padded with kUnknownToken to max_len
  std::vector<bool> mask;        // true for real (non-pad) positions
  std::size_t length() const;
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

/// One token per line, line number = index.
void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace clipose
