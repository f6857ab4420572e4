#include "clipose/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "clipose/errors.hpp"

namespace clipose {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else if (std::isalnum(c) || c == '-' || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary::Vocabulary() { add(std::string(kUnknownTokenText)); }

std::size_t Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknownToken : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

Vocabulary build_vocabulary(std::span<const std::string> corpus) {
  if (corpus.empty()) throw ConfigError("build_vocabulary: empty prompt corpus");
  Vocabulary vocab;
  for (const auto& text : corpus) {
    for (const auto& w : split_words(text)) vocab.add(w);
  }
  return vocab;
}

std::size_t TokenSequence::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len == 0) throw ContractError("tokenize: max_len must be at least 1");
  TokenSequence seq{std::vector<std::size_t>(max_len, kUnknownToken), std::vector<bool>(max_len, false)};
  const auto words = split_words(text);
  const std::size_t n = std::min(words.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    seq.ids[i] = vocab.lookup(words[i]);
    seq.mask[i] = true;
  }
  return seq;
}

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary " + path.string());
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  Vocabulary vocab;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (lineno == 0) {
      if (line != kUnknownTokenText) throw ParseError(path.string(), 1, "first token must be <unk>");
    } else {
      if (line.empty()) throw ParseError(path.string(), lineno + 1, "empty token");
      if (vocab.add(line) != lineno) throw ParseError(path.string(), lineno + 1, "duplicate token " + line);
    }
    ++lineno;
  }
  if (lineno == 0) throw ParseError(path.string(), 1, "empty vocabulary file");
  return vocab;
}

}  // namespace clipose
