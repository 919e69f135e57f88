#pragma once

// Word-level tokenizer with single-character fallback.
//
// Pre-tokenization walks the UTF-8 bytes once:
//   - a run of spaces/tabs/CR/FF/VT is remembered as one pending space
//   - '\n' is its own token (a pending space before it is emitted as " ")
//   - a run of ASCII letters is one piece; with a pending space it is looked
//     up as " word", otherwise as "word"; if absent it falls back to single
//     characters (first one carries the space)
//   - every digit and every other printable ASCII character is its own piece,
//     again prefixed by a pending space
//   - a run of non-ASCII or control bytes becomes one <unk>
//   - a trailing pending space becomes the " " token
// For printable ASCII plus whitespace, detokenize(tokenize(x)) equals
// normalize_whitespace(x).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "loclesion/error.hpp"

namespace loclesion {

using TokenId = std::uint32_t;

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kAnswerLetters = "ABCDEF";

class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) fail(ErrorCode::ConfigError, "empty token at id " + std::to_string(i));
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        fail(ErrorCode::ConfigError, "duplicate token '" + tokens_[i] + "'");
    }
    auto require = [&](std::string_view t) {
      if (!index_.contains(std::string(t)))
        fail(ErrorCode::ConfigError, "vocabulary lacks required single token '" + std::string(t) + "'");
    };
    require(kUnkToken);
    for (char c : kAnswerLetters) require(std::string(1, c));
    for (char c = '0'; c <= '9'; ++c) require(std::string(1, c));
    unk_ = index_.at(std::string(kUnkToken));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& text(TokenId id) const { return tokens_.at(id); }
  TokenId unk() const { return unk_; }

  const TokenId* find(std::string_view piece) const {
    auto it = index_.find(std::string(piece));
    return it == index_.end() ? nullptr : &it->second;
  }

  TokenId id_or_unk(std::string_view piece) const {
    const TokenId* id = find(piece);
    return id ? *id : unk_;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unk_ = 0;
};

namespace detail {

inline constexpr std::string_view kToyWords[] = {
    "a", "about", "after", "again", "all", "an", "and", "answer", "are", "arithmetic", "as", "at",
    "away", "back", "bag", "ball", "basket", "be", "bed", "before", "believe", "believes", "blue",
    "book", "box", "boy", "bread", "but", "by", "camera", "can", "car", "cat", "chair", "choose",
    "closet", "coat", "come", "comes", "correct", "cupboard", "day", "did", "does", "dog", "door",
    "drawer", "during", "each", "equal", "evening", "following", "for", "friend", "from", "garden",
    "gets", "girl", "go", "goes", "green", "had", "has", "have", "he", "her", "him", "his", "home",
    "house", "how", "if", "in", "into", "is", "it", "its", "kitchen", "know", "knows", "leaves",
    "left", "letter", "look", "looks", "made", "many", "map", "minus", "model", "morning", "moves",
    "much", "not", "now", "number", "of", "on", "option", "or", "out", "painting", "photo",
    "photograph", "picture", "plus", "problem", "put", "puts", "question", "read", "red", "returns",
    "room", "says", "she", "shows", "solve", "statue", "still", "story", "sum", "table", "taken",
    "than", "that", "the", "their", "then", "there", "they", "thinks", "this", "to", "took",
    "total", "tree", "under", "was", "watch", "what", "when", "where", "which", "while", "who",
    "will", "with", "write", "yard", "yellow", "Answer", "Anne", "Carol", "Choose", "Emma", "Jack",
    "Liam", "Max", "Mia", "Noah", "Read", "Sally", "Sam", "Solve", "The", "Tom", "What", "Where",
    "Which", "plate", "toy", "old", "new", "shelf", "apples", "coins", "remain", "remains",
    "more", "less", "times", "gives", "buys", "value", "expression",
};

}  // namespace detail

/// The vocabulary bundled with the toy model: <unk>, "\n", " ", every
/// printable ASCII character with and without a leading space, then a fixed
/// word list with and without a leading space. Duplicate words are skipped.
inline Vocabulary toy_vocabulary() {
  std::vector<std::string> tokens{std::string(kUnkToken), "\n", " "};
  std::unordered_map<std::string, bool> seen;
  auto add = [&](std::string t) {
    if (seen.emplace(t, true).second) tokens.push_back(std::move(t));
  };
  for (const auto& t : tokens) seen.emplace(t, true);
  for (int c = 0x21; c <= 0x7E; ++c) add(std::string(1, static_cast<char>(c)));
  for (int c = 0x21; c <= 0x7E; ++c) add(" " + std::string(1, static_cast<char>(c)));
  for (std::string_view w : detail::kToyWords) {
    add(std::string(w));
    add(" " + std::string(w));
  }
  return Vocabulary(std::move(tokens));
}

namespace detail {

constexpr bool is_blank(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
}
constexpr bool is_alpha(unsigned char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }
constexpr bool is_opaque(unsigned char c) {
  return c >= 0x80 || c == 0x7F || (c < 0x20 && c != '\n' && !is_blank(c));
}

}  // namespace detail

inline std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> out;
  bool pending_space = false;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  auto emit_piece = [&](std::string_view piece) {
    if (!pending_space) {
      out.push_back(vocab.id_or_unk(piece));
    } else {
      std::string spaced = " ";
      spaced += piece;
      out.push_back(vocab.id_or_unk(spaced));
    }
    pending_space = false;
  };
  while (i < n) {
    const unsigned char c = at(i);
    if (c == '\n') {
      if (pending_space) out.push_back(vocab.id_or_unk(" "));
      out.push_back(vocab.id_or_unk("\n"));
      pending_space = false;
      ++i;
    } else if (detail::is_blank(c)) {
      while (i < n && detail::is_blank(at(i))) ++i;
      pending_space = true;
    } else if (detail::is_opaque(c)) {
      while (i < n && detail::is_opaque(at(i))) ++i;
      out.push_back(vocab.unk());
      pending_space = false;
    } else if (detail::is_alpha(c)) {
      std::size_t j = i;
      while (j < n && detail::is_alpha(at(j))) ++j;
      const std::string_view word = text.substr(i, j - i);
      const std::string lookup = pending_space ? " " + std::string(word) : std::string(word);
      if (const TokenId* id = vocab.find(lookup)) {
        out.push_back(*id);
        pending_space = false;
      } else {
        emit_piece(word.substr(0, 1));
        for (std::size_t k = 1; k < word.size(); ++k) emit_piece(word.substr(k, 1));
      }
      i = j;
    } else {
      emit_piece(text.substr(i, 1));
      ++i;
    }
  }
  if (pending_space) out.push_back(vocab.id_or_unk(" "));
  return out;
}

inline std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) out += vocab.text(id);
  return out;
}

/// Collapses each run of spaces/tabs/CR/FF/VT to one space. Newlines are kept.
inline std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_run = false;
  for (unsigned char c : text) {
    if (detail::is_blank(c)) {
      if (!in_run) out += ' ';
      in_run = true;
    } else {
      out += static_cast<char>(c);
      in_run = false;
    }
  }
  return out;
}

}  // namespace loclesion
