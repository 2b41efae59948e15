#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capgan {

using TokenId = std::uint32_t;

/// Token ids ending in END. `truncated` marks a sentence whose END was
/// forced at the length limit rather than produced or present in the text.
struct Sentence {
  std::vector<TokenId> tokens;
  bool truncated = false;

  /// Tokens before the terminating END.
  std::span<const TokenId> body() const;
  bool empty() const { return tokens.empty(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// Word <-> id mapping with the three special tokens at fixed ids
/// END = 0, UNK = 1, BOS = 2; words follow in lexicographic order.
///
/// The output space of the generator (the extended vocabulary) is every id
/// except BOS, which only ever appears as the first decoder input.
class Vocabulary {
 public:
  static constexpr TokenId kEnd = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr std::string_view kEndToken = "<end>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kBosToken = "<bos>";

  Vocabulary();

  /// Words with count >= min_count; everything else maps to UNK.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sentences,
                          std::size_t min_count = 5);

  std::size_t size() const { return tokens_.size(); }
  /// |V_ext|: every id the policy can emit.
  std::size_t extended_size() const { return tokens_.size() - 1; }

  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& token(TokenId id) const;
  std::size_t count(TokenId id) const { return counts_.at(id); }
  std::size_t min_count() const { return min_count_; }
  const std::string& corpus_hash() const { return corpus_hash_; }

  /// Hash of the id -> token table.
  std::string hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_ && a.min_count_ == b.min_count_;
  }

 private:
  void add(std::string token, std::size_t count);

  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::map<std::string, TokenId, std::less<>> index_;
  std::size_t min_count_ = 1;
  std::string corpus_hash_;
};

/// Lowercases, strips non-alphabetic characters and splits on whitespace.
std::vector<std::string> normalize_text(std::string_view text);

/// Normalizes each token, maps unknown words to UNK, truncates the body to
/// t_max and appends END.
Sentence encode_sentence(const std::vector<std::string>& words, const Vocabulary& vocab,
                         std::size_t t_max = 16);
Sentence encode_sentence(std::string_view text, const Vocabulary& vocab, std::size_t t_max = 16);

/// Body words joined by single spaces.
std::string decode_sentence(const Sentence& s, const Vocabulary& vocab);

}  // namespace capgan
