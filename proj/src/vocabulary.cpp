#include "capgan/vocabulary.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "capgan/rng.hpp"

namespace capgan {

std::span<const TokenId> Sentence::body() const {
  if (!tokens.empty() && tokens.back() == Vocabulary::kEnd) {
    return {tokens.data(), tokens.size() - 1};
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  add(std::string(kEndToken), 0);
  add(std::string(kUnkToken), 0);
  add(std::string(kBosToken), 0);
}

void Vocabulary::add(std::string token, std::size_t count) {
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& sentences,
                             std::size_t min_count) {
  if (sentences.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  std::map<std::string, std::size_t> counts;
  std::uint64_t h = fnv1a64("");
  std::size_t unk = 0;
  for (const auto& s : sentences) {
    for (const auto& w : s) {
      ++counts[w];
      h = fnv1a64(w, h);
      h = fnv1a64(" ", h);
    }
    h = fnv1a64("\n", h);
  }
  Vocabulary v;
  v.min_count_ = min_count;
  v.corpus_hash_ = hex64(h);
  for (const auto& [word, n] : counts) {
    if (n >= min_count) {
      v.add(word, n);
    } else {
      unk += n;
    }
  }
  v.counts_[kUnk] = unk;
  v.counts_[kEnd] = sentences.size();
  return v;
}

TokenId Vocabulary::id(std::string_view word) const {
  const auto it = index_.find(word);
  if (it == index_.end() || it->second == kBos || it->second == kEnd) return kUnk;
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.find(word) != index_.end(); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::string Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return hex64(h);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  out << "#capgan-vocab min_count=" << min_count_ << " corpus_hash=" << corpus_hash_ << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::string header;
  std::getline(in, header);
  Vocabulary v;
  v.tokens_.clear();
  v.counts_.clear();
  v.index_.clear();
  {
    std::istringstream hs(header);
    std::string tag, field;
    hs >> tag;
    if (tag != "#capgan-vocab") throw std::runtime_error("vocabulary header missing in " + path.string());
    while (hs >> field) {
      if (field.starts_with("min_count=")) v.min_count_ = std::stoul(field.substr(10));
      if (field.starts_with("corpus_hash=")) v.corpus_hash_ = field.substr(12);
    }
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string token = line.substr(0, tab);
    const std::size_t count = tab == std::string::npos ? 0 : std::stoul(line.substr(tab + 1));
    v.add(token, count);
  }
  if (v.tokens_.size() < 3 || v.tokens_[kEnd] != kEndToken || v.tokens_[kUnk] != kUnkToken ||
      v.tokens_[kBos] != kBosToken) {
    throw std::runtime_error("vocabulary specials malformed in " + path.string());
  }
  return v;
}

std::vector<std::string> normalize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalpha(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Sentence encode_sentence(const std::vector<std::string>& words, const Vocabulary& vocab,
                         std::size_t t_max) {
  Sentence s;
  for (const auto& raw : words) {
    for (const auto& w : normalize_text(raw)) {
      if (s.tokens.size() == t_max) {
        s.truncated = true;
        break;
      }
      s.tokens.push_back(vocab.id(w));
    }
    if (s.truncated) break;
  }
  s.tokens.push_back(Vocabulary::kEnd);
  return s;
}

Sentence encode_sentence(std::string_view text, const Vocabulary& vocab, std::size_t t_max) {
  return encode_sentence(normalize_text(text), vocab, t_max);
}

std::string decode_sentence(const Sentence& s, const Vocabulary& vocab) {
  std::string out;
  for (TokenId t : s.body()) {
    if (!out.empty()) out += ' ';
    out += vocab.token(t);
  }
  return out;
}

}  // namespace capgan
