#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capgan/vocabulary.hpp"

namespace capgan {

/// Token ids of a sentence body; END never takes part in n-gram statistics.
using Tokens = std::vector<TokenId>;

Tokens tokens_of(const Sentence& s);

/// h(w) for every n-gram w of one order.
struct NGramCounts {
  std::size_t order = 1;
  std::map<Tokens, std::size_t> counts;

  static NGramCounts of(std::span<const TokenId> s, std::size_t n);
  std::size_t total() const;
};

struct ClippedCount {
  std::size_t clipped = 0;
  std::size_t total = 0;
  double precision() const { return total == 0 ? 0.0 : double(clipped) / double(total); }
};

/// Clipped n-gram matches of `cand` against the per-n-gram maximum over refs.
ClippedCount modified_precision(std::span<const TokenId> cand, std::span<const Tokens> refs,
                                std::size_t n);

/// Sentence BLEU without smoothing; 0 when any precision is 0.
double bleu(std::span<const TokenId> cand, std::span<const Tokens> refs, std::size_t max_n);

/// Corpus BLEU: counts and lengths summed over the corpus before dividing.
double corpus_bleu(std::span<const Tokens> cands, std::span<const std::vector<Tokens>> refs,
                   std::size_t max_n);

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

inline constexpr double kRougeBeta = 1.2;

/// LCS F-measure, maximum over the references.
double rouge_l(std::span<const TokenId> cand, std::span<const Tokens> refs,
               double beta = kRougeBeta);

struct CiderResult {
  std::vector<double> per_image;
  double corpus = 0.0;  // mean of per_image
};

/// TF-IDF n-gram cosine (n = 1..4) averaged over refs and orders, times 10.
/// Document frequencies come from the reference sets of all images.
/// Throws std::invalid_argument for fewer than two images.
CiderResult cider(std::span<const Tokens> cands, std::span<const std::vector<Tokens>> refs);

/// Distinct n-grams over total n-grams across the set; throws on an empty set.
double distinct_n(std::span<const Tokens> sentences, std::size_t n);

struct MetricReport {
  std::string system;
  std::size_t images = 0;
  double bleu3 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  std::optional<double> e_gan;
  std::optional<double> e_ngan;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// "system,images,bleu3,bleu4,rouge_l,cider,distinct1,distinct2,e_gan,e_ngan"
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);

/// BLEU-3/4, ROUGE-L, CIDEr and distinct-1/2 of one candidate per image.
MetricReport score_system(const std::string& system, std::span<const Tokens> cands,
                          std::span<const std::vector<Tokens>> refs);

}  // namespace capgan
