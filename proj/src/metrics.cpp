#include "capgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace capgan {

Tokens tokens_of(const Sentence& s) {
  const auto b = s.body();
  return Tokens(b.begin(), b.end());
}

NGramCounts NGramCounts::of(std::span<const TokenId> s, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n-gram order must be >= 1");
  NGramCounts c;
  c.order = n;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c.counts[Tokens(s.begin() + i, s.begin() + i + n)];
  return c;
}

std::size_t NGramCounts::total() const {
  std::size_t t = 0;
  for (const auto& [g, k] : counts) t += k;
  return t;
}

ClippedCount modified_precision(std::span<const TokenId> cand, std::span<const Tokens> refs,
                                std::size_t n) {
  const NGramCounts c = NGramCounts::of(cand, n);
  std::map<Tokens, std::size_t> max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, k] : NGramCounts::of(r, n).counts) {
      auto& m = max_ref[g];
      m = std::max(m, k);
    }
  }
  ClippedCount out;
  for (const auto& [g, k] : c.counts) {
    out.total += k;
    const auto it = max_ref.find(g);
    if (it != max_ref.end()) out.clipped += std::min(k, it->second);
  }
  return out;
}

namespace {

// Reference length closest to c; ties go to the shorter one.
std::size_t closest_ref_length(std::size_t c, std::span<const Tokens> refs) {
  std::size_t best = 0;
  bool first = true;
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > c ? len - c : c - len; };
    if (first || d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) {
      best = r.size();
      first = false;
    }
  }
  return best;
}

double combine(const std::vector<ClippedCount>& p, std::size_t c, std::size_t r) {
  if (c == 0) return 0.0;
  double log_sum = 0.0;
  for (const auto& x : p) {
    if (x.clipped == 0) return 0.0;
    log_sum += std::log(x.precision());
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - double(r) / double(c));
  return bp * std::exp(log_sum / double(p.size()));
}

}  // namespace

double bleu(std::span<const TokenId> cand, std::span<const Tokens> refs, std::size_t max_n) {
  if (max_n == 0) throw std::invalid_argument("bleu: max_n must be >= 1");
  if (refs.empty()) return 0.0;
  std::vector<ClippedCount> p;
  for (std::size_t n = 1; n <= max_n; ++n) p.push_back(modified_precision(cand, refs, n));
  return combine(p, cand.size(), closest_ref_length(cand.size(), refs));
}

double corpus_bleu(std::span<const Tokens> cands, std::span<const std::vector<Tokens>> refs,
                   std::size_t max_n) {
  if (max_n == 0) throw std::invalid_argument("corpus_bleu: max_n must be >= 1");
  if (cands.size() != refs.size()) {
    throw std::invalid_argument("corpus_bleu: one reference set per candidate required");
  }
  std::vector<ClippedCount> p(max_n);
  std::size_t c = 0, r = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    for (std::size_t n = 1; n <= max_n; ++n) {
      const ClippedCount k = modified_precision(cands[i], refs[i], n);
      p[n - 1].clipped += k.clipped;
      p[n - 1].total += k.total;
    }
    c += cands[i].size();
    r += closest_ref_length(cands[i].size(), refs[i]);
  }
  return combine(p, c, r);
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const TokenId> cand, std::span<const Tokens> refs, double beta) {
  double best = 0.0;
  for (const auto& r : refs) {
    const std::size_t l = lcs_length(cand, r);
    if (l == 0) continue;
    const double rec = double(l) / double(r.size());
    const double prec = double(l) / double(cand.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * rec * prec / (rec + b2 * prec));
  }
  return best;
}

CiderResult cider(std::span<const Tokens> cands, std::span<const std::vector<Tokens>> refs) {
  if (cands.size() != refs.size()) {
    throw std::invalid_argument("cider: one reference set per candidate required");
  }
  if (cands.size() < 2) throw std::invalid_argument("cider: at least two images are required");
  const double n_images = static_cast<double>(cands.size());
  constexpr std::size_t kMaxN = 4;

  // Document frequency: number of images whose reference set contains w.
  std::map<Tokens, std::size_t> df;
  for (const auto& set : refs) {
    std::set<Tokens> seen;
    for (const auto& r : set) {
      for (std::size_t n = 1; n <= kMaxN; ++n) {
        for (const auto& [g, k] : NGramCounts::of(r, n).counts) seen.insert(g);
      }
    }
    for (const auto& g : seen) ++df[g];
  }
  auto idf = [&](const Tokens& g) {
    const auto it = df.find(g);
    const double d = it == df.end() ? 1.0 : double(it->second);
    return std::log(n_images / std::max(1.0, d));
  };
  auto weights = [&](std::span<const TokenId> s, std::size_t n) {
    const NGramCounts c = NGramCounts::of(s, n);
    const double total = double(c.total());
    std::map<Tokens, double> w;
    for (const auto& [g, k] : c.counts) w[g] = double(k) / total * idf(g);
    return w;
  };
  auto cosine = [](const std::map<Tokens, double>& a, const std::map<Tokens, double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (const auto& [g, v] : a) {
      aa += v * v;
      const auto it = b.find(g);
      if (it != b.end()) ab += v * it->second;
    }
    for (const auto& [g, v] : b) bb += v * v;
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
  };

  CiderResult out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double s = 0.0;
    if (!refs[i].empty()) {
      for (std::size_t n = 1; n <= kMaxN; ++n) {
        const auto wc = weights(cands[i], n);
        double sum = 0.0;
        for (const auto& r : refs[i]) sum += cosine(wc, weights(r, n));
        s += sum / double(refs[i].size());
      }
    }
    out.per_image.push_back(10.0 * s / double(kMaxN));
    out.corpus += out.per_image.back() / n_images;
  }
  return out;
}

double distinct_n(std::span<const Tokens> sentences, std::size_t n) {
  if (sentences.empty()) throw std::invalid_argument("distinct_n: empty sentence set");
  std::set<Tokens> distinct;
  std::size_t total = 0;
  for (const auto& s : sentences) {
    const NGramCounts c = NGramCounts::of(s, n);
    total += c.total();
    for (const auto& [g, k] : c.counts) distinct.insert(g);
  }
  return total == 0 ? 0.0 : double(distinct.size()) / double(total);
}

nlohmann::json MetricReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"system", system},   {"images", images},       {"bleu3", bleu3},
          {"bleu4", bleu4},     {"rouge_l", rouge_l},     {"cider", cider},
          {"distinct1", distinct1}, {"distinct2", distinct2}, {"e_gan", opt(e_gan)},
          {"e_ngan", opt(e_ngan)}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.system = j.at("system").get<std::string>();
  r.images = j.at("images").get<std::size_t>();
  r.bleu3 = j.at("bleu3").get<double>();
  r.bleu4 = j.at("bleu4").get<double>();
  r.rouge_l = j.at("rouge_l").get<double>();
  r.cider = j.at("cider").get<double>();
  r.distinct1 = j.at("distinct1").get<double>();
  r.distinct2 = j.at("distinct2").get<double>();
  if (j.contains("e_gan") && !j.at("e_gan").is_null()) r.e_gan = j.at("e_gan").get<double>();
  if (j.contains("e_ngan") && !j.at("e_ngan").is_null()) r.e_ngan = j.at("e_ngan").get<double>();
  return r;
}

std::string metric_csv_header() {
  return "system,images,bleu3,bleu4,rouge_l,cider,distinct1,distinct2,e_gan,e_ngan";
}

std::string metric_csv_row(const MetricReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.system << ',' << r.images << ',' << r.bleu3 << ',' << r.bleu4 << ',' << r.rouge_l << ','
      << r.cider << ',' << r.distinct1 << ',' << r.distinct2 << ',';
  if (r.e_gan) out << *r.e_gan;
  out << ',';
  if (r.e_ngan) out << *r.e_ngan;
  return out.str();
}

MetricReport score_system(const std::string& system, std::span<const Tokens> cands,
                          std::span<const std::vector<Tokens>> refs) {
  MetricReport r;
  r.system = system;
  r.images = cands.size();
  r.bleu3 = corpus_bleu(cands, refs, 3);
  r.bleu4 = corpus_bleu(cands, refs, 4);
  double rl = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) rl += rouge_l(cands[i], refs[i]);
  r.rouge_l = cands.empty() ? 0.0 : rl / double(cands.size());
  r.cider = cider(cands, refs).corpus;
  r.distinct1 = distinct_n(cands, 1);
  r.distinct2 = distinct_n(cands, 2);
  return r;
}

}  // namespace capgan
