#include "capgan/harness.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace capgan {

using nlohmann::json;

namespace {

constexpr std::uint64_t kHumanPick = 0x4a3a;
constexpr std::uint64_t kDiversityNoise = 0xd1e5;
constexpr std::uint64_t kPairPick = 0x9a15;
constexpr std::uint64_t kPairNoise = 0x9a1e;
constexpr std::uint64_t kCaptionNoise = 0xca97;
constexpr std::uint64_t kSampleNoise = 0x5a3e;

const Sentence& caption_for(const SystemCaptions& s, const std::string& id) {
  const auto it = s.captions.find(id);
  if (it == s.captions.end()) {
    throw std::invalid_argument("system '" + s.name + "' has no caption for record " + id);
  }
  return it->second;
}

json ids_json(const Sentence& s) { return s.tokens; }

}  // namespace

SystemCaptions sample_human_captions(std::span<const EncodedRecord> records, std::uint64_t seed) {
  SystemCaptions out;
  out.name = "human";
  out.human = true;
  for (const auto& r : records) {
    if (r.refs.empty()) throw std::invalid_argument("record " + r.id + " has no references");
    Rng rng = Rng::derive(seed, {kHumanPick, fnv1a64(r.id)});
    out.captions[r.id] = r.refs[rng.below(r.refs.size())];
  }
  return out;
}

std::vector<Tokens> metric_references(const EncodedRecord& record, const Sentence* human_caption) {
  std::vector<Tokens> out;
  bool removed = human_caption == nullptr;
  for (const auto& r : record.refs) {
    if (!removed && r.tokens == human_caption->tokens) {
      removed = true;
      continue;
    }
    out.push_back(tokens_of(r));
  }
  return out;
}

double mean_evaluator_score(const SystemCaptions& system, std::span<const EncodedRecord> records,
                            const EvaluatorParams& eval) {
  if (records.empty()) throw std::invalid_argument("mean_evaluator_score: no records");
  double total = 0.0;
  for (const auto& r : records) total += score(r.feature, caption_for(system, r.id), eval).score;
  return total / static_cast<double>(records.size());
}

std::vector<MetricReport> run_metric_table(std::span<const SystemCaptions> systems,
                                           std::span<const EncodedRecord> records,
                                           const EvaluatorParams* e_gan,
                                           const EvaluatorParams* e_ngan) {
  const SystemCaptions* human = nullptr;
  for (const auto& s : systems) {
    if (!s.human) continue;
    if (human) throw std::invalid_argument("run_metric_table: more than one human system");
    human = &s;
  }
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(records.size());
  for (const auto& r : records) {
    refs.push_back(metric_references(r, human ? &caption_for(*human, r.id) : nullptr));
  }
  std::vector<MetricReport> out;
  for (const auto& s : systems) {
    std::vector<Tokens> cands;
    cands.reserve(records.size());
    for (const auto& r : records) cands.push_back(tokens_of(caption_for(s, r.id)));
    MetricReport rep = score_system(s.name, cands, refs);
    if (e_gan) rep.e_gan = mean_evaluator_score(s, records, *e_gan);
    if (e_ngan) rep.e_ngan = mean_evaluator_score(s, records, *e_ngan);
    out.push_back(std::move(rep));
  }
  return out;
}

SystemCaptions greedy_captions(const std::string& name, const GeneratorParams& gen,
                               std::span<const EncodedRecord> records, double sigma,
                               std::uint64_t seed, std::size_t t_max) {
  SystemCaptions out;
  out.name = name;
  for (const auto& r : records) {
    Rng rng = Rng::derive(seed, {kCaptionNoise, fnv1a64(r.id)});
    const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, sigma, rng);
    out.captions[r.id] = greedy_decode(r.feature, z, gen, t_max);
  }
  return out;
}

SystemCaptions sampled_captions(const std::string& name, const GeneratorParams& gen,
                                std::span<const EncodedRecord> records, double sigma,
                                std::uint64_t seed, std::size_t t_max) {
  SystemCaptions out;
  out.name = name;
  for (const auto& r : records) {
    Rng rng = Rng::derive(seed, {kSampleNoise, fnv1a64(r.id)});
    const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, sigma, rng);
    out.captions[r.id] = sample_sentence(r.feature, z, gen, t_max, 1.0, rng);
  }
  return out;
}

SystemCaptions beam_captions(const std::string& name, const GeneratorParams& gen,
                             const EvaluatorParams& scorer, std::span<const EncodedRecord> records,
                             std::size_t beam, double sigma, std::uint64_t seed, std::size_t t_max) {
  SystemCaptions out;
  out.name = name;
  for (const auto& r : records) {
    Rng rng = Rng::derive(seed, {kCaptionNoise, fnv1a64(r.id)});
    const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, sigma, rng);
    const Vector img = embed_image(r.feature, scorer);
    const SentenceScorer by_score = [&](const Sentence& s) {
      return sigmoid(dot(img, embed_sentence(s, scorer)));
    };
    out.captions[r.id] = beam_search(r.feature, z, gen, beam, by_score, t_max);
  }
  return out;
}

void save_captions(const std::filesystem::path& path, const SystemCaptions& system,
                   const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write captions " + path.string());
  for (const auto& [id, s] : system.captions) {
    out << json{{"id", id}, {"text", decode_sentence(s, vocab)}}.dump() << '\n';
  }
}

SystemCaptions load_captions(const std::filesystem::path& path, const Vocabulary& vocab,
                             const std::string& name, std::size_t t_max) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open captions " + path.string());
  SystemCaptions out;
  out.name = name;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.captions[j.at("id").get<std::string>()] =
          encode_sentence(j.at("text").get<std::string>(), vocab, t_max);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
  }
  return out;
}

json metric_table_json(std::span<const MetricReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return {{"systems", arr}};
}

std::string metric_table_csv(std::span<const MetricReport> reports) {
  std::string out = metric_csv_header() + "\n";
  for (const auto& r : reports) out += metric_csv_row(r) + "\n";
  return out;
}

// ---------------------------------------------------------------- retrieval

RetrievalResult retrieval_recall(std::span<const EncodedRecord> images,
                                 std::span<const Sentence> captions, const PairScorer& scorer,
                                 std::vector<std::size_t> ks, const std::string& criterion) {
  const std::size_t m = images.size();
  if (captions.size() != m) {
    throw std::invalid_argument("retrieval_recall: one caption per image required");
  }
  for (std::size_t k : ks) {
    if (k == 0 || k > m) {
      throw std::invalid_argument("retrieval_recall: k=" + std::to_string(k) +
                                  " outside [1, M] for M=" + std::to_string(m));
    }
  }
  RetrievalResult out;
  out.criterion = criterion;
  out.ks = ks;
  out.recall.assign(ks.size(), 0.0);
  std::vector<double> scores(m);
  std::vector<std::size_t> order(m);
  for (std::size_t q = 0; q < m; ++q) {
    for (std::size_t i = 0; i < m; ++i) scores[i] = scorer(i, captions[q]);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return images[a].id < images[b].id;
    });
    std::vector<std::string> ids;
    ids.reserve(m);
    std::size_t rank = 0;
    for (std::size_t pos = 0; pos < m; ++pos) {
      ids.push_back(images[order[pos]].id);
      if (order[pos] == q) rank = pos + 1;
    }
    out.source_rank.push_back(rank);
    out.ranked_ids.push_back(std::move(ids));
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (rank <= ks[j]) out.recall[j] += 1.0;
    }
  }
  for (double& r : out.recall) r /= static_cast<double>(m);
  return out;
}

json RetrievalResult::to_json() const {
  json recalls = json::object();
  for (std::size_t j = 0; j < ks.size(); ++j) recalls["R@" + std::to_string(ks[j])] = recall[j];
  return {{"criterion", criterion},
          {"images", source_rank.size()},
          {"recall", recalls},
          {"source_rank", source_rank}};
}

std::string RetrievalResult::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "criterion,k,recall\n";
  for (std::size_t j = 0; j < ks.size(); ++j) out << criterion << ',' << ks[j] << ',' << recall[j] << '\n';
  return out.str();
}

PairScorer similarity_scorer(std::span<const EncodedRecord> images, const EvaluatorParams& eval) {
  auto embeddings = std::make_shared<std::vector<Vector>>();
  for (const auto& r : images) embeddings->push_back(embed_image(r.feature, eval));
  // Each query scores all images in a row; remember the last caption's embedding.
  auto last = std::make_shared<std::pair<Sentence, Vector>>();
  return [embeddings, last, &eval](std::size_t i, const Sentence& caption) {
    if (last->second.empty() || !(last->first == caption)) {
      *last = {caption, embed_sentence(caption, eval)};
    }
    return sigmoid(dot(embeddings->at(i), last->second));
  };
}

PairScorer loglik_scorer(std::span<const EncodedRecord> images, const GeneratorParams& gen) {
  const NoiseVector z = NoiseVector::zeros(gen.dims().noise_dim);
  return [images, z, &gen](std::size_t i, const Sentence& caption) {
    return log_likelihood(images[i].feature, z, caption, gen);
  };
}

// ---------------------------------------------------------------- probes

DiversityReport diversity_probe(const GeneratorParams& gen, std::span<const EncodedRecord> records,
                                std::size_t z_draws, std::span<const double> sigmas,
                                std::uint64_t seed, std::size_t t_max) {
  if (z_draws == 0) throw std::invalid_argument("diversity_probe: z_draws must be >= 1");
  DiversityReport out;
  out.z_draws = z_draws;
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    for (const auto& r : records) {
      DiversityRow row;
      row.id = r.id;
      row.sigma = sigmas[si];
      Rng rng = Rng::derive(seed, {kDiversityNoise, si, fnv1a64(r.id)});
      std::set<std::vector<TokenId>> distinct;
      std::vector<Tokens> bodies;
      for (std::size_t d = 0; d < z_draws; ++d) {
        const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, sigmas[si], rng);
        Sentence s = greedy_decode(r.feature, z, gen, t_max);
        distinct.insert(s.tokens);
        bodies.push_back(tokens_of(s));
        row.outputs.push_back(std::move(s));
      }
      row.distinct = distinct.size();
      row.distinct1 = distinct_n(bodies, 1);
      row.distinct2 = distinct_n(bodies, 2);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

double DiversityReport::fraction_with_at_least(std::size_t k, double sigma) const {
  std::size_t hit = 0, total = 0;
  for (const auto& r : rows) {
    if (r.sigma != sigma) continue;
    ++total;
    if (r.distinct >= k) ++hit;
  }
  return total == 0 ? 0.0 : double(hit) / double(total);
}

json DiversityReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json outs = json::array();
    for (const auto& s : r.outputs) outs.push_back(ids_json(s));
    rows_j.push_back({{"id", r.id},
                      {"sigma", r.sigma},
                      {"distinct", r.distinct},
                      {"distinct1", r.distinct1},
                      {"distinct2", r.distinct2},
                      {"outputs", outs}});
  }
  return {{"z_draws", z_draws}, {"rows", rows_j}};
}

std::string DiversityReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "id,sigma,distinct,distinct1,distinct2\n";
  for (const auto& r : rows) {
    out << r.id << ',' << r.sigma << ',' << r.distinct << ',' << r.distinct1 << ',' << r.distinct2
        << '\n';
  }
  return out.str();
}

std::vector<ScenePair> near_duplicate_pairs(std::span<const EncodedRecord> records,
                                            std::size_t count, std::uint64_t seed,
                                            std::size_t feature_dim) {
  std::vector<const EncodedRecord*> with_scene;
  for (const auto& r : records) {
    if (r.scene) with_scene.push_back(&r);
  }
  std::vector<ScenePair> out;
  if (with_scene.empty()) return out;
  Rng rng = Rng::derive(seed, {kPairPick});
  for (std::size_t i = 0; i < count; ++i) {
    const EncodedRecord& r = *with_scene[i % with_scene.size()];
    ScenePair p;
    p.a = *r.scene;
    p.b = mutate_one_attribute(p.a, rng, seed);
    p.fa = render_feature(p.a, feature_dim);
    p.fb = render_feature(p.b, feature_dim);
    out.push_back(std::move(p));
  }
  return out;
}

json SimilarityReport::to_json(const Vocabulary* vocab) const {
  json outs = json::array();
  for (const auto& [a, b] : outputs) {
    if (vocab) {
      outs.push_back({decode_sentence(a, *vocab), decode_sentence(b, *vocab)});
    } else {
      outs.push_back({ids_json(a), ids_json(b)});
    }
  }
  return {{"system", system},
          {"pairs", pairs},
          {"identical", identical},
          {"fraction", fraction},
          {"outputs", outs}};
}

std::string similarity_csv_header() { return "system,pairs,identical,fraction"; }

std::string SimilarityReport::to_csv_row() const {
  std::ostringstream out;
  out.precision(17);
  out << system << ',' << pairs << ',' << identical << ',' << fraction;
  return out.str();
}

SimilarityReport similarity_probe(const std::string& system, const GeneratorParams& gen,
                                  std::span<const ScenePair> pairs, double sigma,
                                  std::uint64_t seed, std::size_t t_max) {
  SimilarityReport out;
  out.system = system;
  out.pairs = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng rng = Rng::derive(seed, {kPairNoise, i});
    const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, sigma, rng);
    Sentence a = greedy_decode(pairs[i].fa, z, gen, t_max);
    Sentence b = greedy_decode(pairs[i].fb, z, gen, t_max);
    if (a == b) ++out.identical;
    out.outputs.emplace_back(std::move(a), std::move(b));
  }
  out.fraction = pairs.empty() ? 0.0 : double(out.identical) / double(out.pairs);
  return out;
}

}  // namespace capgan
