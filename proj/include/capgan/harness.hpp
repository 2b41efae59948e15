#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capgan/corpus.hpp"
#include "capgan/evaluator.hpp"
#include "capgan/generator.hpp"
#include "capgan/metrics.hpp"

namespace capgan {

/// One caption per image id.
struct SystemCaptions {
  std::string name;
  std::map<std::string, Sentence> captions;
  /// A human system's caption is one of the image's references and is
  /// taken out of the reference set used to score every system.
  bool human = false;
};

/// A reference per record, chosen with a seeded draw, as the "human" system.
SystemCaptions sample_human_captions(std::span<const EncodedRecord> records, std::uint64_t seed);

/// The references an image is scored against: `refs` with one occurrence of
/// the human caption removed when there is one.
std::vector<Tokens> metric_references(const EncodedRecord& record, const Sentence* human_caption);

/// Mean evaluator score of a system's captions over `records`.
double mean_evaluator_score(const SystemCaptions& system, std::span<const EncodedRecord> records,
                            const EvaluatorParams& eval);

/// Scores every system on `records`; at most one system may be human.
/// Throws std::invalid_argument naming a record that a system lacks.
std::vector<MetricReport> run_metric_table(std::span<const SystemCaptions> systems,
                                           std::span<const EncodedRecord> records,
                                           const EvaluatorParams* e_gan = nullptr,
                                           const EvaluatorParams* e_ngan = nullptr);

/// Greedy captions, one noise draw per record at `sigma` (0 gives z = 0).
SystemCaptions greedy_captions(const std::string& name, const GeneratorParams& gen,
                               std::span<const EncodedRecord> records, double sigma,
                               std::uint64_t seed, std::size_t t_max = 16);

/// Ancestral samples at temperature 1, one noise draw per record at `sigma`.
SystemCaptions sampled_captions(const std::string& name, const GeneratorParams& gen,
                                std::span<const EncodedRecord> records, double sigma,
                                std::uint64_t seed, std::size_t t_max = 16);

/// Beam-search captions whose final pick maximizes the evaluator score.
SystemCaptions beam_captions(const std::string& name, const GeneratorParams& gen,
                             const EvaluatorParams& scorer, std::span<const EncodedRecord> records,
                             std::size_t beam, double sigma, std::uint64_t seed,
                             std::size_t t_max = 16);

/// Captions JSONL: {"id": ..., "text": ...} per line, in map order.
void save_captions(const std::filesystem::path& path, const SystemCaptions& system,
                   const Vocabulary& vocab);
SystemCaptions load_captions(const std::filesystem::path& path, const Vocabulary& vocab,
                             const std::string& name, std::size_t t_max = 16);

nlohmann::json metric_table_json(std::span<const MetricReport> reports);
std::string metric_table_csv(std::span<const MetricReport> reports);

// ---------------------------------------------------------------- retrieval

/// Score of (image at `index`, caption); higher ranks first.
using PairScorer = std::function<double(std::size_t index, const Sentence& caption)>;

struct RetrievalResult {
  std::string criterion;
  std::vector<std::size_t> ks;
  std::vector<double> recall;            // recall[i] for ks[i]
  std::vector<std::size_t> source_rank;  // 1-based rank of each query's own image
  std::vector<std::vector<std::string>> ranked_ids;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Caption i was generated for image i. Each caption ranks every image by
/// descending score, ties broken by ascending image id.
RetrievalResult retrieval_recall(std::span<const EncodedRecord> images,
                                 std::span<const Sentence> captions, const PairScorer& scorer,
                                 std::vector<std::size_t> ks = {1, 3, 5, 10},
                                 const std::string& criterion = "similarity");

/// r(I, S) under an evaluator, with image embeddings computed once.
PairScorer similarity_scorer(std::span<const EncodedRecord> images, const EvaluatorParams& eval);
/// log pi(S | I, z = 0).
PairScorer loglik_scorer(std::span<const EncodedRecord> images, const GeneratorParams& gen);

// ---------------------------------------------------------------- probes

struct DiversityRow {
  std::string id;
  double sigma = 0.0;
  std::size_t distinct = 0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  std::vector<Sentence> outputs;
};

struct DiversityReport {
  std::size_t z_draws = 0;
  std::vector<DiversityRow> rows;

  /// Fraction of images at `sigma` with at least `k` distinct outputs.
  double fraction_with_at_least(std::size_t k, double sigma) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Greedy decodes under `z_draws` noise draws per image and sigma.
DiversityReport diversity_probe(const GeneratorParams& gen, std::span<const EncodedRecord> records,
                                std::size_t z_draws, std::span<const double> sigmas,
                                std::uint64_t seed, std::size_t t_max = 16);

struct ScenePair {
  Scene a;
  Scene b;
  FeatureVector fa;
  FeatureVector fb;
};

/// Scenes from `records` paired with a single-attribute mutation of
/// themselves; records without a scene are skipped.
std::vector<ScenePair> near_duplicate_pairs(std::span<const EncodedRecord> records,
                                            std::size_t count, std::uint64_t seed,
                                            std::size_t feature_dim);

struct SimilarityReport {
  std::string system;
  std::size_t pairs = 0;
  std::size_t identical = 0;
  double fraction = 0.0;  // 0 for an empty pair list
  std::vector<std::pair<Sentence, Sentence>> outputs;

  nlohmann::json to_json(const Vocabulary* vocab = nullptr) const;
  std::string to_csv_row() const;
};

std::string similarity_csv_header();

/// Fraction of pairs whose greedy outputs are identical. Both scenes of a
/// pair share one noise draw at `sigma` (0 gives z = 0).
SimilarityReport similarity_probe(const std::string& system, const GeneratorParams& gen,
                                  std::span<const ScenePair> pairs, double sigma = 0.0,
                                  std::uint64_t seed = 0, std::size_t t_max = 16);

}  // namespace capgan
