#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capgan/lstm.hpp"
#include "capgan/param_store.hpp"
#include "capgan/scene.hpp"
#include "capgan/vocabulary.hpp"

namespace capgan {

struct EvaluatorDims {
  std::size_t feature_dim = kDefaultFeatureDim;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t joint_dim = 32;
  std::size_t vocab_size = 0;

  nlohmann::json to_json() const;
  static EvaluatorDims from_json(const nlohmann::json& j);
  friend bool operator==(const EvaluatorDims&, const EvaluatorDims&) = default;
};

/// eta = (eta_I, eta_S). Image branch: tanh(W_I f + b_I). Sentence branch:
/// word embedding + LSTM read left to right, final hidden state through
/// tanh(W_S h + b_S). Both land in a joint space of `joint_dim`.
class EvaluatorParams {
 public:
  enum Slot : std::size_t { kImgW, kImgB, kEmbed, kLstmW, kLstmB, kSentW, kSentB };

  EvaluatorParams() = default;
  EvaluatorParams(const EvaluatorDims& dims, std::uint64_t seed, double init_scale = 0.08);
  EvaluatorParams(const EvaluatorDims& dims, ParamStore store);

  const EvaluatorDims& dims() const { return dims_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const Matrix& value(Slot s) const { return store_.value(s); }
  Matrix& value(Slot s) { return store_.value(s); }

  /// Hash of the vocabulary the evaluator was trained under; empty if unset.
  const std::string& vocab_hash() const { return vocab_hash_; }
  void set_vocab_hash(std::string h) { vocab_hash_ = std::move(h); }
  /// Throws std::invalid_argument when `vocab_hash` differs from the bound one.
  void require_vocab(const std::string& vocab_hash) const;

  friend bool operator==(const EvaluatorParams&, const EvaluatorParams&) = default;

 private:
  static ParamStore layout(const EvaluatorDims& dims, std::uint64_t seed);

  EvaluatorDims dims_;
  ParamStore store_;
  std::string vocab_hash_;
};

struct ScoreBreakdown {
  Vector image_embedding;
  Vector sentence_embedding;
  double dot = 0.0;
  double score = 0.5;  // sigmoid(dot)
};

Vector embed_image(const FeatureVector& f, const EvaluatorParams& params);
Vector embed_sentence(const Sentence& s, const EvaluatorParams& params);

/// r(I, S) = sigmoid(<f(I), h(S)>).
ScoreBreakdown score(const FeatureVector& f, const Sentence& s, const EvaluatorParams& params);

/// Incremental sentence branch: holds the LSTM state after a prefix so
/// many continuations of one prefix can be scored without re-reading it.
class SentenceReader {
 public:
  explicit SentenceReader(const EvaluatorParams& params);
  void feed(TokenId token);
  /// Joint-space embedding of everything fed so far.
  Vector embedding() const;
  /// sigmoid(<image_embedding, embedding()>).
  double score(std::span<const double> image_embedding) const;

 private:
  const EvaluatorParams* params_;
  LstmState state_;
};

/// Log arguments are clipped to [kLogClamp, 1].
inline constexpr double kLogClamp = 1e-12;

struct EvaluatorLoss {
  double objective = 0.0;  // L_E(I), to be maximized
  double mean_ref_score = 0.0;
  double mean_gen_score = 0.0;
  double mean_mism_score = 0.0;
};

/// L_E(I) = mean_refs log r + alpha * mean_gen log(1 - r) + beta * mean_mism log(1 - r).
///
/// When `grads` is given, accumulates weight * d(-L_E) so a descent step on
/// the buffer ascends the objective. Throws on any empty set.
EvaluatorLoss evaluator_loss(const FeatureVector& f, std::span<const Sentence> refs,
                             std::span<const Sentence> gen, std::span<const Sentence> mism,
                             double alpha, double beta, const EvaluatorParams& params,
                             GradBuffer* grads = nullptr, double weight = 1.0);

}  // namespace capgan
