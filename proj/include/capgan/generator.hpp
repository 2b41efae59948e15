#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include <json.hpp>

#include "capgan/lstm.hpp"
#include "capgan/param_store.hpp"
#include "capgan/rng.hpp"
#include "capgan/scene.hpp"
#include "capgan/vocabulary.hpp"

namespace capgan {

struct GeneratorDims {
  std::size_t feature_dim = kDefaultFeatureDim;
  std::size_t noise_dim = 16;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 64;
  std::size_t vocab_size = 0;

  nlohmann::json to_json() const;
  static GeneratorDims from_json(const nlohmann::json& j);
  friend bool operator==(const GeneratorDims&, const GeneratorDims&) = default;
};

/// The noise input z, drawn once per sentence.
struct NoiseVector {
  Vector values;

  static NoiseVector sample(std::size_t dim, double sigma, Rng& rng);
  static NoiseVector zeros(std::size_t dim) { return {Vector(dim, 0.0)}; }
};

/// Policy parameters: word embeddings, the [f; z] -> (h0, c0) projections,
/// the LSTM cell and the output projection onto the vocabulary.
class GeneratorParams {
 public:
  enum Slot : std::size_t { kEmbed, kInitHW, kInitHB, kInitCW, kInitCB, kLstmW, kLstmB, kOutW, kOutB };

  GeneratorParams() = default;
  /// Uniform init in [-init_scale, init_scale] from `seed`. The z columns of
  /// the init projections use `noise_init_scale` instead when it is positive.
  GeneratorParams(const GeneratorDims& dims, std::uint64_t seed, double init_scale = 0.08,
                  double noise_init_scale = 0.0);
  /// Adopts `store` after checking every slot's name and shape.
  GeneratorParams(const GeneratorDims& dims, ParamStore store);

  const GeneratorDims& dims() const { return dims_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const Matrix& value(Slot s) const { return store_.value(s); }
  Matrix& value(Slot s) { return store_.value(s); }

  friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;

 private:
  static ParamStore layout(const GeneratorDims& dims, std::uint64_t seed);

  GeneratorDims dims_;
  ParamStore store_;
};

/// Snapshot of the generator taken at the start of a G-update round; never
/// mutated afterwards.
class FrozenGeneratorParams {
 public:
  explicit FrozenGeneratorParams(const GeneratorParams& source) : params_(source) {}
  const GeneratorParams& params() const { return params_; }

 private:
  const GeneratorParams params_;
};

/// h0 = tanh(W_h [f; z] + b_h), c0 = tanh(W_c [f; z] + b_c), step 0.
LstmState init_state(const FeatureVector& f, const NoiseVector& z, const GeneratorParams& params);

struct PolicyStep {
  Vector dist;  // over all ids; BOS always 0
  LstmState state;
};

/// Feeds `prev` and returns pi(. | f, z, prefix) at the given temperature.
PolicyStep step_policy(const LstmState& state, TokenId prev, const GeneratorParams& params,
                       double temperature = 1.0);

/// Ancestral sampling until END or t_max words (then truncated, END appended).
Sentence sample_sentence(const FeatureVector& f, const NoiseVector& z,
                         const GeneratorParams& params, std::size_t t_max, double temperature,
                         Rng& rng);

/// Continues sampling from `state` whose last input is `prev`, with
/// `prefix_len` words already emitted. Returns the emitted suffix, its last
/// token END; `truncated` is set if END was forced.
std::vector<TokenId> sample_continuation(LstmState state, TokenId prev, std::size_t prefix_len,
                                         const GeneratorParams& params, std::size_t t_max,
                                         double temperature, Rng& rng, bool& truncated);

/// Argmax decoding; ties go to the lowest id.
Sentence greedy_decode(const FeatureVector& f, const NoiseVector& z,
                       const GeneratorParams& params, std::size_t t_max);

using SentenceScorer = std::function<double(const Sentence&)>;

/// Beam of partial sentences ranked by cumulative log-probability; the
/// final choice among completed candidates maximizes `scorer` (ties: higher
/// log-probability, then lexicographically smaller ids).
Sentence beam_search(const FeatureVector& f, const NoiseVector& z, const GeneratorParams& params,
                     std::size_t beam, const SentenceScorer& scorer, std::size_t t_max);

/// Sum of log pi over the policy's actions: every token of a complete
/// sentence, only the body of a truncated one.
double log_likelihood(const FeatureVector& f, const NoiseVector& z, const Sentence& s,
                      const GeneratorParams& params);

SentenceScorer log_likelihood_scorer(const FeatureVector& f, const NoiseVector& z,
                                     const GeneratorParams& params);

/// Produces d(loss)/d(logits) at step t from that step's distribution.
using LogitGradFn = std::function<void(std::size_t t, const Vector& dist, Vector& d_logits)>;

/// Teacher-forced pass over `actions` (inputs BOS, a_1, ..., a_{T-1}) with
/// full BPTT. Gradients go into `grads` (shaped like params.store()).
void backprop_policy(const FeatureVector& f, const NoiseVector& z,
                     std::span<const TokenId> actions, const GeneratorParams& params,
                     const LogitGradFn& d_logits_fn, GradBuffer& grads);

/// Summed per-token cross-entropy of all tokens of `s` (END included).
/// When `grads` is given, accumulates weight * d(nll).
double teacher_forced_nll(const FeatureVector& f, const NoiseVector& z, const Sentence& s,
                          const GeneratorParams& params, GradBuffer* grads = nullptr,
                          double weight = 1.0);

}  // namespace capgan
