#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "capgan/corpus.hpp"
#include "capgan/evaluator.hpp"
#include "capgan/generator.hpp"
#include "capgan/optimizer.hpp"

namespace capgan {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::size_t rollout_count = 16;
  std::size_t t_max = 16;
  double alpha = 0.5;
  double beta = 0.5;
  std::size_t pretrain_epochs_g = 20;
  std::size_t pretrain_epochs_e = 5;
  std::size_t adversarial_iters = 100;
  std::size_t g_steps_per_iter = 1;
  std::size_t e_steps_per_iter = 1;
  std::uint64_t seed = 1;
  double temperature = 1.0;
  std::size_t noise_dim = 16;
  double noise_sigma = 1.0;

  OptimizerKind optimizer = OptimizerKind::Sgd;
  double momentum = 0.0;
  double clip_norm = 0.0;
  /// Evaluator optimizer inside the adversarial loop; unset fields inherit
  /// the generator's.
  std::optional<OptimizerKind> e_optimizer;
  double e_learning_rate = 0.0;

  // Per-record set sizes in an E-step.
  std::size_t e_refs = 2;
  std::size_t e_gen = 2;
  std::size_t e_mism = 2;

  /// Only every `rollout_stride`-th step of a sampled sentence contributes.
  std::size_t rollout_stride = 1;
  /// Words whose policy probability is below this get the mean value, so
  /// they drop out of the vocabulary sum; 0 keeps the sum literal.
  double rollout_min_prob = 0.0;
  /// Score-function estimate on the sampled word only, instead of the
  /// full-vocabulary sum.
  bool sampled_reinforce = false;
  /// Subtract the batch-mean sentence reward (sampled mode only).
  bool reward_baseline = false;
  /// Worker threads for per-item work; results do not depend on it.
  std::size_t threads = 1;
  /// Write checkpoints every k adversarial iterations; 0 disables.
  std::size_t checkpoint_every = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  OptimizerConfig optimizer_config() const;
  OptimizerConfig evaluator_optimizer_config() const;
  nlohmann::json to_json() const;
  /// Fields present in `j` override the defaults; unknown keys throw.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct RewardEstimate {
  double value = 0.0;
  std::size_t samples = 0;
  double stddev = 0.0;
};

struct TrainRecord {
  std::string phase;  // "mle", "evaluator", "adversarial"
  std::size_t iteration = 0;
  std::optional<double> mle_nll;        // train per-token NLL
  std::optional<double> val_nll;        // held-out per-token NLL
  std::optional<double> g_reward;       // mean sampled-sentence score
  std::optional<double> e_loss;         // -L_E averaged over the batch
  std::optional<double> score_refs;
  std::optional<double> score_gen;
  std::optional<double> score_mism;
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainRecord from_json(const nlohmann::json& j);
};

/// Diagnostics of a training run. Serialized forms leave wall-clock out so
/// identical seeds give byte-identical files.
struct TrainReport {
  std::vector<TrainRecord> records;

  std::string to_jsonl() const;
  std::string to_csv() const;
  static TrainReport from_jsonl(const std::string& text);
  double total_wall_clock() const;
};

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// into per-index slots and reduce in index order afterwards.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Cycles through a seeded permutation of [0, n), reshuffling per pass.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);
  std::size_t passes() const { return pass_; }

 private:
  void reshuffle();
  std::size_t n_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t pass_ = 0;
};

/// Mean per-token NLL (END included) of every reference in `records`, each
/// with a fixed noise draw derived from `seed`.
double corpus_nll(std::span<const EncodedRecord> records, const GeneratorParams& gen,
                  double noise_sigma, std::uint64_t seed, std::size_t threads = 1);

/// MLE pretraining with teacher forcing. Record 0 is the untrained model.
TrainReport pretrain_mle(GeneratorParams& gen, const EncodedCorpus& corpus, const TrainConfig& cfg);

/// V(I, z, prefix): the exact score when the prefix ends in END (or has
/// reached t_max, where END is forced), otherwise the mean score over n
/// continuations sampled from the frozen policy.
RewardEstimate expected_future_reward(const FeatureVector& f, const NoiseVector& z,
                                      std::span<const TokenId> prefix,
                                      const FrozenGeneratorParams& frozen,
                                      const EvaluatorParams& eval, std::size_t n, Rng& rng,
                                      std::size_t t_max = 16);

/// The same expectation computed by enumerating every continuation. Meant
/// for tiny vocabularies; throws if more than 2e6 sentences would be needed.
double exact_future_reward(const FeatureVector& f, const NoiseVector& z,
                           std::span<const TokenId> prefix, const FrozenGeneratorParams& frozen,
                           const EvaluatorParams& eval, std::size_t t_max = 16);

enum class ValueMode { MonteCarlo, Exhaustive };

/// values[t][w] = V(prefix_{t} + w) for the step that chose actions[t]; the
/// rows for skipped steps (stride) are empty. Words below the probability
/// floor of `policy_dists[t]` hold the policy-weighted mean of the rest.
std::vector<Vector> trajectory_values(const FeatureVector& f, const NoiseVector& z,
                                      std::span<const TokenId> actions,
                                      std::span<const Vector> policy_dists,
                                      const FrozenGeneratorParams& frozen,
                                      const EvaluatorParams& eval, const TrainConfig& cfg,
                                      ValueMode mode, Rng& rng, std::size_t* rollouts = nullptr);

/// Adds weight * d(-sum_t sum_w pi(w) V_t[w])/d theta to `grads`, i.e. the
/// descent direction of the full-vocabulary estimator along one trajectory.
void accumulate_policy_gradient(const FeatureVector& f, const NoiseVector& z,
                                std::span<const TokenId> actions, std::span<const Vector> values,
                                const GeneratorParams& gen, double weight, GradBuffer& grads);

struct PolicyGradientDiagnostics {
  double mean_reward = 0.0;  // mean score of the sampled sentences
  double grad_norm = 0.0;
  std::size_t rollouts = 0;
};

struct PolicyGradientEstimate {
  GradBuffer grads;  // descent direction
  PolicyGradientDiagnostics diagnostics;
};

/// The batch gradient without applying it.
PolicyGradientEstimate estimate_policy_gradient(const GeneratorParams& gen,
                                                const FrozenGeneratorParams& frozen,
                                                const EvaluatorParams& eval,
                                                std::span<const EncodedRecord> pool,
                                                std::span<const std::size_t> batch,
                                                const TrainConfig& cfg, Rng& rng,
                                                ValueMode mode = ValueMode::MonteCarlo);

PolicyGradientDiagnostics policy_gradient_step(GeneratorParams& gen,
                                               const FrozenGeneratorParams& frozen,
                                               const EvaluatorParams& eval,
                                               std::span<const EncodedRecord> pool,
                                               std::span<const std::size_t> batch,
                                               const TrainConfig& cfg, Optimizer& opt, Rng& rng);

struct EvaluatorDiagnostics {
  double loss = 0.0;  // -L_E averaged over the batch
  double mean_ref_score = 0.0;
  double mean_gen_score = 0.0;
  double mean_mism_score = 0.0;
};

struct EvaluatorEstimate {
  GradBuffer grads;
  EvaluatorDiagnostics diagnostics;
};

/// Draws the three description sets for each batch record and returns the
/// gradient of -(1/B) sum L_E.
EvaluatorEstimate estimate_evaluator_gradient(const EvaluatorParams& eval,
                                              const GeneratorParams& gen,
                                              std::span<const EncodedRecord> pool,
                                              std::span<const std::size_t> batch,
                                              const TrainConfig& cfg, Rng& rng);

EvaluatorDiagnostics evaluator_step(EvaluatorParams& eval, const GeneratorParams& gen,
                                    std::span<const EncodedRecord> pool,
                                    std::span<const std::size_t> batch, const TrainConfig& cfg,
                                    Optimizer& opt, Rng& rng);

/// pretrain_epochs_e passes of evaluator steps over the train split with
/// the generator fixed.
TrainReport pretrain_evaluator(EvaluatorParams& eval, const GeneratorParams& gen,
                               const EncodedCorpus& corpus, const TrainConfig& cfg);

/// Called after each adversarial iteration when checkpoint_every divides it.
using CheckpointHook =
    std::function<void(std::size_t iteration, const GeneratorParams&, const EvaluatorParams&)>;

TrainReport train_adversarial(GeneratorParams& gen, EvaluatorParams& eval,
                              const EncodedCorpus& corpus, const TrainConfig& cfg,
                              const CheckpointHook& hook = {});

/// Evaluator updates against a fixed generator: train_adversarial with
/// g_steps_per_iter = 0.
TrainReport train_e_ngan(EvaluatorParams& eval, const GeneratorParams& mle_gen,
                         const EncodedCorpus& corpus, const TrainConfig& cfg);

}  // namespace capgan
