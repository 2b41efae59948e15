#include "capgan/trainer.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace capgan {

using nlohmann::json;

namespace {

// Stream tags for Rng::derive.
constexpr std::uint64_t kMleShuffle = 0x41e5;
constexpr std::uint64_t kMleNoise = 0x41e2;
constexpr std::uint64_t kEvalNoise = 0xe4a1;
constexpr std::uint64_t kEPretrain = 0xe97e;
constexpr std::uint64_t kAdvCursor = 0xadc0;
constexpr std::uint64_t kAdvG = 0xad06;
constexpr std::uint64_t kAdvE = 0xad0e;

constexpr std::size_t kMaxEnumeration = 2000000;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void require_noise_dim(const TrainConfig& cfg, const GeneratorParams& gen) {
  if (cfg.noise_dim != gen.dims().noise_dim) {
    throw std::invalid_argument("config noise_dim " + std::to_string(cfg.noise_dim) +
                                " != generator noise_dim " +
                                std::to_string(gen.dims().noise_dim));
  }
}

GradBuffer reduce_in_order(std::vector<GradBuffer>& parts, const ParamStore& like) {
  GradBuffer total = like.zero_grad_buffer();
  for (const auto& part : parts) {
    for (std::size_t s = 0; s < total.size(); ++s) {
      auto dst = total[s].data();
      const auto src = part[s].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return total;
}

LstmState advance_frozen(const LstmState& state, TokenId prev, const GeneratorParams& params) {
  return step_policy(state, prev, params, 1.0).state;
}

// Frozen-generator state and evaluator reader positioned after a prefix.
struct PrefixCursor {
  LstmState state;  // consumed BOS and every prefix token but the last
  TokenId last = Vocabulary::kBos;
  std::size_t len = 0;
  SentenceReader reader;
};

void advance_cursor(PrefixCursor& c, LstmState full, TokenId w) {
  c.state = std::move(full);
  c.reader.feed(w);
  c.last = w;
  ++c.len;
}

PrefixCursor open_prefix(const FeatureVector& f, const NoiseVector& z,
                         std::span<const TokenId> prefix, const GeneratorParams& frozen,
                         const EvaluatorParams& eval) {
  PrefixCursor c{init_state(f, z, frozen), Vocabulary::kBos, 0, SentenceReader(eval)};
  for (TokenId w : prefix) advance_cursor(c, advance_frozen(c.state, c.last, frozen), w);
  return c;
}

double score_with_end(SentenceReader reader, const Vector& img) {
  reader.feed(Vocabulary::kEnd);
  return reader.score(img);
}

// One continuation from `first`, the policy step after feeding the newest
// prefix word; `reader` has read the whole prefix.
double simulate(const PolicyStep& first, std::size_t len, SentenceReader reader, const Vector& img,
                const GeneratorParams& frozen, std::size_t t_max, Rng& rng) {
  const Vector* dist = &first.dist;
  LstmState state = first.state;
  PolicyStep step;
  while (true) {
    if (len >= t_max) return score_with_end(reader, img);
    const auto w = static_cast<TokenId>(rng.categorical(*dist));
    reader.feed(w);
    if (w == Vocabulary::kEnd) return reader.score(img);
    ++len;
    if (len >= t_max) return score_with_end(reader, img);
    step = step_policy(state, w, frozen, 1.0);
    state = std::move(step.state);
    dist = &step.dist;
  }
}

// Exact expectation over continuations drawn from `dist` onward.
double enumerate(const Vector& dist, const LstmState& state, std::size_t len,
                 const SentenceReader& reader, const Vector& img, const GeneratorParams& frozen,
                 std::size_t t_max) {
  if (len >= t_max) return score_with_end(reader, img);
  double total = 0.0;
  for (std::size_t w = 0; w < dist.size(); ++w) {
    if (dist[w] == 0.0) continue;
    SentenceReader next = reader;
    next.feed(static_cast<TokenId>(w));
    double v;
    if (w == Vocabulary::kEnd) {
      v = next.score(img);
    } else if (len + 1 >= t_max) {
      v = score_with_end(next, img);
    } else {
      PolicyStep step = step_policy(state, static_cast<TokenId>(w), frozen, 1.0);
      v = enumerate(step.dist, step.state, len + 1, next, img, frozen, t_max);
    }
    total += dist[w] * v;
  }
  return total;
}

void check_enumeration_size(std::size_t vocab_ext, std::size_t depth) {
  double count = 1.0;
  for (std::size_t i = 0; i < depth; ++i) count *= static_cast<double>(vocab_ext);
  if (count > static_cast<double>(kMaxEnumeration)) {
    throw std::invalid_argument("exact_future_reward: enumeration too large");
  }
}

// V(prefix + w). `full` is the frozen state after reading BOS and the
// whole prefix; `n` rollouts when the value is not deterministic.
double word_value(const PrefixCursor& c, const LstmState& full, TokenId w, const Vector& img,
                  const GeneratorParams& frozen, std::size_t n, std::size_t t_max, ValueMode mode,
                  Rng& rng, std::size_t& rollouts) {
  SentenceReader reader = c.reader;
  reader.feed(w);
  if (w == Vocabulary::kEnd) return reader.score(img);
  if (c.len + 1 >= t_max) return score_with_end(reader, img);
  const PolicyStep first = step_policy(full, w, frozen, 1.0);
  if (mode == ValueMode::Exhaustive) {
    return enumerate(first.dist, first.state, c.len + 1, reader, img, frozen, t_max);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += simulate(first, c.len + 1, reader, img, frozen, t_max, rng);
  rollouts += n;
  return sum / static_cast<double>(n);
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("config: ") + name + " must be >= 1");
  };
  positive(batch_size, "batch_size");
  positive(rollout_count, "rollout_count");
  positive(t_max, "t_max");
  positive(pretrain_epochs_g, "pretrain_epochs_g");
  positive(pretrain_epochs_e, "pretrain_epochs_e");
  positive(noise_dim, "noise_dim");
  positive(e_refs, "e_refs");
  positive(e_gen, "e_gen");
  positive(e_mism, "e_mism");
  positive(rollout_stride, "rollout_stride");
  positive(threads, "threads");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("config: temperature must be > 0");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("config: noise_sigma must be >= 0");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("config: alpha and beta must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("config: momentum must lie in [0, 1)");
  }
  if (!(rollout_min_prob >= 0.0 && rollout_min_prob < 1.0)) {
    throw std::invalid_argument("config: rollout_min_prob must lie in [0, 1)");
  }
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("config: clip_norm must be >= 0");
  if (!(e_learning_rate >= 0.0)) throw std::invalid_argument("config: e_learning_rate must be >= 0");
}

OptimizerConfig TrainConfig::optimizer_config() const {
  OptimizerConfig o;
  o.kind = optimizer;
  o.learning_rate = learning_rate;
  o.momentum = momentum;
  o.clip_norm = clip_norm;
  return o;
}

OptimizerConfig TrainConfig::evaluator_optimizer_config() const {
  OptimizerConfig o = optimizer_config();
  if (e_optimizer) o.kind = *e_optimizer;
  if (e_learning_rate > 0.0) o.learning_rate = e_learning_rate;
  return o;
}

json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"rollout_count", rollout_count},
          {"t_max", t_max},
          {"alpha", alpha},
          {"beta", beta},
          {"pretrain_epochs_g", pretrain_epochs_g},
          {"pretrain_epochs_e", pretrain_epochs_e},
          {"adversarial_iters", adversarial_iters},
          {"g_steps_per_iter", g_steps_per_iter},
          {"e_steps_per_iter", e_steps_per_iter},
          {"seed", seed},
          {"temperature", temperature},
          {"noise_dim", noise_dim},
          {"noise_sigma", noise_sigma},
          {"optimizer", to_string(optimizer)},
          {"momentum", momentum},
          {"clip_norm", clip_norm},
          {"e_optimizer", e_optimizer ? json(to_string(*e_optimizer)) : json(nullptr)},
          {"e_learning_rate", e_learning_rate},
          {"e_refs", e_refs},
          {"e_gen", e_gen},
          {"e_mism", e_mism},
          {"rollout_stride", rollout_stride},
          {"rollout_min_prob", rollout_min_prob},
          {"sampled_reinforce", sampled_reinforce},
          {"reward_baseline", reward_baseline},
          {"threads", threads},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("rollout_count", c.rollout_count);
  get("t_max", c.t_max);
  get("alpha", c.alpha);
  get("beta", c.beta);
  get("pretrain_epochs_g", c.pretrain_epochs_g);
  get("pretrain_epochs_e", c.pretrain_epochs_e);
  get("adversarial_iters", c.adversarial_iters);
  get("g_steps_per_iter", c.g_steps_per_iter);
  get("e_steps_per_iter", c.e_steps_per_iter);
  get("seed", c.seed);
  get("temperature", c.temperature);
  get("noise_dim", c.noise_dim);
  get("noise_sigma", c.noise_sigma);
  if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  get("momentum", c.momentum);
  get("clip_norm", c.clip_norm);
  if (j.contains("e_optimizer") && !j.at("e_optimizer").is_null()) {
    c.e_optimizer = parse_optimizer(j.at("e_optimizer").get<std::string>());
  }
  get("e_learning_rate", c.e_learning_rate);
  get("e_refs", c.e_refs);
  get("e_gen", c.e_gen);
  get("e_mism", c.e_mism);
  get("rollout_stride", c.rollout_stride);
  get("rollout_min_prob", c.rollout_min_prob);
  get("sampled_reinforce", c.sampled_reinforce);
  get("reward_baseline", c.reward_baseline);
  get("threads", c.threads);
  get("checkpoint_every", c.checkpoint_every);
  return c;
}

// ---------------------------------------------------------------- report

json TrainRecord::to_json() const {
  json j;
  j["phase"] = phase;
  j["iteration"] = iteration;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? json(*v) : json(nullptr);
  };
  opt("mle_nll", mle_nll);
  opt("val_nll", val_nll);
  opt("g_reward", g_reward);
  opt("e_loss", e_loss);
  opt("score_refs", score_refs);
  opt("score_gen", score_gen);
  opt("score_mism", score_mism);
  j["seed"] = seed;
  return j;
}

TrainRecord TrainRecord::from_json(const json& j) {
  TrainRecord r;
  r.phase = j.at("phase").get<std::string>();
  r.iteration = j.at("iteration").get<std::size_t>();
  auto opt = [&](const char* key, std::optional<double>& v) {
    if (j.contains(key) && !j.at(key).is_null()) v = j.at(key).get<double>();
  };
  opt("mle_nll", r.mle_nll);
  opt("val_nll", r.val_nll);
  opt("g_reward", r.g_reward);
  opt("e_loss", r.e_loss);
  opt("score_refs", r.score_refs);
  opt("score_gen", r.score_gen);
  opt("score_mism", r.score_mism);
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  return out;
}

std::string TrainReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "phase,iteration,mle_nll,val_nll,g_reward,e_loss,score_refs,score_gen,score_mism,seed\n";
  auto cell = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  for (const auto& r : records) {
    out << r.phase << ',' << r.iteration;
    cell(r.mle_nll);
    cell(r.val_nll);
    cell(r.g_reward);
    cell(r.e_loss);
    cell(r.score_refs);
    cell(r.score_gen);
    cell(r.score_mism);
    out << ',' << r.seed << '\n';
  }
  return out.str();
}

TrainReport TrainReport::from_jsonl(const std::string& text) {
  TrainReport rep;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rep.records.push_back(TrainRecord::from_json(json::parse(line)));
  }
  return rep;
}

double TrainReport::total_wall_clock() const {
  double t = 0.0;
  for (const auto& r : records) t += r.wall_clock_s;
  return t;
}

// ---------------------------------------------------------------- plumbing

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

BatchCursor::BatchCursor(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n == 0) throw std::invalid_argument("BatchCursor: empty index set");
  order_.resize(n);
  reshuffle();
}

void BatchCursor::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng = Rng::derive(seed_, {pass_});
  rng.shuffle(order_);
  pos_ = 0;
}

std::vector<std::size_t> BatchCursor::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (pos_ == n_) {
      ++pass_;
      reshuffle();
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

// ---------------------------------------------------------------- MLE

double corpus_nll(std::span<const EncodedRecord> records, const GeneratorParams& gen,
                  double noise_sigma, std::uint64_t seed, std::size_t threads) {
  if (records.empty()) throw std::invalid_argument("corpus_nll: no records");
  std::vector<double> nll(records.size(), 0.0);
  std::vector<std::size_t> tokens(records.size(), 0);
  parallel_for(records.size(), threads, [&](std::size_t i) {
    for (std::size_t k = 0; k < records[i].refs.size(); ++k) {
      Rng rng = Rng::derive(seed, {kEvalNoise, i, k});
      const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, noise_sigma, rng);
      nll[i] += teacher_forced_nll(records[i].feature, z, records[i].refs[k], gen);
      tokens[i] += records[i].refs[k].tokens.size();
    }
  });
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    total += nll[i];
    count += tokens[i];
  }
  return total / static_cast<double>(count);
}

TrainReport pretrain_mle(GeneratorParams& gen, const EncodedCorpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  require_noise_dim(cfg, gen);
  if (corpus.train.empty()) throw std::invalid_argument("pretrain_mle: empty corpus");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::pair<std::size_t, std::size_t>> examples;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    for (std::size_t k = 0; k < corpus.train[i].refs.size(); ++k) examples.emplace_back(i, k);
  }
  if (examples.empty()) throw std::invalid_argument("pretrain_mle: corpus has no references");
  std::span<const EncodedRecord> held =
      corpus.val.empty() ? std::span<const EncodedRecord>(corpus.train) : corpus.val;

  TrainReport rep;
  auto record = [&](std::size_t epoch, double train_nll) {
    TrainRecord r;
    r.phase = "mle";
    r.iteration = epoch;
    r.mle_nll = train_nll;
    r.val_nll = corpus_nll(held, gen, cfg.noise_sigma, cfg.seed, cfg.threads);
    r.seed = cfg.seed;
    r.wall_clock_s = seconds_since(t0);
    rep.records.push_back(r);
  };
  record(0, corpus_nll(corpus.train, gen, cfg.noise_sigma, cfg.seed, cfg.threads));

  Optimizer opt(cfg.optimizer_config(), gen.store());
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs_g; ++epoch) {
    Rng shuffle_rng = Rng::derive(cfg.seed, {kMleShuffle, epoch});
    shuffle_rng.shuffle(examples);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(examples.size(), start + cfg.batch_size);
      const std::size_t b = end - start;
      std::size_t batch_tokens = 0;
      for (std::size_t j = start; j < end; ++j) {
        batch_tokens += corpus.train[examples[j].first].refs[examples[j].second].tokens.size();
      }
      const double weight = 1.0 / static_cast<double>(batch_tokens);
      std::vector<GradBuffer> parts(b);
      std::vector<double> nll(b);
      parallel_for(b, cfg.threads, [&](std::size_t j) {
        const auto [ri, ki] = examples[start + j];
        Rng rng = Rng::derive(cfg.seed, {kMleNoise, epoch, start + j});
        const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, cfg.noise_sigma, rng);
        parts[j] = gen.store().zero_grad_buffer();
        nll[j] = teacher_forced_nll(corpus.train[ri].feature, z, corpus.train[ri].refs[ki], gen,
                                    &parts[j], weight);
      });
      for (double v : nll) epoch_nll += v;
      epoch_tokens += batch_tokens;
      opt.step(gen.store(), reduce_in_order(parts, gen.store()));
    }
    if (!gen.store().all_finite()) throw std::runtime_error("pretrain_mle: parameters diverged");
    record(epoch, epoch_nll / static_cast<double>(epoch_tokens));
  }
  return rep;
}

// ---------------------------------------------------------------- rollouts

RewardEstimate expected_future_reward(const FeatureVector& f, const NoiseVector& z,
                                      std::span<const TokenId> prefix,
                                      const FrozenGeneratorParams& frozen,
                                      const EvaluatorParams& eval, std::size_t n, Rng& rng,
                                      std::size_t t_max) {
  if (n < 1) throw std::invalid_argument("expected_future_reward: n must be >= 1");
  for (std::size_t i = 0; i + 1 < prefix.size(); ++i) {
    if (prefix[i] == Vocabulary::kEnd) {
      throw std::invalid_argument("expected_future_reward: END inside the prefix");
    }
  }
  const GeneratorParams& g = frozen.params();
  const Vector img = embed_image(f, eval);
  const PrefixCursor c = open_prefix(f, z, prefix, g, eval);
  RewardEstimate out;
  if (!prefix.empty() && prefix.back() == Vocabulary::kEnd) {
    out.value = c.reader.score(img);
    out.samples = 0;
    return out;
  }
  if (c.len >= t_max) {
    out.value = score_with_end(c.reader, img);
    return out;
  }
  const PolicyStep first = step_policy(c.state, c.last, g, 1.0);
  // `simulate` expects the reader to have read the prefix and `first` to
  // be the step after it, which is exactly the cursor position here.
  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = simulate(first, c.len, c.reader, img, g, t_max, rng);
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  out.value = mean;
  out.samples = n;
  out.stddev = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  return out;
}

double exact_future_reward(const FeatureVector& f, const NoiseVector& z,
                           std::span<const TokenId> prefix, const FrozenGeneratorParams& frozen,
                           const EvaluatorParams& eval, std::size_t t_max) {
  const GeneratorParams& g = frozen.params();
  const Vector img = embed_image(f, eval);
  const PrefixCursor c = open_prefix(f, z, prefix, g, eval);
  if (!prefix.empty() && prefix.back() == Vocabulary::kEnd) return c.reader.score(img);
  if (c.len >= t_max) return score_with_end(c.reader, img);
  check_enumeration_size(g.dims().vocab_size - 1, t_max - c.len);
  const PolicyStep first = step_policy(c.state, c.last, g, 1.0);
  return enumerate(first.dist, first.state, c.len, c.reader, img, g, t_max);
}

std::vector<Vector> trajectory_values(const FeatureVector& f, const NoiseVector& z,
                                      std::span<const TokenId> actions,
                                      std::span<const Vector> policy_dists,
                                      const FrozenGeneratorParams& frozen,
                                      const EvaluatorParams& eval, const TrainConfig& cfg,
                                      ValueMode mode, Rng& rng, std::size_t* rollouts) {
  check_shape(policy_dists.size() == actions.size(), "trajectory_values: one policy per action");
  const GeneratorParams& g = frozen.params();
  const std::size_t vocab = g.dims().vocab_size;
  if (mode == ValueMode::Exhaustive) check_enumeration_size(vocab - 1, cfg.t_max);
  const Vector img = embed_image(f, eval);
  std::vector<Vector> values(actions.size());
  PrefixCursor c = open_prefix(f, z, {}, g, eval);
  std::size_t count = 0;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    LstmState full = advance_frozen(c.state, c.last, g);
    if (t % cfg.rollout_stride == 0) {
      const Vector& pi = policy_dists[t];
      check_shape(pi.size() == vocab, "trajectory_values: policy width");
      Vector v(vocab, 0.0);
      std::vector<bool> done(vocab, false);
      double mass = 0.0, weighted = 0.0;
      for (std::size_t w = 0; w < vocab; ++w) {
        if (w == Vocabulary::kBos || pi[w] == 0.0 || pi[w] < cfg.rollout_min_prob) continue;
        v[w] = word_value(c, full, static_cast<TokenId>(w), img, g, cfg.rollout_count, cfg.t_max,
                          mode, rng, count);
        done[w] = true;
        mass += pi[w];
        weighted += pi[w] * v[w];
      }
      const double mean = mass > 0.0 ? weighted / mass : 0.0;
      for (std::size_t w = 0; w < vocab; ++w) {
        if (!done[w]) v[w] = mean;
      }
      values[t] = std::move(v);
    }
    advance_cursor(c, std::move(full), actions[t]);
  }
  if (rollouts) *rollouts += count;
  return values;
}

void accumulate_policy_gradient(const FeatureVector& f, const NoiseVector& z,
                                std::span<const TokenId> actions, std::span<const Vector> values,
                                const GeneratorParams& gen, double weight, GradBuffer& grads) {
  check_shape(values.size() == actions.size(), "accumulate_policy_gradient: one row per action");
  backprop_policy(f, z, actions, gen,
                  [&](std::size_t t, const Vector& dist, Vector& d) {
                    const Vector& v = values[t];
                    if (v.empty()) return;
                    check_shape(v.size() == dist.size(), "accumulate_policy_gradient: row width");
                    double mean = 0.0;
                    for (std::size_t k = 0; k < dist.size(); ++k) mean += dist[k] * v[k];
                    for (std::size_t k = 0; k < dist.size(); ++k) {
                      d[k] = -weight * dist[k] * (v[k] - mean);
                    }
                  },
                  grads);
}

// ---------------------------------------------------------------- G-step

PolicyGradientEstimate estimate_policy_gradient(const GeneratorParams& gen,
                                                const FrozenGeneratorParams& frozen,
                                                const EvaluatorParams& eval,
                                                std::span<const EncodedRecord> pool,
                                                std::span<const std::size_t> batch,
                                                const TrainConfig& cfg, Rng& rng,
                                                ValueMode mode) {
  cfg.validate();
  require_noise_dim(cfg, gen);
  if (batch.empty()) throw std::invalid_argument("policy gradient: empty batch");
  check_shape(gen.dims() == frozen.params().dims(), "policy gradient: frozen copy differs in shape");
  const std::uint64_t base = rng.next();
  const std::size_t b = batch.size();
  const double weight = 1.0 / static_cast<double>(b);

  struct Item {
    NoiseVector z;
    std::vector<TokenId> actions;
    std::vector<Vector> values;
    double reward = 0.0;
    std::size_t rollouts = 0;
  };
  std::vector<Item> items(b);
  parallel_for(b, cfg.threads, [&](std::size_t i) {
    const EncodedRecord& rec = pool[batch[i]];
    Rng item_rng = Rng::derive(base, {i});
    Item& it = items[i];
    it.z = NoiseVector::sample(gen.dims().noise_dim, cfg.noise_sigma, item_rng);

    // Roll a sentence from the current policy, keeping each step's pi.
    std::vector<Vector> dists;
    LstmState state = init_state(rec.feature, it.z, gen);
    TokenId prev = Vocabulary::kBos;
    bool truncated = true;
    while (it.actions.size() < cfg.t_max) {
      PolicyStep step = step_policy(state, prev, gen, 1.0);
      const auto w = static_cast<TokenId>(item_rng.categorical(step.dist));
      it.actions.push_back(w);
      dists.push_back(std::move(step.dist));
      if (w == Vocabulary::kEnd) {
        truncated = false;
        break;
      }
      state = std::move(step.state);
      prev = w;
    }
    Sentence s{it.actions, truncated};
    if (truncated) s.tokens.push_back(Vocabulary::kEnd);
    it.reward = score(rec.feature, s, eval).score;

    if (cfg.sampled_reinforce) {
      // V of the sampled word only, one-hot row; the baseline is applied later.
      const GeneratorParams& g = frozen.params();
      const Vector img = embed_image(rec.feature, eval);
      PrefixCursor c = open_prefix(rec.feature, it.z, {}, g, eval);
      it.values.resize(it.actions.size());
      for (std::size_t t = 0; t < it.actions.size(); ++t) {
        LstmState full = advance_frozen(c.state, c.last, g);
        if (t % cfg.rollout_stride == 0) {
          const double v = word_value(c, full, it.actions[t], img, g, cfg.rollout_count,
                                      cfg.t_max, mode, item_rng, it.rollouts);
          it.values[t] = Vector{v};
        }
        advance_cursor(c, std::move(full), it.actions[t]);
      }
    } else {
      it.values = trajectory_values(rec.feature, it.z, it.actions, dists, frozen, eval, cfg, mode,
                                    item_rng, &it.rollouts);
    }
  });

  double baseline = 0.0;
  if (cfg.sampled_reinforce && cfg.reward_baseline) {
    for (const auto& it : items) baseline += it.reward;
    baseline /= static_cast<double>(b);
  }

  std::vector<GradBuffer> parts(b);
  parallel_for(b, cfg.threads, [&](std::size_t i) {
    const EncodedRecord& rec = pool[batch[i]];
    Item& it = items[i];
    parts[i] = gen.store().zero_grad_buffer();
    if (cfg.sampled_reinforce) {
      // d(-V log pi(a))/d logits = -V (onehot(a) - pi)
      backprop_policy(rec.feature, it.z, it.actions, gen,
                      [&](std::size_t t, const Vector& dist, Vector& d) {
                        if (it.values[t].empty()) return;
                        const double adv = it.values[t][0] - baseline;
                        for (std::size_t k = 0; k < dist.size(); ++k) {
                          const double onehot = k == it.actions[t] ? 1.0 : 0.0;
                          d[k] = -weight * adv * (onehot - dist[k]);
                        }
                      },
                      parts[i]);
    } else {
      accumulate_policy_gradient(rec.feature, it.z, it.actions, it.values, gen, weight, parts[i]);
    }
  });

  PolicyGradientEstimate out;
  out.grads = reduce_in_order(parts, gen.store());
  for (const auto& it : items) {
    out.diagnostics.mean_reward += it.reward / static_cast<double>(b);
    out.diagnostics.rollouts += it.rollouts;
  }
  out.diagnostics.grad_norm = grad_norm(out.grads);
  return out;
}

PolicyGradientDiagnostics policy_gradient_step(GeneratorParams& gen,
                                               const FrozenGeneratorParams& frozen,
                                               const EvaluatorParams& eval,
                                               std::span<const EncodedRecord> pool,
                                               std::span<const std::size_t> batch,
                                               const TrainConfig& cfg, Optimizer& opt, Rng& rng) {
  PolicyGradientEstimate est = estimate_policy_gradient(gen, frozen, eval, pool, batch, cfg, rng);
  opt.step(gen.store(), est.grads);
  return est.diagnostics;
}

// ---------------------------------------------------------------- E-step

EvaluatorEstimate estimate_evaluator_gradient(const EvaluatorParams& eval,
                                              const GeneratorParams& gen,
                                              std::span<const EncodedRecord> pool,
                                              std::span<const std::size_t> batch,
                                              const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  require_noise_dim(cfg, gen);
  if (batch.empty()) throw std::invalid_argument("evaluator step: empty batch");
  const std::uint64_t base = rng.next();
  const std::size_t b = batch.size();
  const double weight = 1.0 / static_cast<double>(b);
  std::vector<GradBuffer> parts(b);
  std::vector<EvaluatorLoss> losses(b);
  parallel_for(b, cfg.threads, [&](std::size_t i) {
    const std::size_t idx = batch[i];
    const EncodedRecord& rec = pool[idx];
    Rng item_rng = Rng::derive(base, {i});
    if (rec.refs.empty()) throw std::invalid_argument("evaluator step: record without references");

    std::vector<std::size_t> order(rec.refs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    item_rng.shuffle(order);
    std::vector<Sentence> refs, gen_set, mism;
    for (std::size_t k = 0; k < cfg.e_refs; ++k) refs.push_back(rec.refs[order[k % order.size()]]);
    for (std::size_t k = 0; k < cfg.e_gen; ++k) {
      const NoiseVector z = NoiseVector::sample(gen.dims().noise_dim, cfg.noise_sigma, item_rng);
      gen_set.push_back(sample_sentence(rec.feature, z, gen, cfg.t_max, cfg.temperature, item_rng));
    }
    for (std::size_t k = 0; k < cfg.e_mism; ++k) mism.push_back(sample_mismatched(pool, idx, item_rng));

    parts[i] = eval.store().zero_grad_buffer();
    losses[i] = evaluator_loss(rec.feature, refs, gen_set, mism, cfg.alpha, cfg.beta, eval,
                               &parts[i], weight);
  });
  EvaluatorEstimate out;
  out.grads = reduce_in_order(parts, eval.store());
  for (const auto& l : losses) {
    out.diagnostics.loss -= l.objective * weight;
    out.diagnostics.mean_ref_score += l.mean_ref_score * weight;
    out.diagnostics.mean_gen_score += l.mean_gen_score * weight;
    out.diagnostics.mean_mism_score += l.mean_mism_score * weight;
  }
  return out;
}

EvaluatorDiagnostics evaluator_step(EvaluatorParams& eval, const GeneratorParams& gen,
                                    std::span<const EncodedRecord> pool,
                                    std::span<const std::size_t> batch, const TrainConfig& cfg,
                                    Optimizer& opt, Rng& rng) {
  EvaluatorEstimate est = estimate_evaluator_gradient(eval, gen, pool, batch, cfg, rng);
  opt.step(eval.store(), est.grads);
  return est.diagnostics;
}

TrainReport pretrain_evaluator(EvaluatorParams& eval, const GeneratorParams& gen,
                               const EncodedCorpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.train.size() < 2) throw std::invalid_argument("pretrain_evaluator: corpus too small");
  const auto t0 = std::chrono::steady_clock::now();
  Optimizer opt(cfg.optimizer_config(), eval.store());
  std::vector<std::size_t> order(corpus.train.size());
  TrainReport rep;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs_e; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = Rng::derive(cfg.seed, {kEPretrain, epoch});
    shuffle_rng.shuffle(order);
    Rng step_rng = Rng::derive(cfg.seed, {kEPretrain, epoch, 1});
    EvaluatorDiagnostics sum;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      const EvaluatorDiagnostics d =
          evaluator_step(eval, gen, corpus.train, batch, cfg, opt, step_rng);
      sum.loss += d.loss;
      sum.mean_ref_score += d.mean_ref_score;
      sum.mean_gen_score += d.mean_gen_score;
      sum.mean_mism_score += d.mean_mism_score;
      ++steps;
    }
    if (!eval.store().all_finite()) throw std::runtime_error("pretrain_evaluator: diverged");
    const double k = static_cast<double>(steps);
    TrainRecord r;
    r.phase = "evaluator";
    r.iteration = epoch;
    r.e_loss = sum.loss / k;
    r.score_refs = sum.mean_ref_score / k;
    r.score_gen = sum.mean_gen_score / k;
    r.score_mism = sum.mean_mism_score / k;
    r.seed = cfg.seed;
    r.wall_clock_s = seconds_since(t0);
    rep.records.push_back(r);
  }
  return rep;
}

// ---------------------------------------------------------------- loop

TrainReport train_adversarial(GeneratorParams& gen, EvaluatorParams& eval,
                              const EncodedCorpus& corpus, const TrainConfig& cfg,
                              const CheckpointHook& hook) {
  cfg.validate();
  TrainReport rep;
  if (cfg.adversarial_iters == 0) return rep;
  if (corpus.train.size() < 2) throw std::invalid_argument("train_adversarial: corpus too small");
  const auto t0 = std::chrono::steady_clock::now();
  Optimizer g_opt(cfg.optimizer_config(), gen.store());
  Optimizer e_opt(cfg.evaluator_optimizer_config(), eval.store());
  BatchCursor g_cursor(corpus.train.size(), mix_seed(cfg.seed, {kAdvCursor, 0}));
  BatchCursor e_cursor(corpus.train.size(), mix_seed(cfg.seed, {kAdvCursor, 1}));

  for (std::size_t iter = 1; iter <= cfg.adversarial_iters; ++iter) {
    TrainRecord r;
    r.phase = "adversarial";
    r.iteration = iter;
    r.seed = cfg.seed;
    if (cfg.g_steps_per_iter > 0) {
      const FrozenGeneratorParams frozen(gen);
      Rng g_rng = Rng::derive(cfg.seed, {kAdvG, iter});
      double reward = 0.0;
      for (std::size_t s = 0; s < cfg.g_steps_per_iter; ++s) {
        const auto batch = g_cursor.next(cfg.batch_size);
        reward += policy_gradient_step(gen, frozen, eval, corpus.train, batch, cfg, g_opt, g_rng)
                      .mean_reward;
      }
      r.g_reward = reward / static_cast<double>(cfg.g_steps_per_iter);
      if (!gen.store().all_finite()) throw std::runtime_error("train_adversarial: generator diverged");
    }
    if (cfg.e_steps_per_iter > 0) {
      Rng e_rng = Rng::derive(cfg.seed, {kAdvE, iter});
      EvaluatorDiagnostics sum;
      for (std::size_t s = 0; s < cfg.e_steps_per_iter; ++s) {
        const auto batch = e_cursor.next(cfg.batch_size);
        const EvaluatorDiagnostics d =
            evaluator_step(eval, gen, corpus.train, batch, cfg, e_opt, e_rng);
        sum.loss += d.loss;
        sum.mean_ref_score += d.mean_ref_score;
        sum.mean_gen_score += d.mean_gen_score;
        sum.mean_mism_score += d.mean_mism_score;
      }
      const double k = static_cast<double>(cfg.e_steps_per_iter);
      r.e_loss = sum.loss / k;
      r.score_refs = sum.mean_ref_score / k;
      r.score_gen = sum.mean_gen_score / k;
      r.score_mism = sum.mean_mism_score / k;
      if (!eval.store().all_finite()) throw std::runtime_error("train_adversarial: evaluator diverged");
    }
    r.wall_clock_s = seconds_since(t0);
    rep.records.push_back(r);
    if (hook && cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) hook(iter, gen, eval);
  }
  return rep;
}

TrainReport train_e_ngan(EvaluatorParams& eval, const GeneratorParams& mle_gen,
                         const EncodedCorpus& corpus, const TrainConfig& cfg) {
  TrainConfig local = cfg;
  local.g_steps_per_iter = 0;
  GeneratorParams gen = mle_gen;
  return train_adversarial(gen, eval, corpus, local);
}

}  // namespace capgan
