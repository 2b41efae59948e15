#include "capgan/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace capgan {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vector init_input(const FeatureVector& f, const NoiseVector& z, const GeneratorDims& d) {
  check_shape(f.size() == d.feature_dim, "generator: feature length " + std::to_string(f.size()) +
                                             " != " + std::to_string(d.feature_dim));
  check_shape(z.values.size() == d.noise_dim, "generator: noise length " +
                                                  std::to_string(z.values.size()) + " != " +
                                                  std::to_string(d.noise_dim));
  Vector u(f.values);
  u.insert(u.end(), z.values.begin(), z.values.end());
  return u;
}

void check_token(TokenId t, const GeneratorParams& params) {
  if (t >= params.dims().vocab_size) {
    throw std::out_of_range("generator: token " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(params.dims().vocab_size));
  }
}

Vector output_logits(const Vector& hidden, const GeneratorParams& params, double temperature) {
  Vector logits = affine(hidden, params.value(GeneratorParams::kOutW),
                         params.value(GeneratorParams::kOutB).data());
  if (temperature != 1.0) {
    for (double& v : logits) v /= temperature;
  }
  logits[Vocabulary::kBos] = kNegInf;
  return logits;
}

LstmState advance(const LstmState& state, TokenId prev, const GeneratorParams& params,
                  LstmCache* cache) {
  check_token(prev, params);
  return lstm_step(state, params.value(GeneratorParams::kEmbed).row(prev),
                   params.value(GeneratorParams::kLstmW),
                   params.value(GeneratorParams::kLstmB).data(), cache);
}

TokenId argmax(const Vector& dist) {
  return static_cast<TokenId>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

}  // namespace

nlohmann::json GeneratorDims::to_json() const {
  return {{"feature_dim", feature_dim},
          {"noise_dim", noise_dim},
          {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},
          {"vocab_size", vocab_size}};
}

GeneratorDims GeneratorDims::from_json(const nlohmann::json& j) {
  GeneratorDims d;
  d.feature_dim = j.at("feature_dim").get<std::size_t>();
  d.noise_dim = j.at("noise_dim").get<std::size_t>();
  d.embed_dim = j.at("embed_dim").get<std::size_t>();
  d.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  d.vocab_size = j.at("vocab_size").get<std::size_t>();
  return d;
}

NoiseVector NoiseVector::sample(std::size_t dim, double sigma, Rng& rng) {
  NoiseVector z{Vector(dim)};
  for (double& v : z.values) v = sigma * rng.normal();
  return z;
}

ParamStore GeneratorParams::layout(const GeneratorDims& d, std::uint64_t seed) {
  if (d.vocab_size <= Vocabulary::kBos) {
    throw std::invalid_argument("generator: vocabulary must hold the three special tokens");
  }
  ParamStore s(seed);
  const std::size_t u = d.feature_dim + d.noise_dim;
  s.add("embed", d.vocab_size, d.embed_dim);
  s.add("init_h.w", d.hidden_dim, u);
  s.add("init_h.b", d.hidden_dim, 1);
  s.add("init_c.w", d.hidden_dim, u);
  s.add("init_c.b", d.hidden_dim, 1);
  s.add("lstm.w", 4 * d.hidden_dim, d.embed_dim + d.hidden_dim);
  s.add("lstm.b", 4 * d.hidden_dim, 1);
  s.add("out.w", d.vocab_size, d.hidden_dim);
  s.add("out.b", d.vocab_size, 1);
  return s;
}

GeneratorParams::GeneratorParams(const GeneratorDims& dims, std::uint64_t seed, double init_scale,
                                 double noise_init_scale)
    : dims_(dims), store_(layout(dims, seed)) {
  Rng rng = Rng::derive(seed, {0x6e4e});
  store_.init_uniform(rng, init_scale);
  if (noise_init_scale > 0.0 && init_scale > 0.0) {
    const double k = noise_init_scale / init_scale;
    for (Slot slot : {kInitHW, kInitCW}) {
      Matrix& w = value(slot);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = dims.feature_dim; c < w.cols(); ++c) w(r, c) *= k;
      }
    }
  }
}

GeneratorParams::GeneratorParams(const GeneratorDims& dims, ParamStore store)
    : dims_(dims), store_(std::move(store)) {
  const ParamStore ref = layout(dims, store_.seed());
  check_shape(ref.size() == store_.size(), "generator checkpoint has " +
                                               std::to_string(store_.size()) + " tensors");
  for (std::size_t s = 0; s < ref.size(); ++s) {
    check_shape(ref.name(s) == store_.name(s) && ref.value(s).same_shape(store_.value(s)),
                "generator tensor " + ref.name(s) + " mismatches its declared dimensions");
  }
}

LstmState init_state(const FeatureVector& f, const NoiseVector& z, const GeneratorParams& params) {
  const Vector u = init_input(f, z, params.dims());
  LstmState s;
  s.hidden = affine(u, params.value(GeneratorParams::kInitHW),
                    params.value(GeneratorParams::kInitHB).data());
  s.cell = affine(u, params.value(GeneratorParams::kInitCW),
                  params.value(GeneratorParams::kInitCB).data());
  for (double& v : s.hidden) v = std::tanh(v);
  for (double& v : s.cell) v = std::tanh(v);
  s.step = 0;
  return s;
}

PolicyStep step_policy(const LstmState& state, TokenId prev, const GeneratorParams& params,
                       double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("step_policy: temperature must be > 0");
  PolicyStep out;
  out.state = advance(state, prev, params, nullptr);
  out.dist = softmax(output_logits(out.state.hidden, params, temperature));
  return out;
}

std::vector<TokenId> sample_continuation(LstmState state, TokenId prev, std::size_t prefix_len,
                                         const GeneratorParams& params, std::size_t t_max,
                                         double temperature, Rng& rng, bool& truncated) {
  std::vector<TokenId> out;
  truncated = false;
  std::size_t len = prefix_len;
  while (true) {
    if (len >= t_max) {
      truncated = true;
      out.push_back(Vocabulary::kEnd);
      return out;
    }
    PolicyStep step = step_policy(state, prev, params, temperature);
    const auto w = static_cast<TokenId>(rng.categorical(step.dist));
    out.push_back(w);
    if (w == Vocabulary::kEnd) return out;
    state = std::move(step.state);
    prev = w;
    ++len;
  }
}

Sentence sample_sentence(const FeatureVector& f, const NoiseVector& z,
                         const GeneratorParams& params, std::size_t t_max, double temperature,
                         Rng& rng) {
  if (t_max < 1) throw std::invalid_argument("sample_sentence: t_max must be >= 1");
  Sentence s;
  s.tokens = sample_continuation(init_state(f, z, params), Vocabulary::kBos, 0, params, t_max,
                                 temperature, rng, s.truncated);
  return s;
}

Sentence greedy_decode(const FeatureVector& f, const NoiseVector& z,
                       const GeneratorParams& params, std::size_t t_max) {
  Sentence s;
  LstmState state = init_state(f, z, params);
  TokenId prev = Vocabulary::kBos;
  while (true) {
    if (s.tokens.size() >= t_max) {
      s.truncated = true;
      s.tokens.push_back(Vocabulary::kEnd);
      return s;
    }
    PolicyStep step = step_policy(state, prev, params);
    const TokenId w = argmax(step.dist);
    s.tokens.push_back(w);
    if (w == Vocabulary::kEnd) return s;
    state = std::move(step.state);
    prev = w;
  }
}

namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  LstmState state;
};

struct Completed {
  Sentence sentence;
  double log_prob = 0.0;
};

}  // namespace

Sentence beam_search(const FeatureVector& f, const NoiseVector& z, const GeneratorParams& params,
                     std::size_t beam, const SentenceScorer& scorer, std::size_t t_max) {
  if (beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  std::vector<Hypothesis> live{{{}, 0.0, init_state(f, z, params)}};
  std::vector<Completed> done;

  struct Expansion {
    double log_prob;
    std::size_t hyp;
    TokenId token;
  };

  while (!live.empty()) {
    if (live.front().tokens.size() >= t_max) {
      for (auto& h : live) {
        Sentence s{h.tokens, true};
        s.tokens.push_back(Vocabulary::kEnd);
        done.push_back({std::move(s), h.log_prob});
      }
      break;
    }
    std::vector<Expansion> cand;
    std::vector<LstmState> next_states(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      const TokenId prev = live[i].tokens.empty() ? Vocabulary::kBos : live[i].tokens.back();
      PolicyStep step = step_policy(live[i].state, prev, params);
      for (std::size_t w = 0; w < step.dist.size(); ++w) {
        if (step.dist[w] <= 0.0) continue;
        cand.push_back({live[i].log_prob + std::log(step.dist[w]), i, static_cast<TokenId>(w)});
      }
      next_states[i] = std::move(step.state);
    }
    const std::size_t keep = std::min(beam, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& e = cand[k];
      std::vector<TokenId> tokens = live[e.hyp].tokens;
      tokens.push_back(e.token);
      if (e.token == Vocabulary::kEnd) {
        done.push_back({Sentence{std::move(tokens), false}, e.log_prob});
      } else {
        next.push_back({std::move(tokens), e.log_prob, next_states[e.hyp]});
      }
    }
    live = std::move(next);
  }

  std::size_t best = 0;
  std::vector<double> scores(done.size());
  for (std::size_t i = 0; i < done.size(); ++i) scores[i] = scorer(done[i].sentence);
  for (std::size_t i = 1; i < done.size(); ++i) {
    const bool better =
        scores[i] > scores[best] ||
        (scores[i] == scores[best] &&
         (done[i].log_prob > done[best].log_prob ||
          (done[i].log_prob == done[best].log_prob &&
           done[i].sentence.tokens < done[best].sentence.tokens)));
    if (better) best = i;
  }
  return done[best].sentence;
}

double log_likelihood(const FeatureVector& f, const NoiseVector& z, const Sentence& s,
                      const GeneratorParams& params) {
  const std::span<const TokenId> actions =
      s.truncated ? s.body() : std::span<const TokenId>(s.tokens);
  LstmState state = init_state(f, z, params);
  TokenId prev = Vocabulary::kBos;
  double ll = 0.0;
  for (TokenId w : actions) {
    check_token(w, params);
    state = advance(state, prev, params, nullptr);
    const Vector logits = output_logits(state.hidden, params, 1.0);
    ll += logits[w] - log_sum_exp(logits);
    prev = w;
  }
  return ll;
}

SentenceScorer log_likelihood_scorer(const FeatureVector& f, const NoiseVector& z,
                                     const GeneratorParams& params) {
  return [&f, &z, &params](const Sentence& s) { return log_likelihood(f, z, s, params); };
}

void backprop_policy(const FeatureVector& f, const NoiseVector& z,
                     std::span<const TokenId> actions, const GeneratorParams& params,
                     const LogitGradFn& d_logits_fn, GradBuffer& grads) {
  using P = GeneratorParams;
  const std::size_t hdim = params.dims().hidden_dim;
  const Vector u = init_input(f, z, params.dims());
  const LstmState s0 = init_state(f, z, params);

  const std::size_t steps = actions.size();
  std::vector<LstmCache> caches(steps);
  std::vector<TokenId> inputs(steps);
  std::vector<Vector> hiddens(steps);
  std::vector<Vector> d_logits(steps);
  LstmState state = s0;
  for (std::size_t t = 0; t < steps; ++t) {
    inputs[t] = t == 0 ? Vocabulary::kBos : actions[t - 1];
    state = advance(state, inputs[t], params, &caches[t]);
    const Vector dist = softmax(output_logits(state.hidden, params, 1.0));
    d_logits[t].assign(dist.size(), 0.0);
    d_logits_fn(t, dist, d_logits[t]);
    d_logits[t][Vocabulary::kBos] = 0.0;
    hiddens[t] = state.hidden;
  }

  Vector dh_next(hdim, 0.0), dc_next(hdim, 0.0);
  for (std::size_t t = steps; t-- > 0;) {
    outer_acc(grads[P::kOutW], d_logits[t], hiddens[t]);
    auto db = grads[P::kOutB].data();
    for (std::size_t k = 0; k < db.size(); ++k) db[k] += d_logits[t][k];
    Vector dh = dh_next;
    gemv_t_acc(params.value(P::kOutW), d_logits[t], dh);
    LstmBackward back = lstm_step_backward(caches[t], dh, dc_next, params.value(P::kLstmW),
                                           grads[P::kLstmW], grads[P::kLstmB]);
    auto demb = grads[P::kEmbed].row(inputs[t]);
    for (std::size_t k = 0; k < demb.size(); ++k) demb[k] += back.d_input[k];
    dh_next = std::move(back.d_hidden);
    dc_next = std::move(back.d_cell);
  }

  Vector dpre_h(hdim), dpre_c(hdim);
  for (std::size_t k = 0; k < hdim; ++k) {
    dpre_h[k] = dh_next[k] * (1.0 - s0.hidden[k] * s0.hidden[k]);
    dpre_c[k] = dc_next[k] * (1.0 - s0.cell[k] * s0.cell[k]);
  }
  outer_acc(grads[P::kInitHW], dpre_h, u);
  outer_acc(grads[P::kInitCW], dpre_c, u);
  auto dbh = grads[P::kInitHB].data();
  auto dbc = grads[P::kInitCB].data();
  for (std::size_t k = 0; k < hdim; ++k) {
    dbh[k] += dpre_h[k];
    dbc[k] += dpre_c[k];
  }
}

double teacher_forced_nll(const FeatureVector& f, const NoiseVector& z, const Sentence& s,
                          const GeneratorParams& params, GradBuffer* grads, double weight) {
  if (s.tokens.empty()) throw std::invalid_argument("teacher_forced_nll: empty sentence");
  for (TokenId w : s.tokens) check_token(w, params);
  if (!grads) {
    LstmState state = init_state(f, z, params);
    TokenId prev = Vocabulary::kBos;
    double nll = 0.0;
    for (TokenId w : s.tokens) {
      state = advance(state, prev, params, nullptr);
      const Vector logits = output_logits(state.hidden, params, 1.0);
      nll += log_sum_exp(logits) - logits[w];
      prev = w;
    }
    return nll;
  }
  double nll = 0.0;
  backprop_policy(f, z, s.tokens, params,
                  [&](std::size_t t, const Vector& dist, Vector& d) {
                    const TokenId w = s.tokens[t];
                    nll -= std::log(std::max(dist[w], std::numeric_limits<double>::min()));
                    for (std::size_t k = 0; k < dist.size(); ++k) d[k] = weight * dist[k];
                    d[w] -= weight;
                  },
                  *grads);
  return nll;
}

}  // namespace capgan
