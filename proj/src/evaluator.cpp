#include "capgan/evaluator.hpp"

#include <cmath>
#include <stdexcept>

namespace capgan {

namespace {

void check_token(TokenId t, const EvaluatorParams& params) {
  if (t >= params.dims().vocab_size) {
    throw std::out_of_range("evaluator: token " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(params.dims().vocab_size));
  }
}

Vector tanh_affine(std::span<const double> x, const Matrix& w, const Matrix& b) {
  Vector v = affine(x, w, b.data());
  for (double& e : v) e = std::tanh(e);
  return v;
}

// Sentence branch forward with caches for BPTT.
struct SentenceTrace {
  std::vector<LstmCache> caches;
  Vector final_hidden;
  Vector embedding;
};

SentenceTrace trace_sentence(const Sentence& s, const EvaluatorParams& p) {
  using P = EvaluatorParams;
  if (s.tokens.empty()) throw std::invalid_argument("evaluator: empty sentence");
  SentenceTrace tr;
  tr.caches.resize(s.tokens.size());
  LstmState state = LstmState::zeros(p.dims().hidden_dim);
  for (std::size_t t = 0; t < s.tokens.size(); ++t) {
    check_token(s.tokens[t], p);
    state = lstm_step(state, p.value(P::kEmbed).row(s.tokens[t]), p.value(P::kLstmW),
                      p.value(P::kLstmB).data(), &tr.caches[t]);
  }
  tr.final_hidden = std::move(state.hidden);
  tr.embedding = tanh_affine(tr.final_hidden, p.value(P::kSentW), p.value(P::kSentB));
  return tr;
}

void backprop_sentence(const Sentence& s, const SentenceTrace& tr, const Vector& d_embedding,
                       const EvaluatorParams& p, GradBuffer& g) {
  using P = EvaluatorParams;
  const std::size_t j = d_embedding.size();
  Vector d_pre(j);
  for (std::size_t k = 0; k < j; ++k) {
    d_pre[k] = d_embedding[k] * (1.0 - tr.embedding[k] * tr.embedding[k]);
  }
  outer_acc(g[P::kSentW], d_pre, tr.final_hidden);
  auto db = g[P::kSentB].data();
  for (std::size_t k = 0; k < j; ++k) db[k] += d_pre[k];

  Vector dh(p.dims().hidden_dim, 0.0), dc(p.dims().hidden_dim, 0.0);
  gemv_t_acc(p.value(P::kSentW), d_pre, dh);
  for (std::size_t t = s.tokens.size(); t-- > 0;) {
    LstmBackward back =
        lstm_step_backward(tr.caches[t], dh, dc, p.value(P::kLstmW), g[P::kLstmW], g[P::kLstmB]);
    auto demb = g[P::kEmbed].row(s.tokens[t]);
    for (std::size_t k = 0; k < demb.size(); ++k) demb[k] += back.d_input[k];
    dh = std::move(back.d_hidden);
    dc = std::move(back.d_cell);
  }
}

}  // namespace

nlohmann::json EvaluatorDims::to_json() const {
  return {{"feature_dim", feature_dim},
          {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},
          {"joint_dim", joint_dim},
          {"vocab_size", vocab_size}};
}

EvaluatorDims EvaluatorDims::from_json(const nlohmann::json& j) {
  EvaluatorDims d;
  d.feature_dim = j.at("feature_dim").get<std::size_t>();
  d.embed_dim = j.at("embed_dim").get<std::size_t>();
  d.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  d.joint_dim = j.at("joint_dim").get<std::size_t>();
  d.vocab_size = j.at("vocab_size").get<std::size_t>();
  return d;
}

ParamStore EvaluatorParams::layout(const EvaluatorDims& d, std::uint64_t seed) {
  ParamStore s(seed);
  s.add("img.w", d.joint_dim, d.feature_dim);
  s.add("img.b", d.joint_dim, 1);
  s.add("embed", d.vocab_size, d.embed_dim);
  s.add("lstm.w", 4 * d.hidden_dim, d.embed_dim + d.hidden_dim);
  s.add("lstm.b", 4 * d.hidden_dim, 1);
  s.add("sent.w", d.joint_dim, d.hidden_dim);
  s.add("sent.b", d.joint_dim, 1);
  return s;
}

EvaluatorParams::EvaluatorParams(const EvaluatorDims& dims, std::uint64_t seed, double init_scale)
    : dims_(dims), store_(layout(dims, seed)) {
  Rng rng = Rng::derive(seed, {0xe7a1});
  store_.init_uniform(rng, init_scale);
}

EvaluatorParams::EvaluatorParams(const EvaluatorDims& dims, ParamStore store)
    : dims_(dims), store_(std::move(store)) {
  const ParamStore ref = layout(dims, store_.seed());
  check_shape(ref.size() == store_.size(), "evaluator checkpoint has " +
                                               std::to_string(store_.size()) + " tensors");
  for (std::size_t s = 0; s < ref.size(); ++s) {
    check_shape(ref.name(s) == store_.name(s) && ref.value(s).same_shape(store_.value(s)),
                "evaluator tensor " + ref.name(s) + " mismatches its declared dimensions");
  }
}

void EvaluatorParams::require_vocab(const std::string& vocab_hash) const {
  if (!vocab_hash_.empty() && vocab_hash_ != vocab_hash) {
    throw std::invalid_argument("evaluator was trained under vocabulary " + vocab_hash_ +
                                " and refuses sentences encoded under " + vocab_hash);
  }
}

Vector embed_image(const FeatureVector& f, const EvaluatorParams& params) {
  check_shape(f.size() == params.dims().feature_dim,
              "evaluator: feature length " + std::to_string(f.size()) + " != " +
                  std::to_string(params.dims().feature_dim));
  return tanh_affine(f.values, params.value(EvaluatorParams::kImgW),
                     params.value(EvaluatorParams::kImgB));
}

Vector embed_sentence(const Sentence& s, const EvaluatorParams& params) {
  return trace_sentence(s, params).embedding;
}

ScoreBreakdown score(const FeatureVector& f, const Sentence& s, const EvaluatorParams& params) {
  ScoreBreakdown out;
  out.image_embedding = embed_image(f, params);
  out.sentence_embedding = embed_sentence(s, params);
  out.dot = dot(out.image_embedding, out.sentence_embedding);
  out.score = sigmoid(out.dot);
  return out;
}

SentenceReader::SentenceReader(const EvaluatorParams& params)
    : params_(&params), state_(LstmState::zeros(params.dims().hidden_dim)) {}

void SentenceReader::feed(TokenId token) {
  using P = EvaluatorParams;
  check_token(token, *params_);
  state_ = lstm_step(state_, params_->value(P::kEmbed).row(token), params_->value(P::kLstmW),
                     params_->value(P::kLstmB).data());
}

Vector SentenceReader::embedding() const {
  return tanh_affine(state_.hidden, params_->value(EvaluatorParams::kSentW),
                     params_->value(EvaluatorParams::kSentB));
}

double SentenceReader::score(std::span<const double> image_embedding) const {
  return sigmoid(dot(image_embedding, embedding()));
}

EvaluatorLoss evaluator_loss(const FeatureVector& f, std::span<const Sentence> refs,
                             std::span<const Sentence> gen, std::span<const Sentence> mism,
                             double alpha, double beta, const EvaluatorParams& params,
                             GradBuffer* grads, double weight) {
  using P = EvaluatorParams;
  if (refs.empty() || gen.empty() || mism.empty()) {
    throw std::invalid_argument("evaluator_loss: every description set must be non-empty");
  }
  const Vector img = embed_image(f, params);
  Vector d_img(img.size(), 0.0);
  EvaluatorLoss out;

  // positive: log r = log sigmoid(d); negative: log(1 - r) = log sigmoid(-d).
  auto term = [&](std::span<const Sentence> set, double coeff, bool positive, double& mean_score) {
    const double scale = coeff / static_cast<double>(set.size());
    for (const auto& s : set) {
      const SentenceTrace tr = trace_sentence(s, params);
      const double d = dot(img, tr.embedding);
      const double r = sigmoid(d);
      const double arg = positive ? r : sigmoid(-d);
      mean_score += r / static_cast<double>(set.size());
      out.objective += scale * std::log(std::max(arg, kLogClamp));
      if (!grads || arg < kLogClamp || scale == 0.0) continue;
      // d(-objective)/d(dot), times the caller's weight
      const double g_dot = weight * scale * (positive ? -(1.0 - r) : r);
      Vector d_sent(img.size());
      for (std::size_t k = 0; k < img.size(); ++k) {
        d_sent[k] = g_dot * img[k];
        d_img[k] += g_dot * tr.embedding[k];
      }
      backprop_sentence(s, tr, d_sent, params, *grads);
    }
  };
  term(refs, 1.0, true, out.mean_ref_score);
  term(gen, alpha, false, out.mean_gen_score);
  term(mism, beta, false, out.mean_mism_score);

  if (grads) {
    Vector d_pre(img.size());
    for (std::size_t k = 0; k < img.size(); ++k) d_pre[k] = d_img[k] * (1.0 - img[k] * img[k]);
    outer_acc((*grads)[P::kImgW], d_pre, f.values);
    auto db = (*grads)[P::kImgB].data();
    for (std::size_t k = 0; k < db.size(); ++k) db[k] += d_pre[k];
  }
  return out;
}

}  // namespace capgan
