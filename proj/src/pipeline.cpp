#include "capgan/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "capgan/model_io.hpp"

namespace capgan {

using nlohmann::json;

namespace {

void say(const PipelineLog& log, const std::string& msg) {
  if (log) log(msg);
}

json train_json(const TrainConfig& c) { return c.to_json(); }

}  // namespace

// ---------------------------------------------------------------- config

PipelineConfig PipelineConfig::desk(std::uint64_t seed) {
  PipelineConfig c;
  c.mle.optimizer = OptimizerKind::Sgd;
  c.mle.learning_rate = 1.0;
  c.mle.batch_size = 64;
  c.mle.pretrain_epochs_g = 20;

  c.gen_noise_init_scale = 0.5;

  // The evaluator starts at a saddle (both embeddings near zero); plain SGD
  // does not leave it within a few epochs, Adam does.
  c.e_pre.optimizer = OptimizerKind::Adam;
  c.e_pre.learning_rate = 0.01;
  c.e_pre.batch_size = 64;
  c.e_pre.pretrain_epochs_e = 30;

  c.gan.optimizer = OptimizerKind::Adam;
  c.gan.learning_rate = 0.002;
  c.gan.e_optimizer = OptimizerKind::Adam;
  c.gan.e_learning_rate = 0.003;
  c.gan.batch_size = 16;
  c.gan.rollout_count = 8;
  c.gan.rollout_min_prob = 0.02;
  c.gan.adversarial_iters = 300;

  c.engan = c.gan;
  c.engan.g_steps_per_iter = 0;
  c.reseed(seed);
  return c;
}

void PipelineConfig::reseed(std::uint64_t s) {
  seed = s;
  mle.seed = mix_seed(s, {1});
  e_pre.seed = mix_seed(s, {2});
  engan.seed = mix_seed(s, {3});
  gan.seed = mix_seed(s, {4});
}

void PipelineConfig::set_threads(std::size_t n) {
  threads = n;
  mle.threads = e_pre.threads = gan.threads = engan.threads = n;
}

json PipelineConfig::to_json() const {
  return {{"seed", seed},
          {"scenes", scenes},
          {"refs", refs},
          {"feature_dim", feature_dim},
          {"min_count", min_count},
          {"t_max", t_max},
          {"gen_dims", gen_dims.to_json()},
          {"eval_dims", eval_dims.to_json()},
          {"gen_init_scale", gen_init_scale},
          {"gen_noise_init_scale", gen_noise_init_scale},
          {"eval_init_scale", eval_init_scale},
          {"mle", train_json(mle)},
          {"e_pre", train_json(e_pre)},
          {"gan", train_json(gan)},
          {"engan", train_json(engan)},
          {"beam", beam},
          {"test_sigma", test_sigma},
          {"retrieval_images", retrieval_images},
          {"z_draws", z_draws},
          {"similarity_pairs", similarity_pairs},
          {"threads", threads}};
}

PipelineConfig PipelineConfig::from_json(const json& j, const PipelineConfig& base) {
  PipelineConfig c = base;
  const json known = base.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("pipeline config: unknown key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  auto train = [&](const char* key, TrainConfig& field) {
    if (!j.contains(key)) return;
    json merged = field.to_json();
    merged.update(j.at(key));
    field = TrainConfig::from_json(merged);
  };
  auto dims = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    json merged = field.to_json();
    merged.update(j.at(key));
    field = std::decay_t<decltype(field)>::from_json(merged);
  };
  get("seed", c.seed);
  get("scenes", c.scenes);
  get("refs", c.refs);
  get("feature_dim", c.feature_dim);
  get("min_count", c.min_count);
  get("t_max", c.t_max);
  dims("gen_dims", c.gen_dims);
  dims("eval_dims", c.eval_dims);
  get("gen_init_scale", c.gen_init_scale);
  get("gen_noise_init_scale", c.gen_noise_init_scale);
  get("eval_init_scale", c.eval_init_scale);
  train("mle", c.mle);
  train("e_pre", c.e_pre);
  train("gan", c.gan);
  train("engan", c.engan);
  get("beam", c.beam);
  get("test_sigma", c.test_sigma);
  get("retrieval_images", c.retrieval_images);
  get("z_draws", c.z_draws);
  get("similarity_pairs", c.similarity_pairs);
  get("threads", c.threads);
  return c;
}

// ---------------------------------------------------------------- gradients

std::vector<GradientCheckRow> gradient_suite(std::uint64_t seed, std::size_t hidden) {
  constexpr std::size_t kFeat = 6, kVocab = 9;
  Rng rng = Rng::derive(seed, {0x96c4});
  auto sentence = [&] {
    Sentence s;
    const std::size_t len = 1 + rng.below(5);
    for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(3 + TokenId(rng.below(kVocab - 3)));
    s.tokens.push_back(Vocabulary::kEnd);
    return s;
  };
  FeatureVector f;
  for (std::size_t i = 0; i < kFeat; ++i) f.values.push_back(rng.normal());

  std::vector<GradientCheckRow> out;

  GeneratorDims gd;
  gd.feature_dim = kFeat;
  gd.noise_dim = 3;
  gd.embed_dim = 4;
  gd.hidden_dim = hidden;
  gd.vocab_size = kVocab;
  GeneratorParams g(gd, mix_seed(seed, {1}), 0.3);
  const NoiseVector z = NoiseVector::sample(gd.noise_dim, 1.0, rng);
  const Sentence s = sentence();
  out.push_back({"generator_nll", grad_check(
                                      [&](ParamStore& store, bool with_grad) {
                                        return teacher_forced_nll(f, z, s, g,
                                                                  with_grad ? &store.grads() : nullptr);
                                      },
                                      g.store())});

  EvaluatorDims ed;
  ed.feature_dim = kFeat;
  ed.embed_dim = 4;
  ed.hidden_dim = hidden;
  ed.joint_dim = 5;
  ed.vocab_size = kVocab;
  // Init 0.8 keeps every entry clear of the round-off floor of central differences.
  EvaluatorParams e(ed, mix_seed(seed, {2}), 0.8);
  std::vector<Sentence> refs, gen, mism;
  for (int i = 0; i < 2; ++i) {
    refs.push_back(sentence());
    gen.push_back(sentence());
    mism.push_back(sentence());
  }
  const std::vector<Sentence> one{refs[0]};
  // With alpha = beta = 0 the loss is log r of one pair.
  out.push_back({"evaluator_score", grad_check(
                                        [&](ParamStore& store, bool with_grad) {
                                          return -evaluator_loss(f, one, one, one, 0.0, 0.0, e,
                                                                 with_grad ? &store.grads() : nullptr)
                                                      .objective;
                                        },
                                        e.store())});
  out.push_back({"evaluator_loss", grad_check(
                                       [&](ParamStore& store, bool with_grad) {
                                         return -evaluator_loss(f, refs, gen, mism, 0.5, 0.5, e,
                                                                with_grad ? &store.grads() : nullptr)
                                                     .objective;
                                       },
                                       e.store())});
  return out;
}

// ---------------------------------------------------------------- io

std::string write_artifact(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
  return hex64(fnv1a64(text));
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return hex64(fnv1a64(buf.str()));
}

json PipelineResult::summary() const {
  json metrics_j = json::object();
  for (const auto& m : metrics) metrics_j[m.system] = m.to_json();
  return {{"uniform_nll", uniform_nll},
          {"final_val_nll", mle_report.records.empty() ? json() : json(*mle_report.records.back().val_nll)},
          {"metrics", metrics_j},
          {"engan_reward_mle", engan_reward_mle},
          {"engan_reward_gan", engan_reward_gan},
          {"engan_ref_over_mle", engan_ref_over_mle},
          {"retrieval_similarity", retrieval_similarity.to_json()},
          {"retrieval_loglik", retrieval_loglik.to_json()},
          {"diversity_gan_at_least_3_sigma1", diversity_gan.fraction_with_at_least(3, 1.0)},
          {"diversity_gan_exactly_1_sigma0", diversity_gan.fraction_with_at_least(2, 0.0)},
          {"diversity_mle_at_least_2", diversity_mle.fraction_with_at_least(2, 0.0)},
          {"similarity_mle", similarity_mle.fraction},
          {"similarity_gan", similarity_gan.fraction}};
}

// ---------------------------------------------------------------- run

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                            const PipelineLog& log) {
  PipelineResult res;
  std::filesystem::create_directories(out_dir);
  auto artifact = [&](const std::string& name, const std::string& text) {
    res.artifacts[name] = write_artifact(out_dir / name, text);
  };
  auto checkpoint = [&](const std::string& name, const Checkpoint& ck) {
    const std::string bytes = ck.to_bytes();
    artifact(name, bytes);
  };
  auto report = [&](const std::string& stem, const TrainReport& rep) {
    artifact("reports/" + stem + ".jsonl", rep.to_jsonl());
    artifact("reports/" + stem + ".csv", rep.to_csv());
  };

  say(log, "generating corpus");
  const auto records = generate_corpus(cfg.seed, cfg.scenes, cfg.refs, cfg.feature_dim);
  {
    std::string text;
    for (const auto& r : records) text += dataset_line(r) + "\n";
    artifact("corpus.jsonl", text);
  }
  const EncodedCorpus corpus = EncodedCorpus::build(records, cfg.min_count, cfg.t_max);
  const std::string vocab_hash = corpus.vocab.hash();
  corpus.vocab.save(out_dir / "vocab.txt");
  res.artifacts["vocab.txt"] = file_hash(out_dir / "vocab.txt");
  res.uniform_nll = std::log(static_cast<double>(corpus.vocab.extended_size()));

  GeneratorDims gd = cfg.gen_dims;
  gd.vocab_size = corpus.vocab.size();
  gd.feature_dim = cfg.feature_dim;
  EvaluatorDims ed = cfg.eval_dims;
  ed.vocab_size = corpus.vocab.size();
  ed.feature_dim = cfg.feature_dim;

  say(log, "pretraining generator (MLE)");
  GeneratorParams g_mle(gd, cfg.mle.seed, cfg.gen_init_scale, cfg.gen_noise_init_scale);
  res.mle_report = pretrain_mle(g_mle, corpus, cfg.mle);
  report("mle", res.mle_report);
  checkpoint("g_mle.ckpt", generator_checkpoint(g_mle, vocab_hash, cfg.mle.to_json()));

  say(log, "pretraining evaluator");
  EvaluatorParams e_pre(ed, cfg.e_pre.seed, cfg.eval_init_scale);
  e_pre.set_vocab_hash(vocab_hash);
  res.e_pre_report = pretrain_evaluator(e_pre, g_mle, corpus, cfg.e_pre);
  report("e_pre", res.e_pre_report);
  checkpoint("e_pre.ckpt", evaluator_checkpoint(e_pre, cfg.e_pre.to_json()));

  say(log, "training E-NGAN");
  EvaluatorParams e_ngan = e_pre;
  res.engan_report = train_e_ngan(e_ngan, g_mle, corpus, cfg.engan);
  report("e_ngan", res.engan_report);
  checkpoint("e_ngan.ckpt", evaluator_checkpoint(e_ngan, cfg.engan.to_json()));

  say(log, "adversarial training");
  GeneratorParams g_gan = g_mle;
  EvaluatorParams e_gan = e_pre;
  res.gan_report = train_adversarial(g_gan, e_gan, corpus, cfg.gan);
  report("gan", res.gan_report);
  checkpoint("g_gan.ckpt", generator_checkpoint(g_gan, vocab_hash, cfg.gan.to_json()));
  checkpoint("e_gan.ckpt", evaluator_checkpoint(e_gan, cfg.gan.to_json()));

  say(log, "decoding test captions");
  const std::span<const EncodedRecord> test = corpus.test;
  const std::uint64_t eval_seed = mix_seed(cfg.seed, {5});
  std::vector<SystemCaptions> systems;
  systems.push_back(sample_human_captions(test, eval_seed));
  systems.push_back(greedy_captions("g-mle", g_mle, test, 0.0, eval_seed, cfg.t_max));
  systems.push_back(beam_captions("g-gan", g_gan, e_gan, test, cfg.beam, cfg.test_sigma, eval_seed,
                                  cfg.t_max));
  for (const auto& s : systems) {
    const auto path = out_dir / "captions" / (s.name + ".jsonl");
    std::filesystem::create_directories(path.parent_path());
    save_captions(path, s, corpus.vocab);
    res.artifacts["captions/" + s.name + ".jsonl"] = file_hash(path);
  }

  say(log, "scoring metric table");
  res.metrics = run_metric_table(systems, test, &e_gan, &e_ngan);
  artifact("metrics.json", metric_table_json(res.metrics).dump(2) + "\n");
  artifact("metrics.csv", metric_table_csv(res.metrics));

  const SystemCaptions sample_mle =
      sampled_captions("g-mle", g_mle, test, cfg.test_sigma, eval_seed, cfg.t_max);
  const SystemCaptions sample_gan =
      sampled_captions("g-gan", g_gan, test, cfg.test_sigma, eval_seed, cfg.t_max);
  res.engan_reward_mle = mean_evaluator_score(sample_mle, test, e_ngan);
  res.engan_reward_gan = mean_evaluator_score(sample_gan, test, e_ngan);
  {
    std::size_t wins = 0;
    for (const auto& r : test) {
      const double ref = score(r.feature, systems[0].captions.at(r.id), e_ngan).score;
      const double gen = score(r.feature, sample_mle.captions.at(r.id), e_ngan).score;
      if (ref > gen) ++wins;
    }
    res.engan_ref_over_mle = test.empty() ? 0.0 : double(wins) / double(test.size());
  }

  say(log, "retrieval");
  const std::size_t m = std::min(cfg.retrieval_images, test.size());
  const std::span<const EncodedRecord> images = test.subspan(0, m);
  std::vector<Sentence> queries;
  for (const auto& r : images) queries.push_back(systems[2].captions.at(r.id));
  std::vector<std::size_t> ks;
  for (std::size_t k : {1, 3, 5, 10}) {
    if (k <= m) ks.push_back(k);
  }
  res.retrieval_similarity =
      retrieval_recall(images, queries, similarity_scorer(images, e_gan), ks, "similarity");
  res.retrieval_loglik =
      retrieval_recall(images, queries, loglik_scorer(images, g_gan), ks, "loglik");
  artifact("retrieval.json", json{{"similarity", res.retrieval_similarity.to_json()},
                                  {"loglik", res.retrieval_loglik.to_json()}}
                                     .dump(2) +
                                 "\n");
  artifact("retrieval.csv",
           res.retrieval_similarity.to_csv() +
               res.retrieval_loglik.to_csv().substr(res.retrieval_loglik.to_csv().find('\n') + 1));

  say(log, "diversity and similarity probes");
  const std::vector<double> gan_sigmas{0.0, 1.0};
  const std::vector<double> mle_sigmas{0.0};
  res.diversity_gan = diversity_probe(g_gan, test, cfg.z_draws, gan_sigmas, eval_seed, cfg.t_max);
  res.diversity_mle = diversity_probe(g_mle, test, cfg.z_draws, mle_sigmas, eval_seed, cfg.t_max);
  artifact("diversity.json", json{{"g-gan", res.diversity_gan.to_json()},
                                  {"g-mle", res.diversity_mle.to_json()}}
                                     .dump() +
                                 "\n");
  {
    std::string csv = "system," + res.diversity_gan.to_csv().substr(0, res.diversity_gan.to_csv().find('\n') + 1);
    auto rows = [&](const std::string& name, const DiversityReport& d) {
      std::istringstream in(d.to_csv());
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) csv += name + "," + line + "\n";
    };
    rows("g-gan", res.diversity_gan);
    rows("g-mle", res.diversity_mle);
    artifact("diversity.csv", csv);
  }

  const auto pairs = near_duplicate_pairs(test, cfg.similarity_pairs, eval_seed, cfg.feature_dim);
  res.similarity_mle = similarity_probe("g-mle", g_mle, pairs, 0.0, eval_seed, cfg.t_max);
  res.similarity_gan =
      similarity_probe("g-gan", g_gan, pairs, cfg.test_sigma, eval_seed, cfg.t_max);
  artifact("similarity.json",
           json{{"g-mle", res.similarity_mle.to_json(&corpus.vocab)},
                {"g-gan", res.similarity_gan.to_json(&corpus.vocab)}}
                   .dump(2) +
               "\n");
  artifact("similarity.csv", similarity_csv_header() + "\n" + res.similarity_mle.to_csv_row() +
                                 "\n" + res.similarity_gan.to_csv_row() + "\n");

  artifact("summary.json", res.summary().dump(2) + "\n");
  return res;
}

}  // namespace capgan
