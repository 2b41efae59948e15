#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "capgan/model_io.hpp"
#include "capgan/pipeline.hpp"

using namespace capgan;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = CAPGAN_VERSION;
constexpr double kGradTolerance = 1e-4;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

fs::path default_out_dir() {
  const char* env = std::getenv("CAPGAN_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path("capgan_out");
}

// Provenance of one run: resolved config, inputs, outputs and their hashes.
class Manifest {
 public:
  Manifest(std::string subcommand, const PipelineConfig& cfg)
      : subcommand_(std::move(subcommand)), config_(cfg.to_json()), seed_(cfg.seed),
        threads_(cfg.threads), started_(utc_now()) {}

  void input(const std::string& name, const fs::path& path) { add(inputs_, name, path); }
  void output(const std::string& name, const fs::path& path) { add(outputs_, name, path); }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write(const fs::path& path) const {
    json j{{"subcommand", subcommand_},
           {"tool_version", kToolVersion},
           {"seed", seed_},
           {"threads", threads_},
           {"config", config_},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"checkpoint_hashes", checkpoints_},
           {"started_at", started_},
           {"finished_at", utc_now()}};
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    write_artifact(path, j.dump(2) + "\n");
  }

 private:
  void add(json& set, const std::string& name, const fs::path& path) {
    const std::string hash = file_hash(path);
    set[name] = {{"path", path.string()}, {"hash", hash}};
    if (path.extension() == ".ckpt") checkpoints_[name] = hash;
  }

  std::string subcommand_;
  json config_;
  std::uint64_t seed_;
  std::size_t threads_;
  std::string started_;
  json inputs_ = json::object();
  json outputs_ = json::object();
  json checkpoints_ = json::object();
  json extra_ = json::object();
};

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  ensure_parent(path);
  ck.save(path);
}

fs::path manifest_for(const fs::path& primary) { return fs::path(primary.string() + ".manifest.json"); }

std::string short_hash(const fs::path& path) { return file_hash(path).substr(0, 8); }

// Options every config-consuming subcommand shares.
struct ConfigOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> min_count;
  std::string out_dir;
  // TrainConfig fields given as flags, applied to the subcommand's phase.
  std::deque<std::pair<std::string, std::string>> phase;
  std::vector<CLI::Option*> phase_opts;
};

void add_config_options(CLI::App* app, ConfigOptions& o, bool phase_flags) {
  app->add_option("--config", o.config_file, "JSON config; keys override the desk defaults")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Run seed; re-derives every phase seed");
  app->add_option("--threads", o.threads, "Worker threads; results do not depend on it");
  app->add_option("--min-count,--min_count", o.min_count, "Vocabulary frequency threshold");
  app->add_option("--out-dir", o.out_dir, "Output directory (default $CAPGAN_OUT_DIR or capgan_out)");
  if (!phase_flags) return;
  const json fields = TrainConfig{}.to_json();
  for (const auto& [key, value] : fields.items()) {
    if (key == "seed" || key == "threads") continue;
    std::string dashed = key;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    auto& slot = o.phase.emplace_back(key, "");
    const std::string names = dashed == key ? "--" + key : "--" + key + ",--" + dashed;
    o.phase_opts.push_back(app->add_option(names, slot.second, "TrainConfig." + key)
                               ->group("Training"));
  }
}

json flag_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

// defaults < config file < flags
PipelineConfig resolve_config(const ConfigOptions& o, TrainConfig PipelineConfig::*phase = nullptr) {
  json file = json::object();
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    file = json::parse(in);
  }
  std::uint64_t seed = 7;
  if (file.contains("seed")) seed = file.at("seed").get<std::uint64_t>();
  PipelineConfig cfg = PipelineConfig::from_json(file, PipelineConfig::desk(seed));
  if (o.seed) cfg.reseed(*o.seed);
  if (o.threads) cfg.set_threads(*o.threads);
  if (o.min_count) cfg.min_count = *o.min_count;
  if (phase) {
    json merged = (cfg.*phase).to_json();
    for (std::size_t i = 0; i < o.phase.size(); ++i) {
      if (o.phase_opts[i]->count() > 0) merged[o.phase[i].first] = flag_value(o.phase[i].second);
    }
    cfg.*phase = TrainConfig::from_json(merged);
    (cfg.*phase).validate();
  }
  return cfg;
}

fs::path out_dir_of(const ConfigOptions& o) { return o.out_dir.empty() ? default_out_dir() : fs::path(o.out_dir); }

fs::path output_path(const ConfigOptions& o, const std::string& given, const std::string& fallback) {
  return given.empty() ? out_dir_of(o) / fallback : fs::path(given);
}

EncodedCorpus load_corpus(const PipelineConfig& cfg, const fs::path& dataset) {
  return EncodedCorpus::build(load_dataset(dataset, cfg.feature_dim), cfg.min_count, cfg.t_max);
}

GeneratorDims generator_dims(const PipelineConfig& cfg, const EncodedCorpus& corpus) {
  GeneratorDims d = cfg.gen_dims;
  d.vocab_size = corpus.vocab.size();
  d.feature_dim = cfg.feature_dim;
  return d;
}

EvaluatorDims evaluator_dims(const PipelineConfig& cfg, const EncodedCorpus& corpus) {
  EvaluatorDims d = cfg.eval_dims;
  d.vocab_size = corpus.vocab.size();
  d.feature_dim = cfg.feature_dim;
  return d;
}

std::span<const EncodedRecord> split_of(const EncodedCorpus& corpus, const std::string& name) {
  return corpus.split(parse_split(name));
}

std::uint64_t eval_seed(const PipelineConfig& cfg) { return mix_seed(cfg.seed, {5}); }

// The manifest sits next to the checkpoint as <checkpoint>.manifest.json.
json checkpoint_config(const TrainConfig& t) { return {{"train", t.to_json()}}; }

void write_train_report(const TrainReport& rep, const fs::path& ckpt, Manifest& m) {
  const fs::path jsonl = ckpt.parent_path() / (ckpt.stem().string() + ".report.jsonl");
  const fs::path csv = ckpt.parent_path() / (ckpt.stem().string() + ".report.csv");
  write_artifact(jsonl, rep.to_jsonl());
  write_artifact(csv, rep.to_csv());
  m.output("report_jsonl", jsonl);
  m.output("report_csv", csv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional GAN captioning at desk scale"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  // ------------------------------------------------------------ gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic scene corpus");
  std::uint64_t gc_seed = 7;
  std::size_t gc_scenes = 2000, gc_refs = 5, gc_fdim = kDefaultFeatureDim;
  std::string gc_out, gc_dir;
  gen->add_option("--seed", gc_seed);
  gen->add_option("--scenes", gc_scenes);
  gen->add_option("--refs", gc_refs);
  gen->add_option("--feature-dim,--feature_dim", gc_fdim);
  gen->add_option("--out", gc_out, "Dataset JSONL path");
  gen->add_option("--out-dir", gc_dir);

  // ------------------------------------------------------------ training
  ConfigOptions pg_o, pe_o, gan_o, eng_o;
  std::string pg_data, pg_out;
  auto* pg = app.add_subcommand("pretrain-g", "MLE pretraining of the generator");
  add_config_options(pg, pg_o, true);
  pg->add_option("--dataset", pg_data)->required()->check(CLI::ExistingFile);
  pg->add_option("--out", pg_out, "Generator checkpoint path");

  std::string pe_data, pe_gen, pe_out;
  auto* pe = app.add_subcommand("pretrain-e", "Evaluator pretraining against a fixed generator");
  add_config_options(pe, pe_o, true);
  pe->add_option("--dataset", pe_data)->required()->check(CLI::ExistingFile);
  pe->add_option("--generator", pe_gen)->required()->check(CLI::ExistingFile);
  pe->add_option("--out", pe_out, "Evaluator checkpoint path");

  std::string gan_data, gan_gen, gan_eval, gan_out_g, gan_out_e;
  auto* tg = app.add_subcommand("train-gan", "Adversarial training of generator and evaluator");
  add_config_options(tg, gan_o, true);
  tg->add_option("--dataset", gan_data)->required()->check(CLI::ExistingFile);
  tg->add_option("--generator", gan_gen)->required()->check(CLI::ExistingFile);
  tg->add_option("--evaluator", gan_eval)->required()->check(CLI::ExistingFile);
  tg->add_option("--out-g", gan_out_g, "Trained generator checkpoint path");
  tg->add_option("--out-e", gan_out_e, "Trained evaluator checkpoint path");

  std::string eng_data, eng_gen, eng_eval, eng_out;
  auto* te = app.add_subcommand("train-engan", "Evaluator training against the fixed MLE generator");
  add_config_options(te, eng_o, true);
  te->add_option("--dataset", eng_data)->required()->check(CLI::ExistingFile);
  te->add_option("--generator", eng_gen)->required()->check(CLI::ExistingFile);
  te->add_option("--evaluator", eng_eval)->required()->check(CLI::ExistingFile);
  te->add_option("--out", eng_out, "E-NGAN checkpoint path");

  // ------------------------------------------------------------ decoding and evaluation
  ConfigOptions sa_o, me_o, re_o, pd_o, ps_o;
  std::string sa_data, sa_gen, sa_eval, sa_out, sa_mode = "greedy", sa_split = "test", sa_name;
  std::optional<double> sa_sigma;
  std::optional<std::size_t> sa_beam;
  auto* sa = app.add_subcommand("sample", "Caption a split with a generator");
  add_config_options(sa, sa_o, false);
  sa->add_option("--dataset", sa_data)->required()->check(CLI::ExistingFile);
  sa->add_option("--generator", sa_gen)->required()->check(CLI::ExistingFile);
  sa->add_option("--evaluator", sa_eval, "Scorer for the final beam pick")->check(CLI::ExistingFile);
  sa->add_option("--mode", sa_mode)->check(CLI::IsMember({"greedy", "beam", "sample"}));
  sa->add_option("--sigma", sa_sigma, "Noise scale (default: test_sigma)");
  sa->add_option("--beam", sa_beam);
  sa->add_option("--split", sa_split)->check(CLI::IsMember({"train", "val", "test"}));
  sa->add_option("--name", sa_name, "System name (default: the mode)");
  sa->add_option("--out", sa_out, "Captions JSONL path");

  std::string me_data, me_split = "test", me_egan, me_engan, me_out;
  std::vector<std::string> me_cands, me_names;
  auto* me = app.add_subcommand("metrics", "Metric table of one or more caption files");
  add_config_options(me, me_o, false);
  me->add_option("--dataset", me_data)->required()->check(CLI::ExistingFile);
  me->add_option("--candidates", me_cands, "Captions JSONL; repeatable")->required()->check(CLI::ExistingFile);
  me->add_option("--name", me_names, "System names in --candidates order; \"human\" holds out its caption");
  me->add_option("--split", me_split)->check(CLI::IsMember({"train", "val", "test"}));
  me->add_option("--e-gan", me_egan)->check(CLI::ExistingFile);
  me->add_option("--e-ngan", me_engan)->check(CLI::ExistingFile);
  me->add_option("--out", me_out, "Report JSON path; the CSV goes next to it");

  std::string re_data, re_cands, re_criterion = "similarity", re_eval, re_gen, re_split = "test";
  std::optional<std::size_t> re_images;
  std::vector<std::size_t> re_ks{1, 3, 5, 10};
  auto* re = app.add_subcommand("retrieve", "Recall@k of captions used as image queries");
  add_config_options(re, re_o, false);
  re->add_option("--dataset", re_data)->required()->check(CLI::ExistingFile);
  re->add_option("--candidates", re_cands)->required()->check(CLI::ExistingFile);
  re->add_option("--criterion", re_criterion)->check(CLI::IsMember({"similarity", "loglik"}));
  re->add_option("--evaluator", re_eval)->check(CLI::ExistingFile);
  re->add_option("--generator", re_gen)->check(CLI::ExistingFile);
  re->add_option("--images", re_images, "Number of images M (default: retrieval_images)");
  re->add_option("--ks", re_ks)->delimiter(',');
  re->add_option("--split", re_split)->check(CLI::IsMember({"train", "val", "test"}));

  std::string pd_data, pd_gen, pd_split = "test";
  std::optional<std::size_t> pd_draws;
  std::vector<double> pd_sigmas{0.0, 1.0};
  auto* pd = app.add_subcommand("probe-diversity", "Distinct greedy outputs across noise draws");
  add_config_options(pd, pd_o, false);
  pd->add_option("--dataset", pd_data)->required()->check(CLI::ExistingFile);
  pd->add_option("--generator", pd_gen)->required()->check(CLI::ExistingFile);
  pd->add_option("--z-draws,--z_draws", pd_draws);
  pd->add_option("--sigmas", pd_sigmas)->delimiter(',');
  pd->add_option("--split", pd_split)->check(CLI::IsMember({"train", "val", "test"}));

  std::string ps_data, ps_split = "test";
  std::vector<std::string> ps_gens;
  std::optional<std::size_t> ps_pairs;
  double ps_sigma = 0.0;
  auto* ps = app.add_subcommand("probe-similarity", "Identical outputs on near-duplicate scenes");
  add_config_options(ps, ps_o, false);
  ps->add_option("--dataset", ps_data)->required()->check(CLI::ExistingFile);
  ps->add_option("--generator", ps_gens, "Repeatable")->required()->check(CLI::ExistingFile);
  ps->add_option("--pairs", ps_pairs);
  ps->add_option("--sigma", ps_sigma);
  ps->add_option("--split", ps_split)->check(CLI::IsMember({"train", "val", "test"}));

  // ------------------------------------------------------------ checks and pipeline
  std::uint64_t gcheck_seed = 3;
  std::size_t gcheck_hidden = 8;
  std::string gcheck_dir;
  auto* gcheck = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gcheck->add_option("--seed", gcheck_seed);
  gcheck->add_option("--hidden", gcheck_hidden)->check(CLI::Range(1, 16));
  gcheck->add_option("--out-dir", gcheck_dir);

  ConfigOptions ra_o;
  auto* ra = app.add_subcommand("repro-all", "Run the full desk-scale pipeline");
  add_config_options(ra, ra_o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      PipelineConfig cfg = PipelineConfig::desk(gc_seed);
      cfg.scenes = gc_scenes;
      cfg.refs = gc_refs;
      cfg.feature_dim = gc_fdim;
      Manifest m("gen-corpus", cfg);
      const fs::path dir = gc_dir.empty() ? default_out_dir() : fs::path(gc_dir);
      const fs::path out = gc_out.empty() ? dir / ("corpus_s" + std::to_string(gc_seed) + ".jsonl")
                                          : fs::path(gc_out);
      const auto records = generate_corpus(gc_seed, gc_scenes, gc_refs, gc_fdim);
      std::string text;
      for (const auto& r : records) text += dataset_line(r) + "\n";
      write_artifact(out, text);
      m.output("dataset", out);
      m.write(manifest_for(out));
      std::cout << out.string() << "\n";
      return 0;
    }

    if (*pg) {
      const PipelineConfig cfg = resolve_config(pg_o, &PipelineConfig::mle);
      const EncodedCorpus corpus = load_corpus(cfg, pg_data);
      const fs::path out = output_path(pg_o, pg_out, "g_mle_s" + std::to_string(cfg.seed) + ".ckpt");
      Manifest m("pretrain-g", cfg);
      m.input("dataset", pg_data);
      GeneratorParams g(generator_dims(cfg, corpus), cfg.mle.seed, cfg.gen_init_scale,
                        cfg.gen_noise_init_scale);
      const TrainReport rep = pretrain_mle(g, corpus, cfg.mle);
      save_checkpoint(generator_checkpoint(g, corpus.vocab.hash(), checkpoint_config(cfg.mle)), out);
      write_train_report(rep, out, m);
      m.output("generator", out);
      const double uniform = std::log(double(corpus.vocab.extended_size()));
      const double val = rep.records.empty() ? 0.0 : rep.records.back().val_nll.value_or(0.0);
      m.note("final_val_nll", val);
      m.note("uniform_nll", uniform);
      m.write(manifest_for(out));
      std::cout << "val_nll " << val << " uniform " << uniform << "\n" << out.string() << "\n";
      return 0;
    }

    if (*pe) {
      const PipelineConfig cfg = resolve_config(pe_o, &PipelineConfig::e_pre);
      const EncodedCorpus corpus = load_corpus(cfg, pe_data);
      const std::string vh = corpus.vocab.hash();
      const GeneratorParams g = load_generator(pe_gen, vh);
      const fs::path out = output_path(pe_o, pe_out, "e_pre_s" + std::to_string(cfg.seed) + ".ckpt");
      Manifest m("pretrain-e", cfg);
      m.input("dataset", pe_data);
      m.input("generator", pe_gen);
      EvaluatorParams e(evaluator_dims(cfg, corpus), cfg.e_pre.seed, cfg.eval_init_scale);
      e.set_vocab_hash(vh);
      const TrainReport rep = pretrain_evaluator(e, g, corpus, cfg.e_pre);
      save_checkpoint(evaluator_checkpoint(e, checkpoint_config(cfg.e_pre)), out);
      write_train_report(rep, out, m);
      m.output("evaluator", out);
      m.write(manifest_for(out));
      std::cout << out.string() << "\n";
      return 0;
    }

    if (*tg) {
      const PipelineConfig cfg = resolve_config(gan_o, &PipelineConfig::gan);
      const EncodedCorpus corpus = load_corpus(cfg, gan_data);
      const std::string vh = corpus.vocab.hash();
      GeneratorParams g = load_generator(gan_gen, vh);
      EvaluatorParams e = load_evaluator(gan_eval, vh);
      const std::string tag = "_s" + std::to_string(cfg.seed);
      const fs::path out_g = output_path(gan_o, gan_out_g, "g_gan" + tag + ".ckpt");
      const fs::path out_e = output_path(gan_o, gan_out_e, "e_gan" + tag + ".ckpt");
      Manifest m("train-gan", cfg);
      m.input("dataset", gan_data);
      m.input("generator", gan_gen);
      m.input("evaluator", gan_eval);
      const CheckpointHook hook = [&](std::size_t it, const GeneratorParams& gi,
                                      const EvaluatorParams& ei) {
        const std::string k = "_it" + std::to_string(it);
        const fs::path pg_path = out_g.parent_path() / (out_g.stem().string() + k + ".ckpt");
        const fs::path pe_path = out_e.parent_path() / (out_e.stem().string() + k + ".ckpt");
        save_checkpoint(generator_checkpoint(gi, vh, checkpoint_config(cfg.gan)), pg_path);
        save_checkpoint(evaluator_checkpoint(ei, checkpoint_config(cfg.gan)), pe_path);
        m.output("generator" + k, pg_path);
        m.output("evaluator" + k, pe_path);
      };
      const TrainReport rep = train_adversarial(g, e, corpus, cfg.gan, hook);
      save_checkpoint(generator_checkpoint(g, vh, checkpoint_config(cfg.gan)), out_g);
      save_checkpoint(evaluator_checkpoint(e, checkpoint_config(cfg.gan)), out_e);
      write_train_report(rep, out_g, m);
      m.output("generator", out_g);
      m.output("evaluator", out_e);
      m.write(manifest_for(out_g));
      std::cout << out_g.string() << "\n" << out_e.string() << "\n";
      return 0;
    }

    if (*te) {
      const PipelineConfig cfg = resolve_config(eng_o, &PipelineConfig::engan);
      const EncodedCorpus corpus = load_corpus(cfg, eng_data);
      const std::string vh = corpus.vocab.hash();
      const GeneratorParams g = load_generator(eng_gen, vh);
      EvaluatorParams e = load_evaluator(eng_eval, vh);
      const fs::path out = output_path(eng_o, eng_out, "e_ngan_s" + std::to_string(cfg.seed) + ".ckpt");
      Manifest m("train-engan", cfg);
      m.input("dataset", eng_data);
      m.input("generator", eng_gen);
      m.input("evaluator", eng_eval);
      const TrainReport rep = train_e_ngan(e, g, corpus, cfg.engan);
      save_checkpoint(evaluator_checkpoint(e, checkpoint_config(cfg.engan)), out);
      write_train_report(rep, out, m);
      m.output("evaluator", out);
      m.write(manifest_for(out));
      std::cout << out.string() << "\n";
      return 0;
    }

    if (*sa) {
      const PipelineConfig cfg = resolve_config(sa_o);
      const EncodedCorpus corpus = load_corpus(cfg, sa_data);
      const std::string vh = corpus.vocab.hash();
      const GeneratorParams g = load_generator(sa_gen, vh);
      const auto records = split_of(corpus, sa_split);
      const double sigma = sa_sigma.value_or(cfg.test_sigma);
      const std::string name = sa_name.empty() ? sa_mode : sa_name;
      SystemCaptions caps;
      if (sa_mode == "greedy") {
        caps = greedy_captions(name, g, records, sigma, eval_seed(cfg), cfg.t_max);
      } else if (sa_mode == "sample") {
        caps = sampled_captions(name, g, records, sigma, eval_seed(cfg), cfg.t_max);
      } else {
        if (sa_eval.empty()) throw std::invalid_argument("beam mode needs --evaluator for the final pick");
        const EvaluatorParams e = load_evaluator(sa_eval, vh);
        caps = beam_captions(name, g, e, records, sa_beam.value_or(cfg.beam), sigma, eval_seed(cfg),
                             cfg.t_max);
      }
      const fs::path out = output_path(sa_o, sa_out,
                                       "captions_" + sa_mode + "_" + short_hash(sa_gen) + "_s" +
                                           std::to_string(cfg.seed) + ".jsonl");
      Manifest m("sample", cfg);
      m.input("dataset", sa_data);
      m.input("generator", sa_gen);
      if (!sa_eval.empty()) m.input("evaluator", sa_eval);
      m.note("mode", sa_mode);
      m.note("sigma", sigma);
      ensure_parent(out);
      save_captions(out, caps, corpus.vocab);
      m.output("captions", out);
      m.write(manifest_for(out));
      std::cout << out.string() << "\n";
      return 0;
    }

    if (*me) {
      const PipelineConfig cfg = resolve_config(me_o);
      if (!me_names.empty() && me_names.size() != me_cands.size()) {
        throw std::invalid_argument("--name must be given once per --candidates file");
      }
      const EncodedCorpus corpus = load_corpus(cfg, me_data);
      const auto records = split_of(corpus, me_split);
      Manifest m("metrics", cfg);
      m.input("dataset", me_data);
      std::vector<SystemCaptions> systems;
      for (std::size_t i = 0; i < me_cands.size(); ++i) {
        const std::string name = me_names.empty() ? fs::path(me_cands[i]).stem().string() : me_names[i];
        systems.push_back(load_captions(me_cands[i], corpus.vocab, name, cfg.t_max));
        systems.back().human = name == "human";
        m.input("candidates_" + name, me_cands[i]);
      }
      std::optional<EvaluatorParams> e_gan, e_ngan;
      if (!me_egan.empty()) {
        e_gan = load_evaluator(me_egan, corpus.vocab.hash());
        m.input("e_gan", me_egan);
      }
      if (!me_engan.empty()) {
        e_ngan = load_evaluator(me_engan, corpus.vocab.hash());
        m.input("e_ngan", me_engan);
      }
      const auto reports = run_metric_table(systems, records, e_gan ? &*e_gan : nullptr,
                                            e_ngan ? &*e_ngan : nullptr);
      const fs::path out = output_path(me_o, me_out, "metrics_s" + std::to_string(cfg.seed) + ".json");
      fs::path csv = out;
      csv.replace_extension(".csv");
      write_artifact(out, metric_table_json(reports).dump(2) + "\n");
      write_artifact(csv, metric_table_csv(reports));
      m.output("metrics_json", out);
      m.output("metrics_csv", csv);
      m.write(manifest_for(out));
      std::cout << metric_table_csv(reports);
      return 0;
    }

    if (*re) {
      const PipelineConfig cfg = resolve_config(re_o);
      const EncodedCorpus corpus = load_corpus(cfg, re_data);
      const std::string vh = corpus.vocab.hash();
      const auto records = split_of(corpus, re_split);
      const std::size_t m_images = re_images.value_or(cfg.retrieval_images);
      if (m_images > records.size()) {
        throw std::invalid_argument("retrieve: " + std::to_string(m_images) + " images requested but the split has " +
                                    std::to_string(records.size()));
      }
      const auto images = records.subspan(0, m_images);
      const SystemCaptions caps = load_captions(re_cands, corpus.vocab, "query", cfg.t_max);
      std::vector<Sentence> queries;
      for (const auto& r : images) {
        const auto it = caps.captions.find(r.id);
        if (it == caps.captions.end()) throw std::invalid_argument("retrieve: no caption for record " + r.id);
        queries.push_back(it->second);
      }
      Manifest m("retrieve", cfg);
      m.input("dataset", re_data);
      m.input("candidates", re_cands);
      PairScorer scorer;
      std::optional<EvaluatorParams> e;
      std::optional<GeneratorParams> g;
      fs::path model;
      if (re_criterion == "similarity") {
        if (re_eval.empty()) throw std::invalid_argument("similarity retrieval needs --evaluator");
        e = load_evaluator(re_eval, vh);
        scorer = similarity_scorer(images, *e);
        model = re_eval;
      } else {
        if (re_gen.empty()) throw std::invalid_argument("loglik retrieval needs --generator");
        g = load_generator(re_gen, vh);
        scorer = loglik_scorer(images, *g);
        model = re_gen;
      }
      m.input("model", model);
      const RetrievalResult res = retrieval_recall(images, queries, scorer, re_ks, re_criterion);
      const std::string stem = "retrieval_" + re_criterion + "_" + short_hash(model) + "_s" +
                               std::to_string(cfg.seed);
      const fs::path dir = out_dir_of(re_o);
      write_artifact(dir / (stem + ".json"), res.to_json().dump(2) + "\n");
      write_artifact(dir / (stem + ".csv"), res.to_csv());
      m.output("retrieval_json", dir / (stem + ".json"));
      m.output("retrieval_csv", dir / (stem + ".csv"));
      m.write(manifest_for(dir / (stem + ".json")));
      std::cout << res.to_csv();
      return 0;
    }

    if (*pd) {
      const PipelineConfig cfg = resolve_config(pd_o);
      const EncodedCorpus corpus = load_corpus(cfg, pd_data);
      const GeneratorParams g = load_generator(pd_gen, corpus.vocab.hash());
      const auto records = split_of(corpus, pd_split);
      const DiversityReport rep = diversity_probe(g, records, pd_draws.value_or(cfg.z_draws), pd_sigmas,
                                                  eval_seed(cfg), cfg.t_max);
      const std::string stem = "diversity_" + short_hash(pd_gen) + "_s" + std::to_string(cfg.seed);
      const fs::path dir = out_dir_of(pd_o);
      Manifest m("probe-diversity", cfg);
      m.input("dataset", pd_data);
      m.input("generator", pd_gen);
      write_artifact(dir / (stem + ".json"), rep.to_json().dump() + "\n");
      write_artifact(dir / (stem + ".csv"), rep.to_csv());
      m.output("diversity_json", dir / (stem + ".json"));
      m.output("diversity_csv", dir / (stem + ".csv"));
      m.write(manifest_for(dir / (stem + ".json")));
      for (double s : pd_sigmas) {
        std::cout << "sigma " << s << " at_least_2 " << rep.fraction_with_at_least(2, s)
                  << " at_least_3 " << rep.fraction_with_at_least(3, s) << "\n";
      }
      return 0;
    }

    if (*ps) {
      const PipelineConfig cfg = resolve_config(ps_o);
      const EncodedCorpus corpus = load_corpus(cfg, ps_data);
      const auto records = split_of(corpus, ps_split);
      const auto pairs = near_duplicate_pairs(records, ps_pairs.value_or(cfg.similarity_pairs),
                                              eval_seed(cfg), cfg.feature_dim);
      Manifest m("probe-similarity", cfg);
      m.input("dataset", ps_data);
      const fs::path dir = out_dir_of(ps_o);
      std::string csv = similarity_csv_header() + "\n";
      json all = json::object();
      std::string hashes;
      for (const auto& path : ps_gens) {
        const GeneratorParams g = load_generator(path, corpus.vocab.hash());
        const std::string name = fs::path(path).stem().string();
        const SimilarityReport rep = similarity_probe(name, g, pairs, ps_sigma, eval_seed(cfg), cfg.t_max);
        csv += rep.to_csv_row() + "\n";
        all[name] = rep.to_json(&corpus.vocab);
        hashes += (hashes.empty() ? "" : "-") + short_hash(path);
        m.input("generator_" + name, path);
      }
      const std::string stem = "similarity_" + hashes + "_s" + std::to_string(cfg.seed);
      write_artifact(dir / (stem + ".json"), all.dump(2) + "\n");
      write_artifact(dir / (stem + ".csv"), csv);
      m.output("similarity_json", dir / (stem + ".json"));
      m.output("similarity_csv", dir / (stem + ".csv"));
      m.write(manifest_for(dir / (stem + ".json")));
      std::cout << csv;
      return 0;
    }

    if (*gcheck) {
      const PipelineConfig cfg = PipelineConfig::desk(gcheck_seed);
      Manifest m("grad-check", cfg);
      double worst = 0.0;
      json rows = json::array();
      for (const auto& row : gradient_suite(gcheck_seed, gcheck_hidden)) {
        worst = std::max(worst, row.result.max_relative_error);
        rows.push_back({{"objective", row.objective},
                        {"max_relative_error", row.result.max_relative_error},
                        {"worst_param", row.result.worst_param},
                        {"checked", row.result.checked}});
        std::cout << row.objective << " max_rel_err " << row.result.max_relative_error << " ("
                  << row.result.worst_param << "[" << row.result.worst_index << "])\n";
      }
      std::cout << "max relative error " << worst << "\n";
      const fs::path dir = gcheck_dir.empty() ? default_out_dir() : fs::path(gcheck_dir);
      const fs::path out = dir / ("grad_check_s" + std::to_string(gcheck_seed) + ".json");
      write_artifact(out, json{{"seed", gcheck_seed}, {"hidden", gcheck_hidden}, {"checks", rows},
                               {"max_relative_error", worst}}
                                  .dump(2) +
                              "\n");
      m.output("grad_check", out);
      m.write(manifest_for(out));
      if (worst > kGradTolerance) {
        std::cerr << "capgan: gradient check failed: max relative error " << worst << " exceeds "
                  << kGradTolerance << "\n";
        return 1;
      }
      return 0;
    }

    if (*ra) {
      const PipelineConfig cfg = resolve_config(ra_o);
      const fs::path dir = out_dir_of(ra_o);
      Manifest m("repro-all", cfg);
      const auto start = std::chrono::steady_clock::now();
      json phases = json::array();
      const PipelineResult res = run_pipeline(cfg, dir, [&](const std::string& msg) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        phases.push_back({{"phase", msg}, {"started_s", s}});
        std::cerr << "[" << std::fixed << std::setprecision(1) << s << "s] " << msg << std::endl;
      });
      m.note("phases", phases);
      for (const auto& [name, hash] : res.artifacts) m.output(name, dir / name);
      m.note("wall_clock_s",
             std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      m.write(dir / "manifest.json");
      std::cout << res.summary().dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "capgan: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
