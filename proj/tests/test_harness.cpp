#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "capgan/harness.hpp"

using namespace capgan;

namespace {

constexpr std::size_t kFeat = 48;

const EncodedCorpus& corpus() {
  static const EncodedCorpus c = EncodedCorpus::build(generate_corpus(5, 1200, 5, kFeat), 1, 16);
  return c;
}

GeneratorParams small_generator(double init = 0.5) {
  GeneratorDims d;
  d.feature_dim = kFeat;
  d.noise_dim = 4;
  d.embed_dim = 6;
  d.hidden_dim = 12;
  d.vocab_size = corpus().vocab.size();
  return GeneratorParams(d, 3, init);
}

EvaluatorParams small_evaluator() {
  EvaluatorDims d;
  d.feature_dim = kFeat;
  d.embed_dim = 6;
  d.hidden_dim = 8;
  d.joint_dim = 8;
  d.vocab_size = corpus().vocab.size();
  return EvaluatorParams(d, 4, 0.5);
}

std::span<const EncodedRecord> test_records(std::size_t n) {
  REQUIRE(corpus().test.size() >= n);
  return std::span<const EncodedRecord>(corpus().test).first(n);
}

SystemCaptions first_reference_system(std::span<const EncodedRecord> records) {
  SystemCaptions s;
  s.name = "first";
  for (const auto& r : records) s.captions[r.id] = r.refs.front();
  return s;
}

int attribute_changes(const Scene& a, const Scene& b) {
  int changes = (a.background != b.background) + (a.relation != b.relation);
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    changes += a.objects[i].shape != b.objects[i].shape;
    changes += a.objects[i].color != b.objects[i].color;
    changes += a.objects[i].size != b.objects[i].size;
  }
  return changes;
}

}  // namespace

TEST_CASE("human captions are seeded references of their own record") {
  const auto recs = test_records(30);
  const auto a = sample_human_captions(recs, 9);
  const auto b = sample_human_captions(recs, 9);
  const auto c = sample_human_captions(recs, 10);
  CHECK(a.human);
  CHECK(a.captions == b.captions);
  CHECK(a.captions != c.captions);
  for (const auto& r : recs) {
    const Sentence& s = a.captions.at(r.id);
    CHECK(std::find(r.refs.begin(), r.refs.end(), s) != r.refs.end());
  }
}

TEST_CASE("metric references drop exactly one occurrence of the human caption") {
  EncodedRecord r;
  r.id = "x";
  r.refs = {Sentence{{3, 4, 0}}, Sentence{{5, 0}}, Sentence{{3, 4, 0}}, Sentence{{6, 0}}};
  const auto all = metric_references(r, nullptr);
  CHECK(all.size() == 4);
  const auto held = metric_references(r, &r.refs[0]);
  REQUIRE(held.size() == 3);
  CHECK(std::count(held.begin(), held.end(), Tokens{3, 4}) == 1);
  const Sentence foreign{{7, 7, 0}};
  CHECK(metric_references(r, &foreign).size() == 4);
}

TEST_CASE("the human system is scored against the other references only") {
  const auto recs = test_records(40);
  const auto human = sample_human_captions(recs, 21);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& r : recs) {
    cands.push_back(tokens_of(human.captions.at(r.id)));
    refs.push_back(metric_references(r, &human.captions.at(r.id)));
    CHECK(refs.back().size() == r.refs.size() - 1);
  }
  const std::vector<SystemCaptions> systems{human};
  const auto table = run_metric_table(systems, recs);
  REQUIRE(table.size() == 1);
  const auto want = score_system("human", cands, refs);
  CHECK(table[0] == want);
  // With its own caption among the references BLEU would be 1.
  CHECK(table[0].bleu4 < 1.0);
}

TEST_CASE("every system shares the human-reduced references") {
  const auto recs = test_records(40);
  const auto human = sample_human_captions(recs, 21);
  SystemCaptions copy = human;
  copy.name = "copy";
  copy.human = false;
  const std::vector<SystemCaptions> systems{human, copy};
  const auto table = run_metric_table(systems, recs);
  REQUIRE(table.size() == 2);
  MetricReport renamed = table[1];
  renamed.system = "human";
  CHECK(renamed == table[0]);
}

TEST_CASE("identical systems give identical reports") {
  const auto recs = test_records(25);
  const EvaluatorParams e = small_evaluator();
  auto a = first_reference_system(recs);
  auto b = a;
  b.name = "twin";
  const std::vector<SystemCaptions> systems{a, b};
  const auto table = run_metric_table(systems, recs, &e, &e);
  MetricReport t = table[1];
  t.system = a.name;
  CHECK(t == table[0]);
  REQUIRE(table[0].e_gan.has_value());
  CHECK(*table[0].e_gan == doctest::Approx(mean_evaluator_score(a, recs, e)));
  CHECK(*table[0].e_ngan == *table[0].e_gan);
  CHECK_FALSE(run_metric_table(systems, recs)[0].e_gan.has_value());
}

TEST_CASE("metric table rejects missing captions and two human systems") {
  const auto recs = test_records(10);
  auto a = first_reference_system(recs);
  a.captions.erase(recs[3].id);
  const std::vector<SystemCaptions> missing{a};
  try {
    run_metric_table(missing, recs);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(recs[3].id) != std::string::npos);
  }
  const auto h = sample_human_captions(recs, 1);
  const std::vector<SystemCaptions> two{h, h};
  CHECK_THROWS_AS(run_metric_table(two, recs), std::invalid_argument);
}

TEST_CASE("captions round-trip through jsonl") {
  const auto recs = test_records(12);
  const auto a = first_reference_system(recs);
  const auto path = std::filesystem::temp_directory_path() / "capgan_harness_caps.jsonl";
  save_captions(path, a, corpus().vocab);
  const auto b = load_captions(path, corpus().vocab, "first");
  CHECK(b.captions == a.captions);
  std::filesystem::remove(path);
}

TEST_CASE("retrieval with an oracle scorer ranks every source first") {
  const auto recs = test_records(20);
  std::vector<Sentence> caps;
  for (const auto& r : recs) caps.push_back(r.refs.front());
  const PairScorer oracle = [&](std::size_t i, const Sentence& s) { return caps[i] == s ? 1.0 : 0.0; };
  const auto res = retrieval_recall(recs, caps, oracle);
  CHECK(res.recall[0] == 1.0);
  for (std::size_t r : res.source_rank) CHECK(r == 1);
}

TEST_CASE("retrieval with a constant scorer gives k/M exactly") {
  const auto recs = test_records(40);
  std::vector<Sentence> caps;
  for (const auto& r : recs) caps.push_back(r.refs.front());
  const PairScorer flat = [](std::size_t, const Sentence&) { return 0.25; };
  const auto res = retrieval_recall(recs, caps, flat, {1, 3, 5, 10, 40});
  const std::vector<double> want{1 / 40.0, 3 / 40.0, 5 / 40.0, 10 / 40.0, 1.0};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(res.recall[i] == want[i]);
  // Ties fall back to ascending image id.
  std::vector<std::string> ids;
  for (const auto& r : recs) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  CHECK(res.ranked_ids[0] == ids);
}

TEST_CASE("retrieval with a random scorer sits at chance") {
  const auto recs = test_records(100);
  std::vector<Sentence> caps;
  for (const auto& r : recs) caps.push_back(r.refs.front());
  double mean_r1 = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<double> table(100 * 100);
    for (auto& v : table) v = rng.uniform();
    // Captions are passed by reference, so their address identifies the query.
    std::map<const Sentence*, std::size_t> which;
    for (std::size_t i = 0; i < caps.size(); ++i) which[&caps[i]] = i;
    const PairScorer random = [&](std::size_t i, const Sentence& s) {
      return table[which.at(&s) * 100 + i];
    };
    const auto res = retrieval_recall(recs, caps, random, {1, 3, 5, 10, 100});
    for (std::size_t k = 1; k < res.recall.size(); ++k) CHECK(res.recall[k] >= res.recall[k - 1]);
    CHECK(res.recall.back() == 1.0);
    mean_r1 += res.recall[0] / 100.0;
  }
  const double sd = std::sqrt(0.01 * 0.99 / (100.0 * 100.0));
  CHECK(std::abs(mean_r1 - 0.01) < 3 * sd);
}

TEST_CASE("retrieval rejects fewer images than the largest k") {
  const auto recs = test_records(5);
  std::vector<Sentence> caps;
  for (const auto& r : recs) caps.push_back(r.refs.front());
  const PairScorer flat = [](std::size_t, const Sentence&) { return 0.0; };
  CHECK_THROWS(retrieval_recall(recs, caps, flat, {1, 10}));
  CHECK_THROWS(retrieval_recall(recs, std::span(caps).first(4), flat, {1}));
}

TEST_CASE("scorers evaluate the evaluator score and the z=0 log-likelihood") {
  const auto recs = test_records(6);
  const auto g = small_generator();
  const auto e = small_evaluator();
  const auto sim = similarity_scorer(recs, e);
  const auto ll = loglik_scorer(recs, g);
  const Sentence& s = recs[2].refs[1];
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(sim(i, s) == doctest::Approx(score(recs[i].feature, s, e).score).epsilon(1e-12));
    CHECK(ll(i, s) == doctest::Approx(log_likelihood(recs[i].feature, NoiseVector::zeros(4), s, g))
                          .epsilon(1e-12));
  }
}

TEST_CASE("diversity probe: sigma 0 and a single draw give one output") {
  const auto recs = test_records(15);
  const auto g = small_generator(1.0);
  const std::vector<double> sigmas{0.0, 1.0};
  const auto rep = diversity_probe(g, recs, 6, sigmas, 5, 16);
  CHECK(rep.rows.size() == recs.size() * 2);
  for (const auto& row : rep.rows) {
    CHECK(row.outputs.size() == 6);
    CHECK(row.distinct == std::set<std::vector<TokenId>>(
                              [&] {
                                std::set<std::vector<TokenId>> s;
                                for (const auto& o : row.outputs) s.insert(o.tokens);
                                return s;
                              }())
                              .size());
    if (row.sigma == 0.0) CHECK(row.distinct == 1);
  }
  CHECK(rep.fraction_with_at_least(2, 0.0) == 0.0);
  CHECK(rep.fraction_with_at_least(1, 1.0) == 1.0);
  // An untrained generator at init 1.0 is strongly z-sensitive.
  CHECK(rep.fraction_with_at_least(2, 1.0) > 0.0);

  const auto one = diversity_probe(g, recs, 1, sigmas, 5, 16);
  for (const auto& row : one.rows) CHECK(row.distinct == 1);

  const auto again = diversity_probe(g, recs, 6, sigmas, 5, 16);
  CHECK(again.to_json() == rep.to_json());
  CHECK(again.to_csv() == rep.to_csv());
}

TEST_CASE("near-duplicate pairs differ in one attribute and render their scenes") {
  const auto recs = test_records(20);
  const auto pairs = near_duplicate_pairs(recs, 30, 3, kFeat);
  REQUIRE(pairs.size() == 30);
  for (const auto& p : pairs) {
    REQUIRE(p.a.objects.size() == p.b.objects.size());
    CHECK(attribute_changes(p.a, p.b) == 1);
    CHECK(p.fa.values == render_feature(p.a, kFeat).values);
    CHECK(p.fb.values == render_feature(p.b, kFeat).values);
  }
  std::vector<EncodedRecord> no_scene(recs.begin(), recs.end());
  for (auto& r : no_scene) r.scene.reset();
  CHECK(near_duplicate_pairs(no_scene, 5, 3, kFeat).empty());
}

TEST_CASE("similarity probe: identical scenes match and empty lists are empty") {
  const auto recs = test_records(10);
  const auto g = small_generator(1.0);
  std::vector<ScenePair> control;
  for (const auto& r : recs) control.push_back({*r.scene, *r.scene, r.feature, r.feature});
  for (double sigma : {0.0, 1.0}) {
    const auto rep = similarity_probe("g", g, control, sigma, 4, 16);
    CHECK(rep.pairs == control.size());
    CHECK(rep.identical == control.size());
    CHECK(rep.fraction == 1.0);
  }
  const auto empty = similarity_probe("g", g, std::span<const ScenePair>{}, 0.0, 4, 16);
  CHECK(empty.pairs == 0);
  CHECK(empty.fraction == 0.0);
  CHECK(empty.outputs.empty());

  const auto pairs = near_duplicate_pairs(recs, 10, 3, kFeat);
  const auto a = similarity_probe("g", g, pairs, 1.0, 4, 16);
  const auto b = similarity_probe("g", g, pairs, 1.0, 4, 16);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.to_csv_row() == b.to_csv_row());
  CHECK(a.fraction == double(a.identical) / double(a.pairs));
}

TEST_CASE("caption systems are deterministic given the seed") {
  const auto recs = test_records(8);
  const auto g = small_generator(1.0);
  const auto e = small_evaluator();
  CHECK(greedy_captions("g", g, recs, 1.0, 3).captions == greedy_captions("g", g, recs, 1.0, 3).captions);
  const auto zero = greedy_captions("g", g, recs, 0.0, 3);
  for (const auto& r : recs) {
    CHECK(zero.captions.at(r.id) == greedy_decode(r.feature, NoiseVector::zeros(4), g, 16));
  }
  const auto b1 = beam_captions("b", g, e, recs, 3, 1.0, 3);
  const auto b2 = beam_captions("b", g, e, recs, 3, 1.0, 3);
  CHECK(b1.captions == b2.captions);
  CHECK(b1.captions.size() == recs.size());
}
