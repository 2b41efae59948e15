#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "capgan/corpus.hpp"

using namespace capgan;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("capgan_corpus_" + name);
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Scene two_object_scene() {
  Scene s;
  s.objects = {{Shape::Cube, Color::Red, Size::Small}, {Shape::Sphere, Color::Blue, Size::Large}};
  s.relation = Relation::Beside;
  s.background = Background::Table;
  s.id = make_scene_id(s, 1);
  return s;
}

bool mentions_any(const std::vector<std::string>& words, const std::vector<std::string>& pool) {
  return std::any_of(words.begin(), words.end(), [&](const std::string& w) {
    return std::find(pool.begin(), pool.end(), w) != pool.end();
  });
}

}  // namespace

TEST_CASE("generate_corpus is deterministic in its arguments") {
  const auto a = generate_corpus(7, 10, 5);
  const auto b = generate_corpus(7, 10, 5);
  CHECK(a == b);
  const auto p1 = temp_file("a.jsonl"), p2 = temp_file("b.jsonl");
  save_dataset(p1, a);
  save_dataset(p2, b);
  CHECK(read_all(p1) == read_all(p2));
  CHECK(generate_corpus(8, 10, 5) != a);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("generate_corpus requires at least five references") {
  CHECK_THROWS_AS(generate_corpus(7, 3, 4), std::invalid_argument);
}

TEST_CASE("every scene satisfies its invariants and ids are unique") {
  const auto corpus = generate_corpus(3, 300, 5);
  std::set<std::string> ids;
  for (const auto& r : corpus) {
    REQUIRE(r.scene);
    CHECK_NOTHROW(validate_scene(*r.scene));
    CHECK(r.scene->objects.size() >= 1);
    CHECK(r.scene->objects.size() <= 3);
    CHECK(r.scene->relation.has_value() == (r.scene->objects.size() >= 2));
    CHECK(r.refs.size() == 5);
    CHECK(ids.insert(r.id).second);
  }
}

TEST_CASE("validate_scene rejects a relation on a single object and empty scenes") {
  Scene s;
  CHECK_THROWS_AS(validate_scene(s), std::invalid_argument);
  s.objects = {{Shape::Cube, Color::Red, Size::Small}};
  s.relation = Relation::On;
  CHECK_THROWS_AS(validate_scene(s), std::invalid_argument);
  s.relation.reset();
  CHECK_NOTHROW(validate_scene(s));
  Scene two = two_object_scene();
  two.relation.reset();
  CHECK_THROWS_AS(validate_scene(two), std::invalid_argument);
}

TEST_CASE("scene ids depend only on attributes and seed") {
  Scene a = two_object_scene();
  Scene b = two_object_scene();
  CHECK(make_scene_id(a, 5) == make_scene_id(b, 5));
  CHECK(make_scene_id(a, 5) != make_scene_id(a, 6));
  b.objects[0].color = Color::Green;
  CHECK(make_scene_id(a, 5) != make_scene_id(b, 5));
}

TEST_CASE("descriptions of a two-object scene mention both nouns") {
  const Scene s = two_object_scene();
  Rng rng(12);
  for (int i = 0; i < 300; ++i) {
    const auto words = sample_description(s, rng);
    CHECK(words.size() <= 16);
    CHECK(mentions_any(words, shape_words(Shape::Cube)));
    CHECK(mentions_any(words, shape_words(Shape::Sphere)));
  }
}

TEST_CASE("references of one scene differ in wording") {
  for (const auto& r : generate_corpus(11, 50, 5)) {
    const std::set<std::string> distinct(r.refs.begin(), r.refs.end());
    CHECK(distinct.size() >= 2);
  }
}

TEST_CASE("render_feature: one-hot blocks, padding, jitter and determinism") {
  const Scene a = two_object_scene();
  Scene b = a;
  b.objects[0].color = Color::Yellow;
  b.id = make_scene_id(b, 1);
  const FeatureVector fa = render_feature(a);
  const FeatureVector fb = render_feature(b);
  CHECK(fa.size() == kDefaultFeatureDim);
  CHECK(fa == render_feature(a));

  // The color block of object slot 0 sits at [4, 9).
  bool differs = false;
  for (std::size_t k = 4; k < 9; ++k) differs |= std::abs(fa.values[k] - fb.values[k]) > 0.5;
  CHECK(differs);

  for (std::size_t k = kAttributeWidth; k < fa.size(); ++k) CHECK(std::abs(fa.values[k]) <= 0.01);
  for (std::size_t k = 0; k < kAttributeWidth; ++k) {
    const double v = fa.values[k];
    CHECK_UNARY(std::abs(v) <= 0.01 || std::abs(v - 1.0) <= 0.01);
  }
  CHECK_THROWS_AS(render_feature(a, 32), ShapeError);
}

TEST_CASE("distinct scenes have distinct feature vectors") {
  const auto corpus = generate_corpus(21, 400, 5);
  std::set<std::vector<long>> seen;
  for (const auto& r : corpus) {
    std::vector<long> key;
    for (double v : r.feature.values) key.push_back(std::lround(v));
    CHECK(seen.insert(key).second);
  }
}

TEST_CASE("mutate_one_attribute changes exactly one attribute") {
  Rng rng(8);
  for (const auto& r : generate_corpus(4, 100, 5)) {
    const Scene m = mutate_one_attribute(*r.scene, rng, 4);
    CHECK_NOTHROW(validate_scene(m));
    REQUIRE(m.objects.size() == r.scene->objects.size());
    int changes = m.background != r.scene->background ? 1 : 0;
    for (std::size_t i = 0; i < m.objects.size(); ++i) {
      changes += m.objects[i].shape != r.scene->objects[i].shape;
      changes += m.objects[i].color != r.scene->objects[i].color;
      changes += m.objects[i].size != r.scene->objects[i].size;
    }
    CHECK(changes == 1);
    CHECK(m.relation == r.scene->relation);
    CHECK(m.id != r.scene->id);
  }
}

TEST_CASE("normalization and encoding follow the tokenizer rules") {
  const Vocabulary v = Vocabulary::build({{"a", "red", "cube"}}, 1);
  const Sentence s = encode_sentence("A Red cube.", v);
  CHECK(s.tokens == std::vector<TokenId>{v.id("a"), v.id("red"), v.id("cube"), Vocabulary::kEnd});
  CHECK_FALSE(s.truncated);

  const Sentence unk = encode_sentence("a green cube", v);
  CHECK(unk.tokens[1] == Vocabulary::kUnk);

  std::string long_text;
  for (int i = 0; i < 20; ++i) long_text += "a ";
  const Sentence t = encode_sentence(long_text, v);
  CHECK(t.tokens.size() == 17);
  CHECK(t.tokens.back() == Vocabulary::kEnd);
  CHECK(t.truncated);

  CHECK(normalize_text("It's 3 o'clock, OK?") == std::vector<std::string>{"its", "oclock", "ok"});
}

TEST_CASE("vocabulary specials, threshold and min_count=1") {
  std::vector<std::vector<std::string>> sents;
  for (int i = 0; i < 4; ++i) sents.push_back({"a", "pyramid"});
  sents.push_back({"a", "cube"});
  const Vocabulary v = Vocabulary::build(sents, 5);
  CHECK(v.token(Vocabulary::kEnd) == "<end>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.contains("a"));
  CHECK_FALSE(v.contains("pyramid"));
  CHECK(v.id("pyramid") == Vocabulary::kUnk);
  CHECK(v.size() == 4);
  CHECK(v.extended_size() == 3);

  const Vocabulary all = Vocabulary::build(sents, 1);
  CHECK(all.size() == 3 + 3);
  for (TokenId id = 3; id < all.size(); ++id) CHECK(all.count(id) >= 1);
}

TEST_CASE("vocabulary save/load round-trips") {
  const auto corpus = generate_corpus(7, 60, 5);
  const Vocabulary v = build_vocabulary(corpus, 2);
  const auto p = temp_file("vocab.txt");
  v.save(p);
  const Vocabulary back = Vocabulary::load(p);
  CHECK(back == v);
  CHECK(back.hash() == v.hash());
  std::filesystem::remove(p);
}

TEST_CASE("default corpus: every terminal kept, counts recounted independently") {
  const auto corpus = generate_corpus(7, 2000, 5);
  const Vocabulary v = build_vocabulary(corpus);

  std::map<std::string, std::size_t> counts;
  for (const auto& r : corpus) {
    if (r.split != Split::Train) continue;
    for (const auto& ref : r.refs) {
      std::string word;
      for (char c : ref + " ") {
        if (c == ' ') {
          if (!word.empty()) ++counts[word];
          word.clear();
        } else {
          word += c;
        }
      }
    }
  }
  CHECK(v.size() == counts.size() + 3);
  for (const auto& [w, k] : counts) {
    CHECK(k >= 5);
    CHECK(v.contains(w));
    CHECK(v.count(v.id(w)) == k);
  }
  for (const auto& t : grammar_terminals()) {
    CHECK_MESSAGE(v.contains(t), t);
    CHECK(v.id(t) != Vocabulary::kUnk);
  }

  for (const auto& r : corpus) {
    for (const auto& ref : r.refs) CHECK_FALSE(encode_sentence(ref, v).truncated);
  }
}

TEST_CASE("splits are disjoint, cover the corpus and are roughly 80/10/10") {
  const auto corpus = generate_corpus(7, 2000, 5);
  std::map<Split, std::set<std::string>> by_split;
  for (const auto& r : corpus) {
    CHECK(r.split == split_for_id(r.id));
    by_split[r.split].insert(r.id);
  }
  std::size_t total = 0;
  for (const auto& [s, ids] : by_split) total += ids.size();
  CHECK(total == corpus.size());
  CHECK(by_split[Split::Train].size() > 1500);
  CHECK(by_split[Split::Val].size() > 120);
  CHECK(by_split[Split::Test].size() > 120);

  const EncodedCorpus enc = EncodedCorpus::build(corpus);
  CHECK(enc.train.size() == by_split[Split::Train].size());
  CHECK(enc.val.size() == by_split[Split::Val].size());
  CHECK(enc.test.size() == by_split[Split::Test].size());
}

TEST_CASE("sample_mismatched on two records returns the other record's references") {
  std::vector<CorpusRecord> recs(2);
  recs[0].refs = {"a", "b", "c", "d", "e"};
  recs[1].refs = {"f", "g", "h", "i", "j"};
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const std::string& s = sample_mismatched(std::span<const CorpusRecord>(recs), 0, rng);
    CHECK(std::find(recs[1].refs.begin(), recs[1].refs.end(), s) != recs[1].refs.end());
  }
  std::vector<CorpusRecord> one(1);
  one[0].refs = recs[0].refs;
  CHECK_THROWS_AS(sample_mismatched(std::span<const CorpusRecord>(one), 0, rng),
                  std::invalid_argument);
}

TEST_CASE("sample_mismatched is uniform over foreign references (3 sigma)") {
  std::vector<CorpusRecord> recs(3);
  recs[0].refs = {"x0", "x1", "x2", "x3", "x4"};
  recs[1].refs = {"a0", "a1", "a2", "a3", "a4"};
  recs[2].refs = {"b0", "b1", "b2", "b3", "b4", "b5"};
  Rng rng(7);
  const int n = 100000;
  std::map<std::string, int> freq;
  for (int i = 0; i < n; ++i) ++freq[sample_mismatched(std::span<const CorpusRecord>(recs), 0, rng)];
  CHECK(freq.size() == 11);
  const double p = 1.0 / 11.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  double chi2 = 0.0;
  for (const auto& [s, k] : freq) {
    CHECK(s[0] != 'x');
    CHECK(std::abs(k - n * p) < 3 * sigma);
    chi2 += (k - n * p) * (k - n * p) / (n * p);
  }
  // 99.9th percentile of chi-square with 10 degrees of freedom.
  CHECK(chi2 < 29.59);
}

TEST_CASE("dataset round trip and validation errors") {
  const auto corpus = generate_corpus(7, 20, 5);
  const auto p = temp_file("rt.jsonl");
  save_dataset(p, corpus);
  CHECK(load_dataset(p) == corpus);

  CorpusRecord bad = corpus[0];
  bad.refs.pop_back();
  {
    std::ofstream out(p);
    out << dataset_line(corpus[1]) << "\n" << dataset_line(bad) << "\n";
  }
  CHECK_THROWS_AS(load_dataset(p), DatasetError);

  CorpusRecord short_feature = corpus[2];
  short_feature.feature.values.resize(10);
  {
    std::ofstream out(p);
    out << dataset_line(short_feature) << "\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains(short_feature.id.c_str()), ShapeError);

  {
    std::ofstream out(p);
    out << dataset_line(corpus[0]) << "\n{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains(":2:"), DatasetError);
  std::filesystem::remove(p);
}
