#include "capgan/corpus.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

namespace capgan {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Split split_for_id(std::string_view id) {
  const auto bucket = mix64(fnv1a64(id)) % 10;
  if (bucket < 8) return Split::Train;
  return bucket == 8 ? Split::Val : Split::Test;
}

std::vector<CorpusRecord> generate_corpus(std::uint64_t seed, std::size_t n_scenes,
                                          std::size_t refs_per_scene, std::size_t feature_dim) {
  if (refs_per_scene < kMinReferences) {
    throw std::invalid_argument("generate_corpus: refs_per_scene must be >= 5");
  }
  Rng scene_rng = Rng::derive(seed, {0x5ce4e});
  std::unordered_set<std::string> seen;
  std::vector<CorpusRecord> out;
  out.reserve(n_scenes);
  while (out.size() < n_scenes) {
    Scene scene = random_scene(scene_rng, seed);
    if (!seen.insert(scene.id).second) continue;
    CorpusRecord r;
    r.id = scene.id;
    r.feature = render_feature(scene, feature_dim);
    r.split = split_for_id(r.id);

    Rng text_rng = Rng::derive(seed, {0x7e47, fnv1a64(scene.id)});
    std::set<std::string> distinct;
    for (int attempt = 0; r.refs.size() < refs_per_scene; ++attempt) {
      std::string text;
      for (const auto& w : sample_description(scene, text_rng)) {
        if (!text.empty()) text += ' ';
        text += w;
      }
      // Distinct wording per scene; duplicates only if the grammar runs dry.
      if (distinct.insert(text).second || attempt > 200) r.refs.push_back(std::move(text));
    }
    r.scene = std::move(scene);
    out.push_back(std::move(r));
  }
  return out;
}

void validate_record(const CorpusRecord& r, std::size_t feature_dim) {
  if (r.id.empty()) throw DatasetError("record with empty id");
  if (r.feature.size() != feature_dim) {
    throw ShapeError("shape error: record " + r.id + " has feature length " +
                     std::to_string(r.feature.size()) + ", expected " +
                     std::to_string(feature_dim));
  }
  for (double v : r.feature.values) {
    if (!std::isfinite(v)) throw DatasetError("record " + r.id + " has a non-finite feature");
  }
  if (r.refs.size() < kMinReferences) {
    throw DatasetError("record " + r.id + " has " + std::to_string(r.refs.size()) +
                       " references; at least 5 are required");
  }
  if (r.scene) validate_scene(*r.scene);
}

std::string dataset_line(const CorpusRecord& r) {
  json j;
  j["id"] = r.id;
  j["feature"] = r.feature.values;
  j["refs"] = r.refs;
  j["split"] = to_string(r.split);
  if (r.scene) j["scene"] = scene_to_json(*r.scene);
  return j.dump();
}

void save_dataset(const std::filesystem::path& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& r : records) out << dataset_line(r) << '\n';
}

std::vector<CorpusRecord> load_dataset(const std::filesystem::path& path, std::size_t feature_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    CorpusRecord r;
    try {
      const json j = json::parse(line);
      r.id = j.at("id").get<std::string>();
      r.feature.values = j.at("feature").get<std::vector<double>>();
      r.refs = j.at("refs").get<std::vector<std::string>>();
      r.split = parse_split(j.at("split").get<std::string>());
      if (j.contains("scene") && !j.at("scene").is_null()) {
        r.scene = scene_from_json(j.at("scene"));
        r.scene->id = r.id;
      }
    } catch (const std::exception& e) {
      throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": parse error: " +
                         e.what());
    }
    validate_record(r, feature_dim);
    out.push_back(std::move(r));
  }
  return out;
}

Vocabulary build_vocabulary(const std::vector<CorpusRecord>& corpus, std::size_t min_count) {
  std::vector<std::vector<std::string>> sentences;
  for (const auto& r : corpus) {
    if (r.split != Split::Train) continue;
    for (const auto& ref : r.refs) sentences.push_back(normalize_text(ref));
  }
  if (sentences.empty()) throw std::invalid_argument("build_vocabulary: empty training corpus");
  return Vocabulary::build(sentences, min_count);
}

EncodedCorpus EncodedCorpus::encode(const std::vector<CorpusRecord>& records, Vocabulary vocab,
                                    std::size_t t_max) {
  EncodedCorpus c;
  c.vocab = std::move(vocab);
  for (const auto& r : records) {
    EncodedRecord e{r.id, r.scene, r.feature, {}};
    for (const auto& ref : r.refs) e.refs.push_back(encode_sentence(ref, c.vocab, t_max));
    switch (r.split) {
      case Split::Train:
        c.train.push_back(std::move(e));
        break;
      case Split::Val:
        c.val.push_back(std::move(e));
        break;
      case Split::Test:
        c.test.push_back(std::move(e));
        break;
    }
  }
  return c;
}

EncodedCorpus EncodedCorpus::build(const std::vector<CorpusRecord>& records, std::size_t min_count,
                                   std::size_t t_max) {
  return encode(records, build_vocabulary(records, min_count), t_max);
}

const std::vector<EncodedRecord>& EncodedCorpus::split(Split s) const {
  switch (s) {
    case Split::Train:
      return train;
    case Split::Val:
      return val;
    case Split::Test:
      return test;
  }
  return train;
}

}  // namespace capgan
