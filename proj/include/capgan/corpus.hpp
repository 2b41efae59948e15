#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "capgan/rng.hpp"
#include "capgan/scene.hpp"
#include "capgan/vocabulary.hpp"

namespace capgan {

enum class Split : std::uint8_t { Train, Val, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);
/// 80/10/10 split by a hash of the record id.
Split split_for_id(std::string_view id);

inline constexpr std::size_t kMinReferences = 5;

struct CorpusRecord {
  std::string id;
  std::optional<Scene> scene;
  FeatureVector feature;
  std::vector<std::string> refs;
  Split split = Split::Train;

  friend bool operator==(const CorpusRecord&, const CorpusRecord&) = default;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pure function of its arguments: distinct random scenes, each with
/// `refs_per_scene` mutually distinct grammar descriptions.
std::vector<CorpusRecord> generate_corpus(std::uint64_t seed, std::size_t n_scenes,
                                          std::size_t refs_per_scene,
                                          std::size_t feature_dim = kDefaultFeatureDim);

/// Throws DatasetError / ShapeError naming the record and the invariant.
void validate_record(const CorpusRecord& r, std::size_t feature_dim);

/// Dataset JSONL, one record per line:
/// {"feature": [...], "id": "...", "refs": [...], "scene": {...}, "split": "train"}
void save_dataset(const std::filesystem::path& path, const std::vector<CorpusRecord>& records);
std::vector<CorpusRecord> load_dataset(const std::filesystem::path& path,
                                       std::size_t feature_dim = kDefaultFeatureDim);
std::string dataset_line(const CorpusRecord& r);

/// Vocabulary over the train split's references.
Vocabulary build_vocabulary(const std::vector<CorpusRecord>& corpus, std::size_t min_count = 5);

/// A reference drawn uniformly from all references of records other than
/// `index`. Works for any record type exposing a `refs` vector.
template <class Record>
const auto& sample_mismatched(std::span<const Record> corpus, std::size_t index, Rng& rng) {
  if (corpus.size() < 2) {
    throw std::invalid_argument("sample_mismatched: corpus needs at least two records");
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (i != index) total += corpus[i].refs.size();
  }
  if (total == 0) throw std::invalid_argument("sample_mismatched: no foreign references");
  std::size_t k = rng.below(total);
  for (std::size_t i = 0;; ++i) {
    if (i == index) continue;
    if (k < corpus[i].refs.size()) return corpus[i].refs[k];
    k -= corpus[i].refs.size();
  }
}

struct EncodedRecord {
  std::string id;
  std::optional<Scene> scene;
  FeatureVector feature;
  std::vector<Sentence> refs;
};

/// Records of one corpus encoded under the vocabulary of its train split.
struct EncodedCorpus {
  Vocabulary vocab;
  std::vector<EncodedRecord> train;
  std::vector<EncodedRecord> val;
  std::vector<EncodedRecord> test;

  static EncodedCorpus build(const std::vector<CorpusRecord>& records, std::size_t min_count = 5,
                             std::size_t t_max = 16);
  static EncodedCorpus encode(const std::vector<CorpusRecord>& records, Vocabulary vocab,
                              std::size_t t_max = 16);
  const std::vector<EncodedRecord>& split(Split s) const;
};

}  // namespace capgan
