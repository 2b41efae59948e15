#include "capgan/scene.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace capgan {

namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"cube", "sphere", "pyramid",
                                                                  "cylinder"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "blue", "green",
                                                                  "yellow", "black"};
constexpr std::array<std::string_view, kNumSizes> kSizeNames = {"small", "large"};
constexpr std::array<std::string_view, kNumRelations> kRelationNames = {"left-of", "on",
                                                                        "beside", "behind"};
constexpr std::array<std::string_view, kNumBackgrounds> kBackgroundNames = {"table", "floor",
                                                                            "grass", "sky"};

template <std::size_t N>
std::size_t parse_name(const std::array<std::string_view, N>& names, const std::string& s,
                       const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return i;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

// A weighted pool of alternative phrasings, each a run of words.
struct Variant {
  double weight;
  std::vector<std::string_view> words;
};
using Pool = std::vector<Variant>;

const Pool& size_pool(Size s) {
  static const Pool small = {{0.6, {"small"}}, {0.4, {"little"}}};
  static const Pool large = {{0.6, {"large"}}, {0.4, {"big"}}};
  return s == Size::Small ? small : large;
}

const Pool& noun_pool(Shape s) {
  static const std::array<Pool, kNumShapes> pools = {
      Pool{{0.6, {"cube"}}, {0.25, {"box"}}, {0.15, {"block"}}},
      Pool{{0.65, {"sphere"}}, {0.35, {"ball"}}},
      Pool{{1.0, {"pyramid"}}},
      Pool{{0.7, {"cylinder"}}, {0.3, {"tube"}}},
  };
  return pools[static_cast<std::size_t>(s)];
}

const Pool& relation_pool(Relation r) {
  static const std::array<Pool, kNumRelations> pools = {
      Pool{{0.7, {"to", "the", "left", "of"}}, {0.3, {"left", "of"}}},
      Pool{{0.6, {"on", "top", "of"}}, {0.4, {"on"}}},
      Pool{{0.55, {"beside"}}, {0.45, {"next", "to"}}},
      Pool{{1.0, {"behind"}}},
  };
  return pools[static_cast<std::size_t>(r)];
}

const Pool& background_pool(Background b) {
  static const std::array<Pool, kNumBackgrounds> pools = {
      Pool{{0.7, {"on", "the", "table"}}, {0.3, {"on", "the", "desk"}}},
      Pool{{0.6, {"on", "the", "floor"}}, {0.4, {"on", "the", "ground"}}},
      Pool{{0.7, {"on", "the", "grass"}}, {0.3, {"on", "the", "lawn"}}},
      Pool{{1.0, {"under", "the", "sky"}}},
  };
  return pools[static_cast<std::size_t>(b)];
}

// Sentence frames around the object phrase (OBJ) and background phrase (BG).
enum class Frame { Plain, ThereIs, PictureOf, CanBeSeen };
constexpr std::array<double, 4> kFrameWeights = {0.4, 0.25, 0.2, 0.15};

constexpr double kSizeMention = 0.25;
constexpr double kColorMention = 0.3;
constexpr std::size_t kMaxWords = 16;

const Variant& pick(const Pool& pool, Rng& rng) {
  std::vector<double> w;
  w.reserve(pool.size());
  for (const auto& v : pool) w.push_back(v.weight);
  return pool[rng.categorical(w)];
}

void append(std::vector<std::string>& out, const Variant& v) {
  for (auto w : v.words) out.emplace_back(w);
}

void append_object(std::vector<std::string>& out, const SceneObject& obj, Rng& rng,
                   bool bare) {
  out.emplace_back("a");
  if (!bare && rng.uniform() < kSizeMention) append(out, pick(size_pool(obj.size), rng));
  if (!bare && rng.uniform() < kColorMention) out.emplace_back(kColorNames[static_cast<std::size_t>(obj.color)]);
  append(out, bare ? noun_pool(obj.shape).front() : pick(noun_pool(obj.shape), rng));
}

std::vector<std::string> draw(const Scene& scene, Rng& rng, bool bare) {
  std::vector<std::string> obj;
  append_object(obj, scene.objects[0], rng, bare);
  if (scene.objects.size() >= 2) {
    const Pool& rel = relation_pool(*scene.relation);
    append(obj, bare ? rel.back() : pick(rel, rng));
    append_object(obj, scene.objects[1], rng, bare);
  }
  if (scene.objects.size() == 3) {
    obj.emplace_back("and");
    append_object(obj, scene.objects[2], rng, bare);
  }
  std::vector<std::string> bg;
  append(bg, bare ? background_pool(scene.background).front()
                  : pick(background_pool(scene.background), rng));

  const Frame frame = bare ? Frame::Plain : static_cast<Frame>(rng.categorical(kFrameWeights));
  std::vector<std::string> out;
  switch (frame) {
    case Frame::Plain:
      break;
    case Frame::ThereIs:
      out = {"there", "is"};
      break;
    case Frame::PictureOf:
      out = {"a", "picture", "of"};
      break;
    case Frame::CanBeSeen:
      break;
  }
  out.insert(out.end(), obj.begin(), obj.end());
  if (frame == Frame::CanBeSeen) {
    for (const char* w : {"can", "be", "seen"}) out.emplace_back(w);
  }
  out.insert(out.end(), bg.begin(), bg.end());
  return out;
}

}  // namespace

std::string_view to_string(Shape v) { return kShapeNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Color v) { return kColorNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Size v) { return kSizeNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Relation v) { return kRelationNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Background v) { return kBackgroundNames[static_cast<std::size_t>(v)]; }

std::string scene_key(const Scene& scene) {
  std::ostringstream os;
  for (const auto& o : scene.objects) {
    os << to_string(o.size) << ' ' << to_string(o.color) << ' ' << to_string(o.shape) << ';';
  }
  os << (scene.relation ? to_string(*scene.relation) : "none") << ';'
     << to_string(scene.background);
  return os.str();
}

std::string make_scene_id(const Scene& scene, std::uint64_t seed) {
  const std::uint64_t h = fnv1a64(scene_key(scene) + "|" + std::to_string(seed));
  return "sc" + hex64(h).substr(0, 12);
}

void validate_scene(const Scene& scene) {
  if (scene.objects.empty()) throw std::invalid_argument("scene invariant: at least one object");
  if (scene.objects.size() > kMaxObjects) {
    throw std::invalid_argument("scene invariant: at most 3 objects");
  }
  if (scene.relation.has_value() != (scene.objects.size() >= 2)) {
    throw std::invalid_argument("scene invariant: relation present iff >= 2 objects");
  }
}

Scene random_scene(Rng& rng, std::uint64_t seed) {
  static constexpr std::array<double, 3> kCountWeights = {0.35, 0.45, 0.2};
  Scene s;
  const std::size_t n = rng.categorical(kCountWeights) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = static_cast<Shape>(rng.below(kNumShapes));
    o.color = static_cast<Color>(rng.below(kNumColors));
    o.size = static_cast<Size>(rng.below(kNumSizes));
    s.objects.push_back(o);
  }
  if (n >= 2) s.relation = static_cast<Relation>(rng.below(kNumRelations));
  s.background = static_cast<Background>(rng.below(kNumBackgrounds));
  s.id = make_scene_id(s, seed);
  return s;
}

Scene mutate_one_attribute(const Scene& scene, Rng& rng, std::uint64_t seed) {
  Scene out = scene;
  // Attribute slots: 3 per object plus the background.
  const std::size_t slot = rng.below(3 * scene.objects.size() + 1);
  auto shift = [&rng](std::size_t current, std::size_t n) {
    return (current + 1 + rng.below(n - 1)) % n;
  };
  if (slot == 3 * scene.objects.size()) {
    out.background = static_cast<Background>(
        shift(static_cast<std::size_t>(scene.background), kNumBackgrounds));
  } else {
    auto& o = out.objects[slot / 3];
    switch (slot % 3) {
      case 0:
        o.shape = static_cast<Shape>(shift(static_cast<std::size_t>(o.shape), kNumShapes));
        break;
      case 1:
        o.color = static_cast<Color>(shift(static_cast<std::size_t>(o.color), kNumColors));
        break;
      default:
        o.size = static_cast<Size>(shift(static_cast<std::size_t>(o.size), kNumSizes));
        break;
    }
  }
  out.id = make_scene_id(out, seed);
  return out;
}

FeatureVector render_feature(const Scene& scene, std::size_t dim) {
  validate_scene(scene);
  check_shape(dim >= kAttributeWidth, "feature dimension " + std::to_string(dim) +
                                          " cannot hold " + std::to_string(kAttributeWidth) +
                                          " attribute slots");
  FeatureVector f{Vector(dim, 0.0)};
  constexpr std::size_t slot_width = kNumShapes + kNumColors + kNumSizes;
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& o = scene.objects[k];
    const std::size_t base = k * slot_width;
    f.values[base + static_cast<std::size_t>(o.shape)] = 1.0;
    f.values[base + kNumShapes + static_cast<std::size_t>(o.color)] = 1.0;
    f.values[base + kNumShapes + kNumColors + static_cast<std::size_t>(o.size)] = 1.0;
  }
  constexpr std::size_t rel_base = kMaxObjects * slot_width;
  if (scene.relation) f.values[rel_base + static_cast<std::size_t>(*scene.relation)] = 1.0;
  f.values[rel_base + kNumRelations + static_cast<std::size_t>(scene.background)] = 1.0;

  Rng jitter(fnv1a64(scene.id.empty() ? scene_key(scene) : scene.id));
  for (double& v : f.values) v += jitter.uniform(-kFeatureJitter, kFeatureJitter);
  return f;
}

std::vector<std::string> sample_description(const Scene& scene, Rng& rng) {
  validate_scene(scene);
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto words = draw(scene, rng, false);
    if (words.size() <= kMaxWords) return words;
  }
  return draw(scene, rng, true);
}

std::vector<std::string> grammar_terminals() {
  std::set<std::string> words = {"a", "there", "is", "picture", "of", "and", "can", "be", "seen"};
  auto add_pool = [&words](const Pool& p) {
    for (const auto& v : p) {
      for (auto w : v.words) words.emplace(w);
    }
  };
  for (std::size_t i = 0; i < kNumShapes; ++i) add_pool(noun_pool(static_cast<Shape>(i)));
  for (std::size_t i = 0; i < kNumSizes; ++i) add_pool(size_pool(static_cast<Size>(i)));
  for (std::size_t i = 0; i < kNumRelations; ++i) add_pool(relation_pool(static_cast<Relation>(i)));
  for (std::size_t i = 0; i < kNumBackgrounds; ++i) {
    add_pool(background_pool(static_cast<Background>(i)));
  }
  for (auto c : kColorNames) words.emplace(c);
  return {words.begin(), words.end()};
}

std::vector<std::string> shape_words(Shape shape) {
  std::vector<std::string> out;
  for (const auto& v : noun_pool(shape)) out.emplace_back(v.words.front());
  return out;
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    objs.push_back({{"shape", to_string(o.shape)},
                    {"color", to_string(o.color)},
                    {"size", to_string(o.size)}});
  }
  nlohmann::json j = {{"objects", objs}, {"background", to_string(scene.background)}};
  j["relation"] = scene.relation ? nlohmann::json(to_string(*scene.relation)) : nlohmann::json();
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.shape = static_cast<Shape>(parse_name(kShapeNames, o.at("shape").get<std::string>(), "shape"));
    obj.color = static_cast<Color>(parse_name(kColorNames, o.at("color").get<std::string>(), "color"));
    obj.size = static_cast<Size>(parse_name(kSizeNames, o.at("size").get<std::string>(), "size"));
    s.objects.push_back(obj);
  }
  if (j.contains("relation") && !j.at("relation").is_null()) {
    s.relation = static_cast<Relation>(
        parse_name(kRelationNames, j.at("relation").get<std::string>(), "relation"));
  }
  s.background = static_cast<Background>(
      parse_name(kBackgroundNames, j.at("background").get<std::string>(), "background"));
  validate_scene(s);
  return s;
}

}  // namespace capgan
