#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "capgan/math.hpp"
#include "capgan/rng.hpp"

namespace capgan {

enum class Shape : std::uint8_t { Cube, Sphere, Pyramid, Cylinder };
enum class Color : std::uint8_t { Red, Blue, Green, Yellow, Black };
enum class Size : std::uint8_t { Small, Large };
enum class Relation : std::uint8_t { LeftOf, On, Beside, Behind };
enum class Background : std::uint8_t { Table, Floor, Grass, Sky };

inline constexpr std::size_t kNumShapes = 4;
inline constexpr std::size_t kNumColors = 5;
inline constexpr std::size_t kNumSizes = 2;
inline constexpr std::size_t kNumRelations = 4;
inline constexpr std::size_t kNumBackgrounds = 4;
inline constexpr std::size_t kMaxObjects = 3;

/// Width of the one-hot attribute blocks: three object slots of
/// (shape, color, size), then relation, then background.
inline constexpr std::size_t kAttributeWidth =
    kMaxObjects * (kNumShapes + kNumColors + kNumSizes) + kNumRelations + kNumBackgrounds;
inline constexpr std::size_t kDefaultFeatureDim = 48;
inline constexpr double kFeatureJitter = 0.01;

std::string_view to_string(Shape v);
std::string_view to_string(Color v);
std::string_view to_string(Size v);
std::string_view to_string(Relation v);
std::string_view to_string(Background v);

struct SceneObject {
  Shape shape = Shape::Cube;
  Color color = Color::Red;
  Size size = Size::Small;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

/// Synthetic stand-in for an image: 1-3 objects, a relation between the
/// first two when there are at least two, and a background.
struct Scene {
  std::string id;
  std::vector<SceneObject> objects;
  std::optional<Relation> relation;
  Background background = Background::Table;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Canonical attribute string (excludes the id).
std::string scene_key(const Scene& scene);
/// Deterministic id from attributes and corpus seed.
std::string make_scene_id(const Scene& scene, std::uint64_t seed);
/// Throws std::invalid_argument naming the violated invariant.
void validate_scene(const Scene& scene);

Scene random_scene(Rng& rng, std::uint64_t seed);

/// Copy of `scene` with exactly one attribute changed (an object's shape,
/// color or size, or the background), re-identified under `seed`.
Scene mutate_one_attribute(const Scene& scene, Rng& rng, std::uint64_t seed);

struct FeatureVector {
  Vector values;
  std::size_t size() const { return values.size(); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// One-hot attribute blocks zero-padded to `dim`, plus a per-scene jitter
/// of magnitude kFeatureJitter seeded from the scene id.
FeatureVector render_feature(const Scene& scene, std::size_t dim = kDefaultFeatureDim);

/// Draws one human-like description from the caption grammar. Always
/// mentions every object; at most 16 words.
std::vector<std::string> sample_description(const Scene& scene, Rng& rng);

/// Every terminal word the caption grammar can emit, sorted.
std::vector<std::string> grammar_terminals();
/// Words the grammar may use for an object's shape noun.
std::vector<std::string> shape_words(Shape shape);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

}  // namespace capgan
