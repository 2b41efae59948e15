#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace capgan {

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

/// 64-bit FNV-1a. Stable content hash for ids, vocabularies and checkpoints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Seedable generator over std::mt19937_64.
///
/// The engine output sequence is fixed by the standard; everything derived
/// from it (uniforms, normals, categorical draws, shuffles) is computed here
/// rather than through <random> distributions, whose algorithms are
/// implementation-defined. Runs are therefore bit-reproducible across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)) {}

  /// Independent stream for (seed, stream...) without consuming this one.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    return Rng(mix_seed(seed, stream));
  }

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  /// Standard normal via Box-Muller.
  double normal();
  /// Index drawn from unnormalized nonnegative weights.
  std::size_t categorical(std::span<const double> weights);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace capgan
