#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "capgan/math.hpp"
#include "capgan/rng.hpp"

namespace capgan {

/// Gradient buffers shaped like a ParamStore, indexed by parameter slot.
using GradBuffer = std::vector<Matrix>;

/// Named parameter tensors, each paired with a same-shaped gradient buffer.
///
/// Slots are stable: the i-th added parameter keeps index i, so models
/// address their weights by slot and serialization order is insertion order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return values_.size(); }
  std::size_t slot(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t slot) const { return names_[slot]; }

  Matrix& value(std::size_t slot) { return values_[slot]; }
  const Matrix& value(std::size_t slot) const { return values_[slot]; }
  Matrix& value(std::string_view name) { return values_[slot(name)]; }
  const Matrix& value(std::string_view name) const { return values_[slot(name)]; }

  GradBuffer& grads() { return grads_; }
  const GradBuffer& grads() const { return grads_; }
  Matrix& grad(std::size_t slot) { return grads_[slot]; }
  const Matrix& grad(std::size_t slot) const { return grads_[slot]; }

  /// Fresh zero buffer with this store's shapes (per-worker accumulation).
  GradBuffer zero_grad_buffer() const;
  void zero_grad();
  void add_to_grads(const GradBuffer& other, double scale = 1.0);

  std::size_t scalar_count() const;
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  /// Every value uniform in [-scale, scale], drawn in slot order.
  void init_uniform(Rng& rng, double scale);

  bool all_finite() const;
  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::uint64_t seed_;
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  GradBuffer grads_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

double grad_norm(const GradBuffer& grads);
void zero(GradBuffer& grads);

}  // namespace capgan
