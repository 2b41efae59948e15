#include "capgan/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace capgan {

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  const std::size_t s = values_.size();
  index_.emplace(name, s);
  names_.push_back(std::move(name));
  values_.emplace_back(rows, cols);
  grads_.emplace_back(rows, cols);
  return s;
}

std::size_t ParamStore::slot(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

GradBuffer ParamStore::zero_grad_buffer() const {
  GradBuffer out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.emplace_back(v.rows(), v.cols());
  return out;
}

void ParamStore::zero_grad() { zero(grads_); }

void ParamStore::add_to_grads(const GradBuffer& other, double scale) {
  check_shape(other.size() == grads_.size(), "gradient buffer slot count");
  for (std::size_t s = 0; s < grads_.size(); ++s) {
    check_shape(other[s].same_shape(grads_[s]), "gradient buffer shape for " + names_[s]);
    auto dst = grads_[s].data();
    const auto src = other[s].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  }
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

void ParamStore::init_uniform(Rng& rng, double scale) {
  for (auto& v : values_) {
    for (double& x : v.data()) x = rng.uniform(-scale, scale);
  }
}

bool ParamStore::all_finite() const {
  for (const auto& v : values_) {
    if (!v.all_finite()) return false;
  }
  return true;
}

double grad_norm(const GradBuffer& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) s += v * v;
  }
  return std::sqrt(s);
}

void zero(GradBuffer& grads) {
  for (auto& g : grads) g.fill(0.0);
}

}  // namespace capgan
