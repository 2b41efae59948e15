#include "capgan/lstm.hpp"

#include <cmath>
#include <string>

namespace capgan {

LstmState lstm_step(const LstmState& state, std::span<const double> input, const Matrix& w,
                    std::span<const double> b, LstmCache* cache) {
  const std::size_t h = state.hidden.size();
  check_shape(state.cell.size() == h, "lstm: hidden and cell dimensions differ");
  check_shape(w.rows() == 4 * h, "lstm: weight rows " + std::to_string(w.rows()) +
                                     " != 4 x hidden " + std::to_string(h));
  check_shape(w.cols() == input.size() + h,
              "lstm: weight cols " + std::to_string(w.cols()) + " != input " +
                  std::to_string(input.size()) + " + hidden " + std::to_string(h));
  check_shape(b.size() == 4 * h, "lstm: bias length");

  Vector x(input.begin(), input.end());
  x.insert(x.end(), state.hidden.begin(), state.hidden.end());

  Vector gates(b.begin(), b.end());
  gemv_acc(w, x, gates);
  for (std::size_t k = 0; k < h; ++k) {
    gates[k] = sigmoid(gates[k]);
    gates[h + k] = sigmoid(gates[h + k]);
    gates[2 * h + k] = std::tanh(gates[2 * h + k]);
    gates[3 * h + k] = sigmoid(gates[3 * h + k]);
  }

  LstmState next{Vector(h), Vector(h), state.step + 1};
  Vector tanh_cell(h);
  for (std::size_t k = 0; k < h; ++k) {
    next.cell[k] = gates[h + k] * state.cell[k] + gates[k] * gates[2 * h + k];
    tanh_cell[k] = std::tanh(next.cell[k]);
    next.hidden[k] = gates[3 * h + k] * tanh_cell[k];
  }

  if (cache) {
    cache->input.assign(input.begin(), input.end());
    cache->h_prev = state.hidden;
    cache->c_prev = state.cell;
    cache->gates = std::move(gates);
    cache->cell = next.cell;
    cache->tanh_cell = std::move(tanh_cell);
  }
  return next;
}

LstmState lstm_step(const LstmState& state, std::span<const double> input,
                    const ParamStore& params, std::string_view prefix) {
  const std::string p(prefix);
  return lstm_step(state, input, params.value(p + ".w"), params.value(p + ".b").data());
}

LstmBackward lstm_step_backward(const LstmCache& cache, std::span<const double> d_hidden,
                                std::span<const double> d_cell, const Matrix& w, Matrix& d_w,
                                Matrix& d_b) {
  const std::size_t h = cache.h_prev.size();
  const std::size_t in = cache.input.size();
  const auto& g = cache.gates;

  Vector d_pre(4 * h);
  LstmBackward out{Vector(in, 0.0), Vector(h, 0.0), Vector(h, 0.0)};
  for (std::size_t k = 0; k < h; ++k) {
    const double i = g[k], f = g[h + k], cand = g[2 * h + k], o = g[3 * h + k];
    const double tc = cache.tanh_cell[k];
    const double dc = d_cell[k] + d_hidden[k] * o * (1.0 - tc * tc);
    const double d_o = d_hidden[k] * tc;
    const double d_i = dc * cand;
    const double d_f = dc * cache.c_prev[k];
    const double d_g = dc * i;
    d_pre[k] = d_i * i * (1.0 - i);
    d_pre[h + k] = d_f * f * (1.0 - f);
    d_pre[2 * h + k] = d_g * (1.0 - cand * cand);
    d_pre[3 * h + k] = d_o * o * (1.0 - o);
    out.d_cell[k] = dc * f;
  }

  Vector x(cache.input);
  x.insert(x.end(), cache.h_prev.begin(), cache.h_prev.end());
  outer_acc(d_w, d_pre, x);
  auto db = d_b.data();
  for (std::size_t k = 0; k < 4 * h; ++k) db[k] += d_pre[k];

  Vector dx(in + h, 0.0);
  gemv_t_acc(w, d_pre, dx);
  std::copy(dx.begin(), dx.begin() + static_cast<std::ptrdiff_t>(in), out.d_input.begin());
  std::copy(dx.begin() + static_cast<std::ptrdiff_t>(in), dx.end(), out.d_hidden.begin());
  return out;
}

}  // namespace capgan
