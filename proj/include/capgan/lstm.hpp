#pragma once

#include <span>
#include <string_view>

#include "capgan/math.hpp"
#include "capgan/param_store.hpp"

namespace capgan {

/// Latent state s_t = (h_t, c_t) of an LSTM.
struct LstmState {
  Vector hidden;
  Vector cell;
  std::size_t step = 0;

  static LstmState zeros(std::size_t dim) { return {Vector(dim, 0.0), Vector(dim, 0.0), 0}; }
};

/// Forward quantities kept for the backward pass of one step.
struct LstmCache {
  Vector input;
  Vector h_prev;
  Vector c_prev;
  Vector gates;  // [i | f | g | o] after their nonlinearities
  Vector cell;
  Vector tanh_cell;
};

/// Standard non-peephole LSTM cell.
///
/// `w` is 4H x (I + H) with input columns first, `b` has 4H entries; the row
/// blocks are the input, forget, candidate and output gates in that order.
LstmState lstm_step(const LstmState& state, std::span<const double> input, const Matrix& w,
                    std::span<const double> b, LstmCache* cache = nullptr);

/// Same as above with weights `<prefix>.w` and `<prefix>.b` from a store.
LstmState lstm_step(const LstmState& state, std::span<const double> input,
                    const ParamStore& params, std::string_view prefix = "lstm");

struct LstmBackward {
  Vector d_input;
  Vector d_hidden;  // w.r.t. h_{t-1}
  Vector d_cell;    // w.r.t. c_{t-1}
};

/// Accumulates parameter gradients into d_w / d_b and returns the gradients
/// flowing to the step's inputs.
LstmBackward lstm_step_backward(const LstmCache& cache, std::span<const double> d_hidden,
                                std::span<const double> d_cell, const Matrix& w, Matrix& d_w,
                                Matrix& d_b);

}  // namespace capgan
