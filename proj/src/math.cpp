#include "capgan/math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace capgan {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  check_shape(data_.size() == rows * cols, "matrix payload length != rows*cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    check_shape(row.size() == c, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void check_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("shape error: " + what);
}

// Four independent partial sums in a fixed order: deterministic and
// friendlier to the pipeline than a single dependency chain.
double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void gemv_acc(const Matrix& w, std::span<const double> x, std::span<double> out) {
  check_shape(w.cols() == x.size() && w.rows() == out.size(), "gemv dimensions");
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] += dot(w.row(r), x);
}

void gemv_t_acc(const Matrix& w, std::span<const double> y, std::span<double> out) {
  check_shape(w.rows() == y.size() && w.cols() == out.size(), "gemv_t dimensions");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    const auto row = w.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * yr;
  }
}

void outer_acc(Matrix& dw, std::span<const double> y, std::span<const double> x) {
  check_shape(dw.rows() == y.size() && dw.cols() == x.size(), "outer product dimensions");
  for (std::size_t r = 0; r < dw.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    auto row = dw.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += yr * x[c];
  }
}

Vector affine(std::span<const double> x, const Matrix& w, std::span<const double> b) {
  check_shape(w.cols() == x.size(), "affine: W has " + std::to_string(w.cols()) +
                                        " columns but x has length " + std::to_string(x.size()));
  check_shape(w.rows() == b.size(), "affine: W has " + std::to_string(w.rows()) +
                                        " rows but b has length " + std::to_string(b.size()));
  Vector out(b.begin(), b.end());
  gemv_acc(w, x, out);
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sum_exp(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

Vector softmax(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

XentResult softmax_xent(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw std::out_of_range("softmax_xent: target " + std::to_string(target) +
                            " out of range for " + std::to_string(logits.size()) + " logits");
  }
  XentResult result;
  result.loss = log_sum_exp(logits) - logits[target];
  result.grad_logits = softmax(logits);
  result.grad_logits[target] -= 1.0;
  return result;
}

}  // namespace capgan
