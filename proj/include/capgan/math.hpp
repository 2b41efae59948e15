#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace capgan {

using Vector = std::vector<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double value);
  bool all_finite() const;
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

/// out += W x
void gemv_acc(const Matrix& w, std::span<const double> x, std::span<double> out);
/// out += W^T y
void gemv_t_acc(const Matrix& w, std::span<const double> y, std::span<double> out);
/// dw += y x^T
void outer_acc(Matrix& dw, std::span<const double> y, std::span<const double> x);

/// Returns W x + b. Throws ShapeError on dimension mismatch.
Vector affine(std::span<const double> x, const Matrix& w, std::span<const double> b);

double sigmoid(double x);
double log_sum_exp(std::span<const double> logits);
/// Max-subtracted softmax; -inf logits receive probability exactly 0.
Vector softmax(std::span<const double> logits);

struct XentResult {
  double loss = 0.0;
  Vector grad_logits;
};

/// -log softmax(logits)[target] and its gradient softmax - onehot(target).
XentResult softmax_xent(std::span<const double> logits, std::size_t target);

void check_shape(bool ok, const std::string& what);

}  // namespace capgan
