#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tmlm {

/// Dense row-major float matrix. Linear maps are stored as [out x in], so a
/// projection of `x` is `matvec(w, x)`.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Appends a row. A 0x0 matrix adopts the row's width.
  void append_row(std::span<const float> values);
  void set_row(std::size_t r, std::span<const float> values);
  void pop_row();
  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// y = w * x for w stored [out x in].
std::vector<float> matvec(const Matrix& w, std::span<const float> x);

/// Softmax of `scale * row` for every row. With `causal_mask_from = o`, row i
/// may only see columns j <= o + i; the rest come out exactly 0.
Matrix softmax_rows(const Matrix& m, float scale, std::optional<std::size_t> causal_mask_from = std::nullopt);

/// In-place softmax of `scale * v` with max subtraction.
void softmax_inplace(std::span<float> v, float scale);

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps);

/// Rotates interleaved pairs (v[2i], v[2i+1]) by position * theta_base^(-2i/d).
std::vector<float> rope_apply(std::span<const float> v, std::size_t position, float theta_base);
void rope_apply_inplace(std::span<float> v, std::size_t position, float theta_base);

float silu(float z);

/// w_down * (silu(w_gate * x) .* (w_up * x))
std::vector<float> swiglu(std::span<const float> x, const Matrix& w_gate, const Matrix& w_up, const Matrix& w_down);

void add_inplace(std::span<float> acc, std::span<const float> x);
float dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> x);
bool all_finite(std::span<const float> x);

}  // namespace tmlm
