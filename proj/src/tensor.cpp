#include "tmlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tmlm/error.hpp"

namespace tmlm {

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  Matrix m;
  for (const auto& r : rows) {
    std::vector<float> tmp(r);
    m.append_row(tmp);
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

std::span<float> Matrix::row(std::size_t r) { return std::span<float>(data_).subspan(r * cols_, cols_); }

std::span<const float> Matrix::row(std::size_t r) const {
  return std::span<const float>(data_).subspan(r * cols_, cols_);
}

void Matrix::append_row(std::span<const float> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw ShapeError("cannot append row of width " + std::to_string(values.size()) + " to matrix " +
                     shape_string());
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

void Matrix::set_row(std::size_t r, std::span<const float> values) {
  if (r >= rows_ || values.size() != cols_) {
    throw ShapeError("cannot set row " + std::to_string(r) + " of width " + std::to_string(values.size()) +
                     " in matrix " + shape_string());
  }
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

void Matrix::pop_row() {
  if (rows_ == 0) throw ShapeError("pop_row on empty matrix");
  --rows_;
  data_.resize(rows_ * cols_);
}

std::string Matrix::shape_string() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " * " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const float aik = a(i, k);
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

std::vector<float> matvec(const Matrix& w, std::span<const float> x) {
  if (w.cols() != x.size()) {
    throw ShapeError("matvec shape mismatch: " + w.shape_string() + " * [" + std::to_string(x.size()) + "]");
  }
  std::vector<float> out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = dot(w.row(r), x);
  return out;
}

void softmax_inplace(std::span<float> v, float scale) {
  if (v.empty()) throw NumericError("softmax over an empty row (no attendable positions)");
  if (!(scale > 0.0f)) throw NumericError("softmax scale must be positive");
  float mx = -std::numeric_limits<float>::infinity();
  for (float& x : v) {
    x *= scale;
    mx = std::max(mx, x);
  }
  float sum = 0.0f;
  for (float& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (float& x : v) x /= sum;
}

Matrix softmax_rows(const Matrix& m, float scale, std::optional<std::size_t> causal_mask_from) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::size_t visible = m.cols();
    if (causal_mask_from) visible = std::min(m.cols(), *causal_mask_from + i + 1);
    if (visible == 0) throw NumericError("softmax row " + std::to_string(i) + " has no attendable positions");
    auto src = m.row(i).first(visible);
    auto dst = out.row(i).first(visible);
    std::copy(src.begin(), src.end(), dst.begin());
    softmax_inplace(dst, scale);
  }
  return out;
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps) {
  if (x.size() != gain.size()) {
    throw ShapeError("rms_norm length mismatch: x[" + std::to_string(x.size()) + "] gain[" +
                     std::to_string(gain.size()) + "]");
  }
  if (eps < 0.0f) throw NumericError("rms_norm eps must be non-negative");
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  const float denom = std::sqrt(ss / static_cast<float>(x.size()) + eps);
  if (!(denom > 0.0f)) throw NumericError("rms_norm of a zero vector with eps = 0");
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] / denom);
  return out;
}

void rope_apply_inplace(std::span<float> v, std::size_t position, float theta_base) {
  if (v.size() % 2 != 0) throw ShapeError("rope_apply needs an even length, got " + std::to_string(v.size()));
  const double d = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size() / 2; ++i) {
    const double freq = std::pow(static_cast<double>(theta_base), -2.0 * static_cast<double>(i) / d);
    const double angle = static_cast<double>(position) * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float a = v[2 * i];
    const float b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

std::vector<float> rope_apply(std::span<const float> v, std::size_t position, float theta_base) {
  std::vector<float> out(v.begin(), v.end());
  rope_apply_inplace(out, position, theta_base);
  return out;
}

float silu(float z) { return z / (1.0f + std::exp(-z)); }

std::vector<float> swiglu(std::span<const float> x, const Matrix& w_gate, const Matrix& w_up, const Matrix& w_down) {
  if (w_gate.rows() != w_up.rows() || w_gate.cols() != w_up.cols() || w_down.cols() != w_gate.rows()) {
    throw ShapeError("swiglu shape mismatch: gate " + w_gate.shape_string() + ", up " + w_up.shape_string() +
                     ", down " + w_down.shape_string());
  }
  auto gate = matvec(w_gate, x);
  const auto up = matvec(w_up, x);
  for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = silu(gate[i]) * up[i];
  return matvec(w_down, gate);
}

void add_inplace(std::span<float> acc, std::span<const float> x) {
  if (acc.size() != x.size()) throw ShapeError("add length mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

float dot(std::span<const float> a, std::span<const float> b) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

bool all_finite(std::span<const float> x) {
  return std::all_of(x.begin(), x.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace tmlm
