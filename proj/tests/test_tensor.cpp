#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tmlm/error.hpp"
#include "tmlm/rng.hpp"
#include "tmlm/tensor.hpp"

using namespace tmlm;

TEST_CASE("matmul") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(Matrix::identity(2), a) == a);
  CHECK(matmul(a, Matrix::from_rows({{5, 6}, {7, 8}})) == Matrix::from_rows({{19, 22}, {43, 50}}));

  const Matrix empty = matmul(Matrix(1, 0), Matrix(0, 3));
  CHECK(empty.rows() == 1);
  CHECK(empty.cols() == 3);
  for (float v : empty.data()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matvec uses [out x in] layout") {
  const Matrix w = Matrix::from_rows({{1, 0, 2}, {0, 1, 0}});
  const std::vector<float> x{1, 2, 3};
  CHECK(matvec(w, x) == std::vector<float>{7, 2});
}

TEST_CASE("softmax_rows") {
  const Matrix half = softmax_rows(Matrix::from_rows({{0, 0}}), 1.0f);
  CHECK(half(0, 0) == doctest::Approx(0.5));
  CHECK(half(0, 1) == doctest::Approx(0.5));

  const Matrix p = softmax_rows(Matrix::from_rows({{std::log(2.0f), 0}}), 1.0f);
  CHECK(std::abs(p(0, 0) - 2.0 / 3.0) <= 1e-6);
  CHECK(std::abs(p(0, 1) - 1.0 / 3.0) <= 1e-6);

  Xoshiro256 rng(11);
  for (int t = 0; t < 100; ++t) {
    const float a = static_cast<float>(rng.normal()), b = static_cast<float>(rng.normal());
    const float c = static_cast<float>(rng.normal() * 10);
    const Matrix base = softmax_rows(Matrix::from_rows({{a, b}}), 1.0f);
    const Matrix shifted = softmax_rows(Matrix::from_rows({{c + a, c + b}}), 1.0f);
    CHECK(std::abs(base(0, 0) - shifted(0, 0)) <= 1e-5);
  }

  const Matrix masked = softmax_rows(Matrix::from_rows({{1, 2, 3}, {1, 2, 3}}), 1.0f, 0);
  CHECK(masked(0, 0) == 1.0f);
  CHECK(masked(0, 1) == 0.0f);
  CHECK(masked(0, 2) == 0.0f);
  CHECK(masked(1, 2) == 0.0f);
  CHECK(masked(1, 0) + masked(1, 1) == doctest::Approx(1.0));

  std::vector<float> empty;
  CHECK_THROWS_AS(softmax_inplace(empty, 1.0f), NumericError);
  std::vector<float> one{1.0f};
  CHECK_THROWS_AS(softmax_inplace(one, 0.0f), NumericError);
}

TEST_CASE("rms_norm") {
  const std::vector<float> ones{1, 1};
  CHECK(rms_norm(std::vector<float>{2, 2}, ones, 0.0f) == std::vector<float>{1, 1});
  const auto y = rms_norm(std::vector<float>{3, 4}, ones, 0.0f);
  CHECK(std::abs(y[0] - 0.848528) <= 1e-5);
  CHECK(std::abs(y[1] - 1.131371) <= 1e-5);
  CHECK(rms_norm(std::vector<float>{0, 0}, ones, 1.0f) == std::vector<float>{0, 0});
  CHECK_THROWS_AS(rms_norm(std::vector<float>{0, 0}, ones, 0.0f), NumericError);
  CHECK_THROWS_AS(rms_norm(std::vector<float>{1, 2, 3}, ones, 0.0f), ShapeError);
}

TEST_CASE("rope_apply") {
  Xoshiro256 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<float> v(16);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    CHECK(rope_apply(v, 0, 10000.0f) == v);
    const auto r = rope_apply(v, rng.below(4096), 10000.0f);
    CHECK(std::abs(l2_norm(r) - l2_norm(v)) <= 1e-6 * std::max(1.0, l2_norm(v)));
  }
  const auto r = rope_apply(std::vector<float>{1, 0}, 1, 10000.0f);
  CHECK(std::abs(r[0] - 0.540302) <= 1e-6);
  CHECK(std::abs(r[1] - 0.841471) <= 1e-6);
  CHECK_THROWS_AS(rope_apply(std::vector<float>{1, 2, 3}, 1, 10000.0f), ShapeError);
}

TEST_CASE("swiglu") {
  Xoshiro256 rng(5);
  Matrix g(3, 2), u(3, 2), d(2, 3);
  for (auto* m : {&g, &u, &d}) {
    for (auto& v : m->data()) v = static_cast<float>(rng.normal());
  }
  CHECK(swiglu(std::vector<float>{0, 0}, g, u, d) == std::vector<float>{0, 0});
  const auto y = swiglu(std::vector<float>{1}, Matrix::from_rows({{1}}), Matrix::from_rows({{1}}),
                        Matrix::from_rows({{1}}));
  CHECK(std::abs(y[0] - 0.731059) <= 1e-5);
  CHECK(swiglu(std::vector<float>{0.3f, -2.0f}, Matrix(3, 2), u, d) == std::vector<float>{0, 0});
}
