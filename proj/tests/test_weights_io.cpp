#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "support/reference.hpp"
#include "tmlm/error.hpp"
#include "tmlm/weights_io.hpp"

using namespace tmlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("tmlm_test_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

bool same_weights(const Model& a, const Model& b) {
  if (!(a.config == b.config) || a.weights.tied_embeddings != b.weights.tied_embeddings) return false;
  if (!(a.weights.token_embedding == b.weights.token_embedding) || !(a.weights.output == b.weights.output)) return false;
  if (a.weights.final_norm_gain != b.weights.final_norm_gain) return false;
  for (std::size_t l = 1; l <= a.config.n_layers; ++l) {
    const auto& x = a.weights.layer(l);
    const auto& y = b.weights.layer(l);
    if (!(x.w_q == y.w_q && x.w_k == y.w_k && x.w_v == y.w_v && x.w_o == y.w_o && x.w_gate == y.w_gate &&
          x.w_up == y.w_up && x.w_down == y.w_down && x.attn_norm_gain == y.attn_norm_gain &&
          x.ffn_norm_gain == y.ffn_norm_gain)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("half precision conversion") {
  CHECK(float_to_half(1.0f) == 0x3c00);
  CHECK(float_to_half(-2.0f) == 0xc000);
  CHECK(half_to_float(0x3c00) == 1.0f);
  CHECK(half_to_float(0x7bff) == 65504.0f);
  for (float f : {0.0f, 0.5f, 0.1f, -3.14159f, 1e-3f}) {
    CHECK(std::abs(half_to_float(float_to_half(f)) - f) <= std::abs(f) * 1e-3f + 1e-7f);
  }
}

TEST_CASE("f32 round trip is bit-identical") {
  for (bool tied : {false, true}) {
    const Model m = make_toy_model(ref::toy_config(), 3, tied);
    const auto path = temp_file(tied ? "tied.tmlm" : "untied.tmlm");
    save_model(path, m);
    CHECK(same_weights(m, load_model(path)));
    const auto h = read_header(path);
    CHECK(h.version == kFormatVersion);
    CHECK(h.config == m.config);
    CHECK(h.tied_embeddings == tied);
    CHECK(h.tensors.size() == 2 + 9 * 4 + (tied ? 0 : 1));
    fs::remove(path);
  }
}

TEST_CASE("same seed writes the same bytes") {
  const auto a = temp_file("a.tmlm"), b = temp_file("b.tmlm"), c = temp_file("c.tmlm");
  save_model(a, make_toy_model(ref::toy_config(), 7));
  save_model(b, make_toy_model(ref::toy_config(), 7));
  save_model(c, make_toy_model(ref::toy_config(), 8));
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));
  CHECK(slurp(a).substr(0, 4) == "TMLM");
  for (const auto& p : {a, b, c}) fs::remove(p);
}

TEST_CASE("f16 round trip is within half rounding") {
  const Model m = make_toy_model(ref::toy_config(), 4);
  const auto path = temp_file("half.tmlm");
  save_model(path, m, DType::f16);
  const Model back = load_model(path);
  const auto e = m.weights.token_embedding.data();
  const auto f = back.weights.token_embedding.data();
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(std::abs(e[i] - f[i]) <= std::abs(e[i]) * 0x1p-11f + 0x1p-25f);
  }
  const auto full = temp_file("full.tmlm");
  save_model(full, m);
  CHECK(fs::file_size(path) < fs::file_size(full));
  fs::remove(path);
  fs::remove(full);
}

TEST_CASE("corrupt files are rejected") {
  const auto good = temp_file("good.tmlm"), bad = temp_file("bad.tmlm");
  save_model(good, make_toy_model(ref::toy_config(2, 16, 2, 2, 32, 20), 1));
  const std::string bytes = slurp(good);

  spit(bad, "XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(load_model(bad), ParseError);

  spit(bad, bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(load_model(bad), Error);

  spit(bad, bytes.substr(0, 6));
  CHECK_THROWS_AS(read_header(bad), Error);

  CHECK_THROWS_AS(load_model(temp_file("missing.tmlm")), IoError);
  fs::remove(good);
  fs::remove(bad);
}

TEST_CASE("toy model shape") {
  const Model m = make_toy_model(ref::toy_config(), 1);
  CHECK_NOTHROW(m.validate());
  CHECK(m.weights.token_embedding.rows() == 64);
  CHECK(m.weights.token_embedding.cols() == 64);
  CHECK(m.weights.layers.size() == 4);
  CHECK(m.weights.layer(1).w_gate.rows() == 128);
}
