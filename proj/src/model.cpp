#include "tmlm/model.hpp"

#include <cmath>
#include <string>

#include "tmlm/error.hpp"

namespace tmlm {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("invalid model config: " + what);
  };
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1, "n_heads must be >= 1");
  require(n_kv_heads >= 1, "n_kv_heads must be >= 1");
  require(d_head >= 1, "d_head must be >= 1");
  require(d_ff >= 1, "d_ff must be >= 1");
  require(vocab_size >= 1, "vocab_size must be >= 1");
  require(max_seq_len >= 1, "max_seq_len must be >= 1");
  require(n_heads % n_kv_heads == 0, "n_heads must be divisible by n_kv_heads");
  require(d_model == n_heads * d_head, "d_model must equal n_heads * d_head");
  require(d_head % 2 == 0, "d_head must be even for rotary embeddings");
  require(rope_theta > 0.0f, "rope_theta must be positive");
  require(norm_eps >= 0.0f, "norm_eps must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},     {"d_model", d_model},       {"n_heads", n_heads},
          {"n_kv_heads", n_kv_heads}, {"d_head", d_head},         {"d_ff", d_ff},
          {"vocab_size", vocab_size}, {"max_seq_len", max_seq_len}, {"rope_theta", rope_theta},
          {"norm_eps", norm_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_kv_heads = j.value("n_kv_heads", c.n_heads);
    c.d_head = j.value("d_head", c.n_heads ? c.d_model / c.n_heads : 0);
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.rope_theta = j.value("rope_theta", 10000.0f);
    c.norm_eps = j.value("norm_eps", 1e-5f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(name + " has shape " + m.shape_string() + ", expected [" + std::to_string(rows) + "x" +
                     std::to_string(cols) + "]");
  }
}

void expect_len(const std::vector<float>& v, std::size_t n, const std::string& name) {
  if (v.size() != n) {
    throw ShapeError(name + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(n));
  }
}

}  // namespace

void Model::validate() const {
  config.validate();
  const auto& c = config;
  expect_shape(weights.token_embedding, c.vocab_size, c.d_model, "tok_embeddings");
  if (weights.layers.size() != c.n_layers) {
    throw ShapeError("model has " + std::to_string(weights.layers.size()) + " layers, config says " +
                     std::to_string(c.n_layers));
  }
  for (std::size_t l = 1; l <= c.n_layers; ++l) {
    const auto& lw = weights.layer(l);
    const std::string p = "layers." + std::to_string(l) + ".";
    expect_shape(lw.w_q, c.q_dim(), c.d_model, p + "w_q");
    expect_shape(lw.w_k, c.kv_dim(), c.d_model, p + "w_k");
    expect_shape(lw.w_v, c.kv_dim(), c.d_model, p + "w_v");
    expect_shape(lw.w_o, c.d_model, c.q_dim(), p + "w_o");
    expect_shape(lw.w_gate, c.d_ff, c.d_model, p + "w_gate");
    expect_shape(lw.w_up, c.d_ff, c.d_model, p + "w_up");
    expect_shape(lw.w_down, c.d_model, c.d_ff, p + "w_down");
    expect_len(lw.attn_norm_gain, c.d_model, p + "attn_norm");
    expect_len(lw.ffn_norm_gain, c.d_model, p + "ffn_norm");
  }
  expect_len(weights.final_norm_gain, c.d_model, "final_norm");
  if (!weights.tied_embeddings) expect_shape(weights.output, c.vocab_size, c.d_model, "output");
}

ForwardTrace::ForwardTrace(std::size_t n_layers, std::size_t d_model)
    : states(n_layers + 1, Matrix(0, d_model)), modified_mask(n_layers + 1) {}

bool ForwardTrace::modified(std::size_t layer, std::size_t position) const {
  const auto& row = modified_mask.at(layer);
  return position < row.size() && row[position] != 0;
}

void ForwardTrace::mark(std::size_t layer, std::size_t position) {
  auto& row = modified_mask.at(layer);
  if (row.size() <= position) row.resize(position + 1, 0);
  row[position] = 1;
}

Matrix embed(const Model& model, std::span<const TokenId> tokens) {
  const auto& table = model.weights.token_embedding;
  Matrix out(0, model.config.d_model);
  out.reserve_rows(tokens.size());
  for (TokenId t : tokens) {
    if (t >= table.rows()) {
      throw VocabularyError("token id " + std::to_string(t) + " out of range for vocabulary of " +
                            std::to_string(table.rows()));
    }
    out.append_row(table.row(t));
  }
  return out;
}

KVRow project_kv(const ModelConfig& config, const LayerWeights& lw, std::span<const float> normed_x,
                 std::size_t position) {
  KVRow kv{matvec(lw.w_k, normed_x), matvec(lw.w_v, normed_x)};
  for (std::size_t h = 0; h < config.n_kv_heads; ++h) {
    rope_apply_inplace(std::span<float>(kv.k).subspan(h * config.d_head, config.d_head), position,
                       config.rope_theta);
  }
  return kv;
}

std::vector<float> attend(const ModelConfig& config, const LayerWeights& lw, std::span<const float> normed_x,
                          std::size_t position, const Matrix& history_k, const Matrix& history_v,
                          std::size_t n_history, const KVRow& self) {
  const std::size_t dh = config.d_head;
  const std::size_t group = config.n_heads / config.n_kv_heads;
  if (n_history > history_k.rows() || n_history > history_v.rows()) {
    throw ShapeError("attention history has fewer rows than requested");
  }
  if (n_history > 0 && (history_k.cols() != config.kv_dim() || history_v.cols() != config.kv_dim())) {
    throw ShapeError("attention history width " + history_k.shape_string() + " does not match kv_dim " +
                     std::to_string(config.kv_dim()));
  }

  auto q = matvec(lw.w_q, normed_x);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> heads(config.q_dim(), 0.0f);
  std::vector<float> scores(n_history + 1);

  for (std::size_t h = 0; h < config.n_heads; ++h) {
    auto qh = std::span<float>(q).subspan(h * dh, dh);
    rope_apply_inplace(qh, position, config.rope_theta);
    const std::size_t off = (h / group) * dh;
    for (std::size_t j = 0; j < n_history; ++j) scores[j] = dot(qh, history_k.row(j).subspan(off, dh));
    scores[n_history] = dot(qh, std::span<const float>(self.k).subspan(off, dh));
    softmax_inplace(scores, scale);
    auto out = std::span<float>(heads).subspan(h * dh, dh);
    for (std::size_t j = 0; j < n_history; ++j) {
      const auto vj = history_v.row(j).subspan(off, dh);
      for (std::size_t i = 0; i < dh; ++i) out[i] += scores[j] * vj[i];
    }
    const auto vs = std::span<const float>(self.v).subspan(off, dh);
    for (std::size_t i = 0; i < dh; ++i) out[i] += scores[n_history] * vs[i];
  }
  return matvec(lw.w_o, heads);
}

std::vector<float> attention_block(const ModelConfig& config, const LayerWeights& lw, std::span<const float> normed_x,
                                   const Matrix& normed_history, std::size_t position) {
  if (normed_history.rows() != position) {
    throw ShapeError("attention history has " + std::to_string(normed_history.rows()) + " rows at position " +
                     std::to_string(position));
  }
  if (normed_history.rows() > 0 && normed_history.cols() != config.d_model) {
    throw ShapeError("attention history width " + normed_history.shape_string() + " does not match d_model " +
                     std::to_string(config.d_model));
  }
  Matrix k(0, config.kv_dim());
  Matrix v(0, config.kv_dim());
  for (std::size_t j = 0; j < normed_history.rows(); ++j) {
    auto kv = project_kv(config, lw, normed_history.row(j), j);
    k.append_row(kv.k);
    v.append_row(kv.v);
  }
  const auto self = project_kv(config, lw, normed_x, position);
  return attend(config, lw, normed_x, position, k, v, position, self);
}

std::vector<float> feed_forward_residual(const ModelConfig& config, const LayerWeights& lw,
                                         std::span<const float> x) {
  std::vector<float> out(x.begin(), x.end());
  const auto normed = rms_norm(x, lw.ffn_norm_gain, config.norm_eps);
  add_inplace(out, swiglu(normed, lw.w_gate, lw.w_up, lw.w_down));
  return out;
}

std::vector<float> decoder_layer(const ModelConfig& config, const LayerWeights& lw, std::span<const float> current_x,
                                 const Matrix& history_inputs, std::size_t position, bool skip_attention) {
  if (skip_attention) return feed_forward_residual(config, lw, current_x);
  Matrix normed_history(0, config.d_model);
  for (std::size_t j = 0; j < history_inputs.rows(); ++j) {
    normed_history.append_row(rms_norm(history_inputs.row(j), lw.attn_norm_gain, config.norm_eps));
  }
  const auto normed = rms_norm(current_x, lw.attn_norm_gain, config.norm_eps);
  std::vector<float> x(current_x.begin(), current_x.end());
  add_inplace(x, attention_block(config, lw, normed, normed_history, position));
  return feed_forward_residual(config, lw, x);
}

std::vector<float> compute_logits(const Model& model, std::span<const float> final_state) {
  const auto normed = rms_norm(final_state, model.weights.final_norm_gain, model.config.norm_eps);
  return matvec(model.weights.output_projection(), normed);
}

}  // namespace tmlm
