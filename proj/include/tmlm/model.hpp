#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmlm/tensor.hpp"

namespace tmlm {

using TokenId = std::uint32_t;

// Layer numbering
// ---------------
// Layers are numbered 1..L everywhere outside this struct's storage: CLI
// flags, intervention specs, weight-file tensor names (`layers.<i>.*`) and
// trace indices. Hidden state X^0 is the embedding output and X^l (l >= 1) is
// the output of block l, so ForwardTrace::states has L+1 entries and block l
// reads X^(l-1). ModelWeights::layers is the only 0-based container; use
// ModelWeights::layer(l) to index it by layer number.

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t d_head = 0;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 0;
  float rope_theta = 10000.0f;
  float norm_eps = 1e-5f;

  std::size_t kv_dim() const { return n_kv_heads * d_head; }
  std::size_t q_dim() const { return n_heads * d_head; }

  /// Throws ValidationError if any invariant is violated.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Matrix w_q;     // [q_dim x d_model]
  Matrix w_k;     // [kv_dim x d_model]
  Matrix w_v;     // [kv_dim x d_model]
  Matrix w_o;     // [d_model x q_dim]
  Matrix w_gate;  // [d_ff x d_model]
  Matrix w_up;    // [d_ff x d_model]
  Matrix w_down;  // [d_model x d_ff]
  std::vector<float> attn_norm_gain;
  std::vector<float> ffn_norm_gain;
};

struct ModelWeights {
  Matrix token_embedding;  // [vocab x d_model]
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm_gain;
  Matrix output;  // [vocab x d_model]; empty when tied_embeddings
  bool tied_embeddings = false;

  const LayerWeights& layer(std::size_t l) const { return layers.at(l - 1); }
  LayerWeights& layer(std::size_t l) { return layers.at(l - 1); }

  /// Rows are vocabulary entries: logits = output_projection() * h.
  const Matrix& output_projection() const { return tied_embeddings ? token_embedding : output; }
};

struct Model {
  ModelConfig config;
  ModelWeights weights;

  /// Checks every tensor shape against the config.
  void validate() const;
};

/// Hidden states X^0..X^L for every processed position, plus a flag per
/// (layer, position) marking states an intervention replaced or whose
/// downstream reads it redirected.
struct ForwardTrace {
  std::vector<Matrix> states;
  std::vector<std::vector<std::uint8_t>> modified_mask;

  ForwardTrace() = default;
  ForwardTrace(std::size_t n_layers, std::size_t d_model);

  std::size_t n_layers() const { return states.empty() ? 0 : states.size() - 1; }
  std::size_t n_tokens() const { return states.empty() ? 0 : states.front().rows(); }
  bool modified(std::size_t layer, std::size_t position) const;
  void mark(std::size_t layer, std::size_t position);
};

Matrix embed(const Model& model, std::span<const TokenId> tokens);

/// Key and value rows for one position: k = rope(W_k * normed_x), v = W_v * normed_x.
struct KVRow {
  std::vector<float> k;
  std::vector<float> v;
};
KVRow project_kv(const ModelConfig& config, const LayerWeights& lw, std::span<const float> normed_x,
                 std::size_t position);

/// Multi-head (grouped-query when n_kv_heads < n_heads) attention for the
/// current position over `n_history` cached rows plus the position's own
/// key/value. Returns w_o * concat(heads).
std::vector<float> attend(const ModelConfig& config, const LayerWeights& lw, std::span<const float> normed_x,
                          std::size_t position, const Matrix& history_k, const Matrix& history_v,
                          std::size_t n_history, const KVRow& self);

/// Attention sub-layer from already-normalized inputs: `history_inputs` rows
/// are the normalized vectors at positions 0..position-1 this layer reads.
std::vector<float> attention_block(const ModelConfig& config, const LayerWeights& lw, std::span<const float> normed_x,
                                   const Matrix& normed_history, std::size_t position);

/// One transformer block with pre-RMS-norm residual sub-layers. History rows
/// are raw block inputs and go through the block's attention norm. With
/// `skip_attention` both the attention sub-layer and its norm are bypassed.
std::vector<float> decoder_layer(const ModelConfig& config, const LayerWeights& lw, std::span<const float> current_x,
                                 const Matrix& history_inputs, std::size_t position, bool skip_attention);

std::vector<float> feed_forward_residual(const ModelConfig& config, const LayerWeights& lw,
                                         std::span<const float> x);

std::vector<float> compute_logits(const Model& model, std::span<const float> final_state);

}  // namespace tmlm
