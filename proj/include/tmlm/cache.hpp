#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tmlm/model.hpp"

namespace tmlm {

enum class CacheMode { standard, freeze_aware, skip_aware };

std::string to_string(CacheMode mode);

struct CacheStats {
  std::size_t floats_stored = 0;
  std::size_t floats_baseline_equivalent = 0;
  double saving_ratio = 0.0;
};

/// Storage the given mode needs after `n_tokens` positions:
///   baseline     2 * n * L * kv_dim
///   standard     baseline
///   freeze_aware 2 * n * k * kv_dim + n * d_model
///   skip_aware   2 * n * (s - 1) * kv_dim
/// `layer` is k for freeze_aware and s for skip_aware.
CacheStats cache_stats(const ModelConfig& config, CacheMode mode, std::size_t layer, std::size_t n_tokens);

/// Per-layer key/value cache for one generation session.
///
/// Standard caches every layer. FreezeAware(k) caches layers 1..k and keeps
/// the layer-k hidden states of every processed token; keys and values for
/// layers above k are recomputed from those states on each step.
/// SkipAware(s) caches layers 1..s-1 only. Stored keys are post-rotary.
class KVStore {
 public:
  static KVStore standard(const ModelConfig& config);
  static KVStore freeze_aware(const ModelConfig& config, std::size_t k);
  static KVStore skip_aware(const ModelConfig& config, std::size_t s);

  CacheMode mode() const { return mode_; }
  /// k for freeze_aware, s for skip_aware, L for standard.
  std::size_t mode_layer() const { return mode_layer_; }
  bool caches_layer(std::size_t layer) const;

  void append_standard(std::size_t layer, std::span<const float> k_row, std::span<const float> v_row);
  void pop_standard(std::size_t layer);
  const Matrix& keys(std::size_t layer) const;
  const Matrix& values(std::size_t layer) const;

  void append_frozen(std::span<const float> state);
  const Matrix& frozen_states() const { return frozen_; }

  /// Keys and values of the first `n_rows` frozen states as seen by layer
  /// `layer` > k: W_k / W_v applied to the layer's attention norm of each
  /// row, rotary by the row's original position.
  std::pair<Matrix, Matrix> frozen_view(std::size_t layer, const LayerWeights& lw, std::size_t n_rows) const;

  /// Marks one more position as fully processed.
  void commit_position() { ++n_tokens_; }
  std::size_t n_tokens() const { return n_tokens_; }

  /// Counts the floats held in the store's buffers right now.
  std::size_t floats_allocated() const;

  CacheStats stats() const;

 private:
  KVStore(const ModelConfig& config, CacheMode mode, std::size_t mode_layer);
  void check_cached(std::size_t layer, const char* what) const;

  ModelConfig config_;
  CacheMode mode_ = CacheMode::standard;
  std::size_t mode_layer_ = 0;
  std::vector<Matrix> k_;  // index l-1
  std::vector<Matrix> v_;
  Matrix frozen_;
  std::size_t n_tokens_ = 0;
};

}  // namespace tmlm
