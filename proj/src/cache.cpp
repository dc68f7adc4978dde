#include "tmlm/cache.hpp"

#include "tmlm/error.hpp"

namespace tmlm {

std::string to_string(CacheMode mode) {
  switch (mode) {
    case CacheMode::standard: return "standard";
    case CacheMode::freeze_aware: return "freeze_aware";
    case CacheMode::skip_aware: return "skip_aware";
  }
  return "?";
}

CacheStats cache_stats(const ModelConfig& config, CacheMode mode, std::size_t layer, std::size_t n_tokens) {
  const std::size_t n = n_tokens;
  const std::size_t kv = config.kv_dim();
  CacheStats s;
  s.floats_baseline_equivalent = 2 * n * config.n_layers * kv;
  switch (mode) {
    case CacheMode::standard: s.floats_stored = s.floats_baseline_equivalent; break;
    case CacheMode::freeze_aware: s.floats_stored = 2 * n * layer * kv + n * config.d_model; break;
    case CacheMode::skip_aware: s.floats_stored = 2 * n * (layer - 1) * kv; break;
  }
  s.saving_ratio = s.floats_baseline_equivalent == 0
                       ? 0.0
                       : 1.0 - static_cast<double>(s.floats_stored) / static_cast<double>(s.floats_baseline_equivalent);
  return s;
}

KVStore::KVStore(const ModelConfig& config, CacheMode mode, std::size_t mode_layer)
    : config_(config), mode_(mode), mode_layer_(mode_layer) {
  for (std::size_t l = 1; l <= config.n_layers; ++l) {
    // Layers the mode does not cache keep 0x0 buffers.
    const std::size_t width = caches_layer(l) ? config.kv_dim() : 0;
    k_.emplace_back(0, width);
    v_.emplace_back(0, width);
  }
  if (mode == CacheMode::freeze_aware) frozen_ = Matrix(0, config.d_model);
}

KVStore KVStore::standard(const ModelConfig& config) { return KVStore(config, CacheMode::standard, config.n_layers); }

KVStore KVStore::freeze_aware(const ModelConfig& config, std::size_t k) {
  if (k < 1 || k > config.n_layers) {
    throw ValidationError("freeze-aware cache layer k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(config.n_layers) + "]");
  }
  return KVStore(config, CacheMode::freeze_aware, k);
}

KVStore KVStore::skip_aware(const ModelConfig& config, std::size_t s) {
  if (s < 1 || s > config.n_layers) {
    throw ValidationError("skip-aware cache layer s=" + std::to_string(s) + " outside [1, " +
                          std::to_string(config.n_layers) + "]");
  }
  return KVStore(config, CacheMode::skip_aware, s);
}

bool KVStore::caches_layer(std::size_t layer) const {
  if (layer < 1 || layer > config_.n_layers) return false;
  switch (mode_) {
    case CacheMode::standard: return true;
    case CacheMode::freeze_aware: return layer <= mode_layer_;
    case CacheMode::skip_aware: return layer < mode_layer_;
  }
  return false;
}

void KVStore::check_cached(std::size_t layer, const char* what) const {
  if (!caches_layer(layer)) {
    throw MisuseError(std::string(what) + ": layer " + std::to_string(layer) + " is not cached in " +
                      to_string(mode_) + " mode (layer " + std::to_string(mode_layer_) + ")");
  }
}

void KVStore::append_standard(std::size_t layer, std::span<const float> k_row, std::span<const float> v_row) {
  check_cached(layer, "append_standard");
  k_[layer - 1].append_row(k_row);
  v_[layer - 1].append_row(v_row);
}

void KVStore::pop_standard(std::size_t layer) {
  check_cached(layer, "pop_standard");
  k_[layer - 1].pop_row();
  v_[layer - 1].pop_row();
}

const Matrix& KVStore::keys(std::size_t layer) const {
  check_cached(layer, "keys");
  return k_[layer - 1];
}

const Matrix& KVStore::values(std::size_t layer) const {
  check_cached(layer, "values");
  return v_[layer - 1];
}

void KVStore::append_frozen(std::span<const float> state) {
  if (mode_ != CacheMode::freeze_aware) throw MisuseError("append_frozen outside freeze_aware mode");
  frozen_.append_row(state);
}

std::pair<Matrix, Matrix> KVStore::frozen_view(std::size_t layer, const LayerWeights& lw, std::size_t n_rows) const {
  if (mode_ != CacheMode::freeze_aware) throw MisuseError("frozen_view outside freeze_aware mode");
  if (layer <= mode_layer_ || layer > config_.n_layers) {
    throw MisuseError("frozen_view at layer " + std::to_string(layer) + " but frozen layer is " +
                      std::to_string(mode_layer_));
  }
  if (n_rows > frozen_.rows()) throw MisuseError("frozen_view asks for more rows than stored");
  Matrix k(0, config_.kv_dim());
  Matrix v(0, config_.kv_dim());
  k.reserve_rows(n_rows);
  v.reserve_rows(n_rows);
  for (std::size_t j = 0; j < n_rows; ++j) {
    const auto normed = rms_norm(frozen_.row(j), lw.attn_norm_gain, config_.norm_eps);
    auto kv = project_kv(config_, lw, normed, j);
    k.append_row(kv.k);
    v.append_row(kv.v);
  }
  return {std::move(k), std::move(v)};
}

std::size_t KVStore::floats_allocated() const {
  std::size_t n = frozen_.size();
  for (const auto& m : k_) n += m.size();
  for (const auto& m : v_) n += m.size();
  return n;
}

CacheStats KVStore::stats() const { return cache_stats(config_, mode_, mode_layer_, n_tokens_); }

}  // namespace tmlm
