#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmlm/model.hpp"

namespace tmlm {

// TMLM weight file, little-endian:
//
//   bytes 0..3   magic "TMLM"
//   u32          format version (kFormatVersion)
//   u32          header length in bytes
//   header       JSON text:
//                  {"config": {...ModelConfig...},
//                   "tied_embeddings": bool,
//                   "tensors": [{"name", "dtype": "f32"|"f16",
//                                "shape": [rows, cols] or [n], "offset"}]}
//   payload      raw tensor data; offsets are relative to the first payload byte
//
// Tensor names: tok_embeddings, final_norm, output (absent when tied), and
// layers.<l>.<role> for l = 1..L with role one of w_q w_k w_v w_o w_gate w_up
// w_down attn_norm_gain ffn_norm_gain.

inline constexpr char kMagic[4] = {'T', 'M', 'L', 'M'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType { f32, f16 };

std::string to_string(DType d);
DType parse_dtype(const std::string& s);

std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

struct TensorEntry {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;

  std::size_t element_count() const;
  std::size_t byte_size() const;
};

struct FileHeader {
  std::uint32_t version = 0;
  ModelConfig config;
  bool tied_embeddings = false;
  std::vector<TensorEntry> tensors;
  std::uint64_t payload_offset = 0;
  nlohmann::json raw;
};

/// Reads and validates the header only.
FileHeader read_header(const std::filesystem::path& path);

Model load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const Model& model, DType dtype = DType::f32);

/// Gaussian-initialized weights (std 0.02) with unit norm gains, drawn in
/// tensor-directory order from a seeded generator.
Model make_toy_model(const ModelConfig& config, std::uint64_t seed, bool tied_embeddings = false);

}  // namespace tmlm
