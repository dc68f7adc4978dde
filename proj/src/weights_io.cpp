#include "tmlm/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include "tmlm/error.hpp"
#include "tmlm/rng.hpp"

namespace tmlm {

static_assert(std::endian::native == std::endian::little, "TMLM I/O assumes a little-endian host");

std::string to_string(DType d) { return d == DType::f16 ? "f16" : "f32"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f16") return DType::f16;
  throw ParseError("unknown dtype '" + s + "' (expected f32 or f16)");
}

std::uint16_t float_to_half(float f) {
  const auto x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xffu;
  std::uint32_t mant = x & 0x7fffffu;

  if (exp == 0xff) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t mid = 1u << (shift - 1);
    if (rem > mid || (rem == mid && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = sign | (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  // Round to nearest even; a carry into the exponent is the correct result.
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(half);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits = 0;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3ffu) << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::size_t TensorEntry::element_count() const {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::size_t TensorEntry::byte_size() const { return element_count() * (dtype == DType::f16 ? 2 : 4); }

namespace {

struct TensorSlot {
  std::string name;
  std::vector<std::size_t> shape;
  std::function<std::span<float>()> data;
};

/// Tensor directory in file order, bound to a model's storage. Matrices are
/// resized to their config shapes first.
std::vector<TensorSlot> tensor_slots(Model& m) {
  const auto& c = m.config;
  auto& w = m.weights;
  w.layers.resize(c.n_layers);
  auto mat = [](Matrix& mx, std::size_t r, std::size_t cols) {
    if (mx.rows() != r || mx.cols() != cols) mx = Matrix(r, cols);
    return [&mx] { return mx.data(); };
  };
  auto vec = [](std::vector<float>& v, std::size_t n) {
    v.resize(n);
    return [&v] { return std::span<float>(v); };
  };

  std::vector<TensorSlot> slots;
  slots.push_back({"tok_embeddings", {c.vocab_size, c.d_model}, mat(w.token_embedding, c.vocab_size, c.d_model)});
  for (std::size_t l = 1; l <= c.n_layers; ++l) {
    auto& lw = w.layer(l);
    const std::string p = "layers." + std::to_string(l) + ".";
    slots.push_back({p + "w_q", {c.q_dim(), c.d_model}, mat(lw.w_q, c.q_dim(), c.d_model)});
    slots.push_back({p + "w_k", {c.kv_dim(), c.d_model}, mat(lw.w_k, c.kv_dim(), c.d_model)});
    slots.push_back({p + "w_v", {c.kv_dim(), c.d_model}, mat(lw.w_v, c.kv_dim(), c.d_model)});
    slots.push_back({p + "w_o", {c.d_model, c.q_dim()}, mat(lw.w_o, c.d_model, c.q_dim())});
    slots.push_back({p + "w_gate", {c.d_ff, c.d_model}, mat(lw.w_gate, c.d_ff, c.d_model)});
    slots.push_back({p + "w_up", {c.d_ff, c.d_model}, mat(lw.w_up, c.d_ff, c.d_model)});
    slots.push_back({p + "w_down", {c.d_model, c.d_ff}, mat(lw.w_down, c.d_model, c.d_ff)});
    slots.push_back({p + "attn_norm_gain", {c.d_model}, vec(lw.attn_norm_gain, c.d_model)});
    slots.push_back({p + "ffn_norm_gain", {c.d_model}, vec(lw.ffn_norm_gain, c.d_model)});
  }
  slots.push_back({"final_norm", {c.d_model}, vec(w.final_norm_gain, c.d_model)});
  if (!w.tied_embeddings) slots.push_back({"output", {c.vocab_size, c.d_model}, mat(w.output, c.vocab_size, c.d_model)});
  return slots;
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError("TMLM file truncated in preamble");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

}  // namespace

FileHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError(path.string() + ": bad magic, not a TMLM file");

  FileHeader h;
  h.version = read_u32(in);
  if (h.version != kFormatVersion) {
    throw ParseError(path.string() + ": unsupported TMLM version " + std::to_string(h.version));
  }
  const std::uint32_t header_len = read_u32(in);
  std::string text(header_len, '\0');
  in.read(text.data(), header_len);
  if (!in) throw ParseError(path.string() + ": header truncated");
  h.payload_offset = 12 + static_cast<std::uint64_t>(header_len);

  try {
    h.raw = nlohmann::json::parse(text);
    h.config = ModelConfig::from_json(h.raw.at("config"));
    h.tied_embeddings = h.raw.value("tied_embeddings", false);
    for (const auto& t : h.raw.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.dtype = parse_dtype(t.at("dtype").get<std::string>());
      e.shape = t.at("shape").get<std::vector<std::size_t>>();
      e.offset = t.at("offset").get<std::uint64_t>();
      h.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": malformed header: " + e.what());
  }

  const auto file_size = std::filesystem::file_size(path);
  for (const auto& t : h.tensors) {
    if (h.payload_offset + t.offset + t.byte_size() > file_size) {
      throw ParseError(path.string() + ": tensor " + t.name + " extends past end of file");
    }
  }
  return h;
}

Model load_model(const std::filesystem::path& path) {
  const FileHeader h = read_header(path);
  Model m;
  m.config = h.config;
  m.weights.tied_embeddings = h.tied_embeddings;

  std::map<std::string, const TensorEntry*> by_name;
  for (const auto& t : h.tensors) {
    if (!by_name.emplace(t.name, &t).second) throw ParseError(path.string() + ": duplicate tensor " + t.name);
  }

  std::ifstream in(path, std::ios::binary);
  auto slots = tensor_slots(m);
  for (auto& slot : slots) {
    auto it = by_name.find(slot.name);
    if (it == by_name.end()) throw ParseError(path.string() + ": missing tensor " + slot.name);
    const TensorEntry& e = *it->second;
    if (e.shape != slot.shape) {
      std::string got, want;
      for (auto s : e.shape) got += std::to_string(s) + ",";
      for (auto s : slot.shape) want += std::to_string(s) + ",";
      throw ShapeError(path.string() + ": tensor " + slot.name + " has shape [" + got + "], config implies [" +
                       want + "]");
    }
    auto dst = slot.data();
    in.seekg(static_cast<std::streamoff>(h.payload_offset + e.offset));
    if (e.dtype == DType::f32) {
      in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * 4));
    } else {
      std::vector<std::uint16_t> buf(dst.size());
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 2));
      for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = half_to_float(buf[i]);
    }
    if (!in) throw ParseError(path.string() + ": failed reading tensor " + slot.name);
    by_name.erase(it);
  }
  if (!by_name.empty()) throw ParseError(path.string() + ": unexpected tensor " + by_name.begin()->first);
  m.validate();
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model, DType dtype) {
  model.validate();
  Model copy = model;
  auto slots = tensor_slots(copy);

  nlohmann::json header;
  header["config"] = model.config.to_json();
  header["tied_embeddings"] = model.weights.tied_embeddings;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& s : slots) {
    TensorEntry e{s.name, dtype, s.shape, offset};
    header["tensors"].push_back({{"name", e.name}, {"dtype", to_string(dtype)}, {"shape", e.shape}, {"offset", offset}});
    offset += e.byte_size();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write weight file " + path.string());
  out.write(kMagic, 4);
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto& s : slots) {
    auto data = s.data();
    if (dtype == DType::f32) {
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
    } else {
      std::vector<std::uint16_t> buf(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) buf[i] = float_to_half(data[i]);
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 2));
    }
  }
  if (!out) throw IoError("failed writing weight file " + path.string());
}

Model make_toy_model(const ModelConfig& config, std::uint64_t seed, bool tied_embeddings) {
  config.validate();
  Model m;
  m.config = config;
  m.weights.tied_embeddings = tied_embeddings;
  Xoshiro256 rng(seed);
  for (auto& slot : tensor_slots(m)) {
    auto data = slot.data();
    if (slot.shape.size() == 1) {
      std::fill(data.begin(), data.end(), 1.0f);
    } else {
      for (float& x : data) x = static_cast<float>(0.02 * rng.normal());
    }
  }
  return m;
}

}  // namespace tmlm
