#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "trix/config.hpp"
#include "trix/errors.hpp"
#include "trix/model.hpp"

/**
 * Binary checkpoint layout, all integers little-endian:
 *
 *   "TRIXCKPT"  u32 version  u32 tensor_count
 *   per tensor: u32 name_len, name bytes, u32 ndim, u64 dims[ndim], f32 data[]
 *   remaining bytes: JSON model config
 */
namespace trix {

inline constexpr std::string_view kCheckpointMagic = "TRIXCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<unsigned char> release() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw format_error(pos_, std::string("truncated ") + what);
  }
  template <class U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const unsigned char> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const ModelParams<float>& params) {
  params.check_shapes();
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) w.le<std::uint64_t>(d);
    for (float v : t.data()) w.f32(v);
  }
  const std::string cfg = to_json(params.config).dump();
  w.bytes(cfg.data(), cfg.size());
  return w.release();
}

/// Decodes a checkpoint. Structural problems raise format_error with the byte offset.
inline ModelParams<float> deserialize_checkpoint(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  if (r.text(std::min(r.remaining(), kCheckpointMagic.size()), "magic") != kCheckpointMagic)
    throw format_error(0, "bad magic");
  const std::size_t version_at = r.offset();
  if (const auto v = r.le<std::uint32_t>("version"); v != kCheckpointVersion)
    throw format_error(version_at, "unsupported version " + std::to_string(v));
  const auto count = r.le<std::uint32_t>("tensor count");

  ModelParams<float> p;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.offset();
    const auto len = r.le<std::uint32_t>("name length");
    std::string name = r.text(len, "tensor name");
    const auto ndim = r.le<std::uint32_t>("ndim");
    if (ndim > 2) throw format_error(r.offset() - 4, "tensor '" + name + "' has rank " + std::to_string(ndim));
    std::vector<std::size_t> shape;
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.le<std::uint64_t>("dimension");
      shape.push_back(static_cast<std::size_t>(dim));
      elems *= dim;
    }
    if (elems > r.remaining() / 4) throw format_error(r.offset(), "truncated data of tensor '" + name + "'");
    std::vector<float> data(static_cast<std::size_t>(elems));
    for (auto& v : data) v = std::bit_cast<float>(r.le<std::uint32_t>("tensor data"));
    if (!p.tensors.emplace(name, ad::Tensor<float>(std::move(shape), std::move(data))).second)
      throw format_error(at, "duplicate tensor '" + name + "'");
  }
  const std::size_t cfg_at = r.offset();
  const std::string cfg = r.text(r.remaining(), "config");
  try {
    p.config = model_config_from_json(nlohmann::json::parse(cfg));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(cfg_at, std::string("bad config blob: ") + e.what());
  } catch (const config_error& e) {
    throw format_error(cfg_at, std::string("bad config blob: ") + e.what());
  }
  p.check_shapes();
  return p;
}

inline void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw config_error("write failed for '" + path.string() + "'");
}

inline ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

/// Loads and checks the tensors against `expected` (shape_error on mismatch).
inline ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelParams<float> p = load_checkpoint(path);
  ModelParams<float> probe = p;
  probe.config = expected;
  probe.check_shapes();
  p.config = expected;
  return p;
}

}  // namespace trix
