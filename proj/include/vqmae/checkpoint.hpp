#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/nn.hpp"
#include "vqmae/optim.hpp"
#include "vqmae/tensor.hpp"

namespace vqmae {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a, used to fingerprint the resolved configuration text
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct CheckpointMeta {
  std::uint64_t config_fingerprint = 0;
  std::uint64_t master_seed = 0;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
};

namespace detail {

template <typename T>
void wr(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError(path + ": truncated checkpoint");
  return v;
}

constexpr char kMagic[4] = {'V', 'Q', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

}  // namespace detail

// Binary layout: magic, version, meta, named fp64 parameter blobs in map
// order, then (optionally) AdamW moment state in the same order. Parameter
// payloads are raw little-endian doubles, so save/load roundtrips bit-exactly.
inline void save_checkpoint(const std::string& path, const ParamMap& params, const AdamW* opt,
                            const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(detail::kMagic, 4);
  detail::wr(out, detail::kVersion);
  detail::wr(out, meta.config_fingerprint);
  detail::wr(out, meta.master_seed);
  detail::wr(out, meta.epoch);
  detail::wr(out, meta.step);
  detail::wr(out, static_cast<std::uint32_t>(params.items.size()));
  for (auto& [name, t] : params.items) {
    detail::wr(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::wr(out, static_cast<std::uint8_t>(t.shape().size()));
    for (auto d : t.shape()) detail::wr(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * 8));
  }
  const std::uint8_t has_opt = opt != nullptr && opt->bound() ? 1 : 0;
  detail::wr(out, has_opt);
  if (has_opt) {
    detail::wr(out, opt->step_count);
    detail::wr(out, opt->skipped_steps);
    for (size_t pi = 0; pi < params.items.size(); ++pi) {
      const auto& m = opt->first_moments()[pi];
      const auto& v = opt->second_moments()[pi];
      detail::wr(out, static_cast<std::int64_t>(m.size()));
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    }
  }
  if (!out) throw CheckpointError("write failed for " + path);
}

// Loads parameter values into an already-constructed model whose ParamMap
// matches the stored names and shapes. A config fingerprint mismatch is
// refused unless force is set.
inline CheckpointMeta load_checkpoint(const std::string& path, ParamMap& params, AdamW* opt,
                                      std::uint64_t expected_fingerprint = 0,
                                      bool force = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kMagic, 4) != 0)
    throw CheckpointError(path + ": not a checkpoint file (bad magic)");
  const auto version = detail::rd<std::uint32_t>(in, path);
  if (version != detail::kVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointMeta meta;
  meta.config_fingerprint = detail::rd<std::uint64_t>(in, path);
  meta.master_seed = detail::rd<std::uint64_t>(in, path);
  meta.epoch = detail::rd<std::int64_t>(in, path);
  meta.step = detail::rd<std::int64_t>(in, path);
  if (expected_fingerprint != 0 && meta.config_fingerprint != expected_fingerprint && !force)
    throw CheckpointError(path + ": config fingerprint mismatch (checkpoint " +
                          std::to_string(meta.config_fingerprint) + ", expected " +
                          std::to_string(expected_fingerprint) +
                          "); pass force to load anyway");
  const auto n = detail::rd<std::uint32_t>(in, path);
  if (n != params.items.size())
    throw CheckpointError(path + ": holds " + std::to_string(n) + " parameters, model has " +
                          std::to_string(params.items.size()));
  for (auto& [name, cp] : params.items) {
    Tensor t = cp;
    const auto name_len = detail::rd<std::uint16_t>(in, path);
    std::string stored(name_len, '\0');
    in.read(stored.data(), name_len);
    if (stored != name)
      throw CheckpointError(path + ": parameter order mismatch, stored '" + stored +
                            "' vs model '" + name + "'");
    const auto ndim = detail::rd<std::uint8_t>(in, path);
    Shape shape(ndim);
    for (auto& d : shape) d = detail::rd<std::int64_t>(in, path);
    if (shape != t.shape())
      throw CheckpointError(path + ": shape mismatch for '" + name + "': stored " +
                            shape_str(shape) + ", model " + shape_str(t.shape()));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!in) throw CheckpointError(path + ": truncated parameter payload");
  }
  const auto has_opt = detail::rd<std::uint8_t>(in, path);
  if (has_opt && opt != nullptr) {
    if (!opt->bound()) opt->bind(params);
    opt->step_count = detail::rd<std::int64_t>(in, path);
    opt->skipped_steps = detail::rd<std::int64_t>(in, path);
    for (size_t pi = 0; pi < params.items.size(); ++pi) {
      const auto sz = detail::rd<std::int64_t>(in, path);
      if (sz != static_cast<std::int64_t>(opt->first_moments()[pi].size()))
        throw CheckpointError(path + ": optimizer state size mismatch");
      in.read(reinterpret_cast<char*>(opt->first_moments()[pi].data()),
              static_cast<std::streamsize>(sz * 8));
      in.read(reinterpret_cast<char*>(opt->second_moments()[pi].data()),
              static_cast<std::streamsize>(sz * 8));
      if (!in) throw CheckpointError(path + ": truncated optimizer payload");
    }
  }
  return meta;
}

}  // namespace vqmae
