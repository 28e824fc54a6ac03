#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcu4d/discriminator.hpp"
#include "pcu4d/tensor.hpp"
#include "pcu4d/upsampler.hpp"

namespace pcu4d {

// Checkpoint layout, all integers little-endian:
//   "PCU4D01" (7 bytes)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               f32 data[prod(dims)]

inline constexpr char kCheckpointMagic[] = "PCU4D01";
inline constexpr std::size_t kCheckpointMagicSize = 7;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kCheckpointMagic, kCheckpointMagicSize);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
    std::size_t n = 1;
    for (auto d : t.dims) {
      detail::put_u32(os, d);
      n *= d;
    }
    if (n != t.data.size()) throw CheckpointError("tensor '" + t.name + "' data does not match dims");
    for (float f : t.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[kCheckpointMagicSize];
  if (!is.read(magic, kCheckpointMagicSize) || std::memcmp(magic, kCheckpointMagic, kCheckpointMagicSize) != 0)
    throw CheckpointError("not a PCU4D01 checkpoint");
  const std::uint32_t count = detail::get_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t len = detail::get_u32(is);
    if (len > (1u << 16)) throw CheckpointError("implausible tensor name length");
    t.name.resize(len);
    if (!is.read(t.name.data(), len)) throw CheckpointError("checkpoint truncated");
    const std::uint32_t rank = detail::get_u32(is);
    if (rank > 8) throw CheckpointError("implausible tensor rank");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(detail::get_u32(is));
      n *= t.dims.back();
    }
    if (n > (std::size_t{1} << 28)) throw CheckpointError("implausible tensor size");
    t.data.resize(n);
    for (auto& f : t.data) f = std::bit_cast<float>(detail::get_u32(is));
    out.push_back(std::move(t));
  }
  return out;
}

template <typename P>
void append_tensors(const P& params, const std::string& prefix, std::vector<NamedTensor>& out) {
  for_each_tensor(params, prefix, [&](const std::string& name, const Tensor& t) {
    NamedTensor nt{name, {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)}, {}};
    nt.data.reserve(t.size());
    for (double v : t.data) nt.data.push_back(static_cast<float>(v));
    out.push_back(std::move(nt));
  });
}

/// Copies every tensor of `params` (named with `prefix`) out of `tensors`.
/// Missing names or shape mismatches throw.
template <typename P>
void assign_tensors(P& params, const std::string& prefix, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for_each_tensor(params, prefix, [&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    const NamedTensor& src = *it->second;
    std::size_t rows = 0, cols = 0;
    if (src.dims.size() == 2) {
      rows = src.dims[0];
      cols = src.dims[1];
    } else if (src.dims.size() == 1) {
      rows = 1;
      cols = src.dims[0];
    } else {
      throw CheckpointError("tensor '" + name + "' has unsupported rank");
    }
    if (rows != t.rows || cols != t.cols)
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                            ", model expects " + shape_str(t));
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<double>(src.data[i]);
  });
}

inline void save_checkpoint(const std::filesystem::path& path, const GeneratorParams& gen,
                            const DiscriminatorParams* disc = nullptr) {
  std::vector<NamedTensor> tensors;
  append_tensors(gen, "gen.", tensors);
  if (disc) append_tensors(*disc, "disc.", tensors);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, tensors);
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

/// Loads generator (and optionally discriminator) weights into parameters
/// already shaped by their configs.
inline void load_checkpoint(const std::filesystem::path& path, GeneratorParams& gen,
                            DiscriminatorParams* disc = nullptr) {
  auto tensors = read_checkpoint(path);
  assign_tensors(gen, "gen.", tensors);
  if (disc) assign_tensors(*disc, "disc.", tensors);
}

}  // namespace pcu4d
