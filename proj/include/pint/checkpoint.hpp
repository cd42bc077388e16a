#pragma once

// "PNTW" weight files:
//   "PNTW" | u32 count | count x ( u32 name_len | name bytes (UTF-8) |
//   u32 rank | rank x u32 dim | numel x f64 ) ; all little-endian.

#include <string>

#include "pint/binary_io.hpp"
#include "pint/parameters.hpp"

namespace pint {

inline std::vector<std::uint8_t> encode_weights(const ParameterSet& params) {
  io::ByteWriter w;
  w.bytes("PNTW", 4);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) w.f64(v);
  }
  return w.buffer();
}

inline ParameterSet decode_weights(std::vector<std::uint8_t> bytes, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  r.expect_magic("PNTW");
  const std::uint32_t count = r.u32();
  ParameterSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.u32(), '\0');
    r.bytes(name.data(), name.size());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    r.need(numel(shape) * 8);
    std::vector<double> data(numel(shape));
    for (double& v : data) v = r.f64();
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError(what + ": trailing bytes after last tensor");
  return params;
}

inline void save_weights(const ParameterSet& params, const std::string& path) {
  io::ByteWriter w;
  const auto bytes = encode_weights(params);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline ParameterSet load_weights(const std::string& path) {
  return decode_weights(io::read_file(path), path);
}

}  // namespace pint
