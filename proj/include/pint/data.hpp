#pragma once

// Synthetic segmentation samples, label-noise simulation and the "PNTD"
// dataset file format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "pint/binary_io.hpp"
#include "pint/errors.hpp"
#include "pint/rng.hpp"
#include "pint/tensor.hpp"

namespace pint {

// Row-major H x W class-id map.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> ids;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), ids(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  std::size_t count(std::uint8_t id) const {
    return static_cast<std::size_t>(std::count(ids.begin(), ids.end(), id));
  }
  std::size_t foreground() const { return ids.size() - count(0); }

  bool operator==(const LabelMap&) const = default;
};

struct SegmentationSample {
  Tensor image;  // [1,H,W]
  LabelMap clean_mask;
  LabelMap noisy_mask;
  bool is_corrupted = false;

  bool operator==(const SegmentationSample&) const = default;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 2;
  std::vector<SegmentationSample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t corrupted_count() const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                  [](const auto& s) { return s.is_corrupted; }));
  }
  bool operator==(const Dataset&) const = default;
};

enum class MorphOp { erode, dilate };
enum class NoiseMode { erode, dilate, random_per_sample };

inline std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::erode: return "erode";
    case NoiseMode::dilate: return "dilate";
    case NoiseMode::random_per_sample: return "random";
  }
  return "?";
}

inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "erode") return NoiseMode::erode;
  if (s == "dilate") return NoiseMode::dilate;
  if (s == "random" || s == "random-per-sample") return NoiseMode::random_per_sample;
  throw ContractError("unknown noise mode '" + s + "'");
}

struct NoiseSpec {
  double noise_rate = 0.0;
  int radius_min = 2;
  int radius_max = 5;
  NoiseMode mode = NoiseMode::random_per_sample;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ContractError("noise rate must lie in [0,1]");
    if (radius_min < 1 || radius_max < radius_min)
      throw ContractError("noise radii must satisfy 1 <= radius_min <= radius_max");
  }
};

// Binary morphology of the foreground (id != 0) with the disk
// {(dx,dy): dx^2 + dy^2 <= r^2}. Off-image pixels count as background, so
// erosion eats into masks touching the border. Result ids are 0/1.
inline LabelMap morph(const LabelMap& mask, int radius, MorphOp op) {
  if (radius < 1) throw ContractError("morph: radius must be >= 1");
  const auto r = static_cast<std::ptrdiff_t>(radius);
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> disk;
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
      if (dx * dx + dy * dy <= r * r) disk.emplace_back(dy, dx);

  // Dilation scatters the disk from every set pixel of a padded grid;
  // erosion is the complement of dilating the complement (border included).
  const auto H = static_cast<std::ptrdiff_t>(mask.height), W = static_cast<std::ptrdiff_t>(mask.width);
  const std::ptrdiff_t PH = H + 2 * r, PW = W + 2 * r;
  std::vector<std::uint8_t> src(static_cast<std::size_t>(PH * PW), op == MorphOp::erode ? 1 : 0);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const bool fg = mask.ids[static_cast<std::size_t>(y * W + x)] != 0;
      src[static_cast<std::size_t>((y + r) * PW + x + r)] = (op == MorphOp::dilate) == fg ? 1 : 0;
    }
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(PH * PW), 0);
  for (std::ptrdiff_t y = 0; y < PH; ++y)
    for (std::ptrdiff_t x = 0; x < PW; ++x) {
      if (!src[static_cast<std::size_t>(y * PW + x)]) continue;
      for (auto [dy, dx] : disk) {
        const std::ptrdiff_t yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < PH && xx >= 0 && xx < PW) hit[static_cast<std::size_t>(yy * PW + xx)] = 1;
      }
    }
  LabelMap out(mask.height, mask.width);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const bool h = hit[static_cast<std::size_t>((y + r) * PW + x + r)] != 0;
      out.ids[static_cast<std::size_t>(y * W + x)] = (op == MorphOp::dilate ? h : !h) ? 1 : 0;
    }
  return out;
}

// Per-image zero-mean / unit-variance normalization (population variance).
inline Tensor normalize(const Tensor& image) {
  const std::size_t n = image.size();
  if (n < 2) throw DegenerateInputError("normalize: need at least two pixels");
  double mean = 0.0;
  for (double v : image.data()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : image.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (!(var > 0.0)) throw DegenerateInputError("normalize: constant image");
  const double inv = 1.0 / std::sqrt(var);
  Tensor out = image;
  for (double& v : out.data()) v = (v - mean) * inv;
  return out;
}

namespace detail {

inline void fill_ellipse(LabelMap& mask, CounterRng& rng) {
  const double H = static_cast<double>(mask.height), W = static_cast<double>(mask.width);
  const double small = std::min(H, W);
  const double a = small * (0.12 + 0.16 * rng.uniform());
  const double b = small * (0.12 + 0.16 * rng.uniform());
  const double cy = H * (0.2 + 0.6 * rng.uniform());
  const double cx = W * (0.2 + 0.6 * rng.uniform());
  const double theta = std::numbers::pi * rng.uniform();
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
      const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
      if (u * u + v * v <= 1.0) mask.at(y, x) = 1;
    }
  // Always paint the centre pixel so the ellipse is never empty.
  mask.at(std::min(mask.height - 1, static_cast<std::size_t>(cy)),
          std::min(mask.width - 1, static_cast<std::size_t>(cx))) = 1;
}

}  // namespace detail

// Raw (unnormalized) intensity model and mask for one synthetic sample.
inline SegmentationSample generate_shape_sample(std::size_t H, std::size_t W, CounterRng rng,
                                                double texture_sigma = 0.3) {
  SegmentationSample s;
  s.clean_mask = LabelMap(H, W);
  const auto n_shapes = rng.between(1, 3);
  for (std::int64_t k = 0; k < n_shapes; ++k) detail::fill_ellipse(s.clean_mask, rng);
  s.image = Tensor(Shape{1, H, W});
  for (std::size_t j = 0; j < H * W; ++j)
    s.image[j] = static_cast<float>((s.clean_mask.ids[j] ? 1.0 : 0.0) + texture_sigma * rng.normal());
  s.noisy_mask = s.clean_mask;
  return s;
}

// n clean samples with 1-3 filled ellipses each. Sample i draws only from
// stream i of the seed, so generation order does not matter. Intensities are
// raw and rounded to float so they survive the f32 file encoding unchanged;
// call normalize() per image before training.
inline Dataset generate_shapes(std::int64_t n, std::size_t H, std::size_t W, std::uint64_t seed) {
  if (n <= 0) throw ContractError("generate_shapes: n must be positive");
  if (H < 16 || W < 16) throw ContractError("generate_shapes: H and W must be >= 16");
  Dataset ds{H, W, 2, {}};
  const CounterRng root(seed);
  ds.samples.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    ds.samples.push_back(generate_shape_sample(H, W, root.split(static_cast<std::uint64_t>(i))));
  return ds;
}

inline void normalize_images(Dataset& ds) {
  for (auto& s : ds.samples) s.image = normalize(s.image);
}

// Selects exactly round(rate * n) samples uniformly at random and replaces
// their noisy mask with an eroded or dilated copy of the clean mask.
inline void corrupt_labels(Dataset& ds, const NoiseSpec& spec) {
  spec.validate();
  const std::size_t n = ds.size();
  const auto k = static_cast<std::size_t>(std::llround(spec.noise_rate * static_cast<double>(n)));
  CounterRng select = CounterRng(spec.seed).split(0);
  const CounterRng per_sample = CounterRng(spec.seed).split(1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[select.below(i)]);

  for (std::size_t j = 0; j < k; ++j) {
    SegmentationSample& s = ds.samples[order[j]];
    CounterRng rng = per_sample.split(order[j]);
    MorphOp op = spec.mode == NoiseMode::erode    ? MorphOp::erode
                 : spec.mode == NoiseMode::dilate ? MorphOp::dilate
                 : (rng.uniform() < 0.5)          ? MorphOp::erode
                                                  : MorphOp::dilate;
    int radius = static_cast<int>(rng.between(spec.radius_min, spec.radius_max));
    LabelMap noisy = morph(s.clean_mask, radius, op);
    if (op == MorphOp::erode)
      while (noisy.foreground() == 0 && radius > 1) noisy = morph(s.clean_mask, --radius, op);
    s.noisy_mask = std::move(noisy);
    s.is_corrupted = true;
  }
}

// "PNTD" dataset file:
//   "PNTD" | u32 version | u32 count | u32 H | u32 W | u32 num_classes |
//   count x ( H*W f32 image | H*W u8 clean | H*W u8 noisy | u8 corrupted )
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.bytes("PNTD", 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.height));
  w.u32(static_cast<std::uint32_t>(ds.width));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  for (const auto& s : ds.samples) {
    for (double v : s.image.data()) w.f32(static_cast<float>(v));
    w.bytes(s.clean_mask.ids.data(), s.clean_mask.ids.size());
    w.bytes(s.noisy_mask.ids.data(), s.noisy_mask.ids.size());
    w.u8(s.is_corrupted ? 1 : 0);
  }
  return w.buffer();
}

inline Dataset decode_dataset(std::vector<std::uint8_t> bytes, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  r.expect_magic("PNTD");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw VersionError(what + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  const std::uint32_t count = r.u32();
  ds.height = r.u32();
  ds.width = r.u32();
  ds.num_classes = r.u32();
  const std::size_t hw = ds.height * ds.width;
  const std::size_t record = hw * 4 + 2 * hw + 1;
  if (r.remaining() < count * record)
    throw TruncatedError(what + ": payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                         std::to_string(count * record));
  if (r.remaining() > count * record) throw FormatError(what + ": trailing bytes after payload");
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.image = Tensor(Shape{1, ds.height, ds.width});
    for (double& v : s.image.data()) v = static_cast<double>(r.f32());
    s.clean_mask = LabelMap(ds.height, ds.width);
    s.noisy_mask = LabelMap(ds.height, ds.width);
    r.bytes(s.clean_mask.ids.data(), hw);
    r.bytes(s.noisy_mask.ids.data(), hw);
    s.is_corrupted = r.u8() != 0;
    for (std::size_t j = 0; j < hw; ++j)
      if (s.clean_mask.ids[j] >= ds.num_classes || s.noisy_mask.ids[j] >= ds.num_classes)
        throw FormatError(what + ": class id out of range");
  }
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  io::ByteWriter w;
  const auto bytes = encode_dataset(ds);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Dataset read_dataset(const std::string& path) { return decode_dataset(io::read_file(path), path); }

}  // namespace pint
