#pragma once

// 8-bit grayscale renders (binary PGM) of inputs, masks, predictions and
// uncertainty maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pint/trainer.hpp"

namespace pint {

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {}
};

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline GrayImage mask_image(const LabelMap& m) {
  GrayImage g(m.height, m.width);
  for (std::size_t j = 0; j < m.ids.size(); ++j) g.pixels[j] = m.ids[j] ? 255 : 0;
  return g;
}

inline GrayImage mask_image(const BinaryMask& m) {
  GrayImage g(m.height, m.width);
  for (std::size_t j = 0; j < m.fg.size(); ++j) g.pixels[j] = m.fg[j] ? 255 : 0;
  return g;
}

// Min-max stretch of a [1,H,W] (or [H,W]) intensity image.
inline GrayImage intensity_image(const Tensor& img) {
  const std::size_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
  GrayImage g(H, W);
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  const double range = *hi - *lo;
  for (std::size_t j = 0; j < H * W; ++j)
    g.pixels[j] = range > 0 ? static_cast<std::uint8_t>(std::lround(255.0 * (img[j] - *lo) / range)) : 0;
  return g;
}

// Normalized uncertainty in [0,1] scaled to 0..255; white is most uncertain.
inline GrayImage uncertainty_image(const Tensor& u, std::size_t b = 0) {
  const std::size_t H = u.dim(1), W = u.dim(2);
  GrayImage g(H, W);
  for (std::size_t j = 0; j < H * W; ++j) {
    const double v = std::clamp(u[b * H * W + j], 0.0, 1.0);
    g.pixels[j] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return g;
}

// Clean XOR noisy: the pixels whose label was changed by the noise model.
inline GrayImage noise_variance_image(const LabelMap& clean, const LabelMap& noisy) {
  if (clean.height != noisy.height || clean.width != noisy.width)
    throw ShapeError("noise variance map: mask sizes differ");
  GrayImage g(clean.height, clean.width);
  for (std::size_t j = 0; j < clean.ids.size(); ++j) g.pixels[j] = (clean.ids[j] != 0) != (noisy.ids[j] != 0) ? 255 : 0;
  return g;
}

struct SampleRender {
  GrayImage input, clean, noisy, predicted, uncertainty, noise_variance;
};

// Prediction is the argmax of the eval-mode logits; the uncertainty map is the
// normalized entropy of the perturbation-averaged softmax.
inline SampleRender render_sample(const MiniSegNet& net, const SegmentationSample& s, const PerturbationSpec& spec,
                                  const CounterRng& rng) {
  const std::size_t H = s.clean_mask.height, W = s.clean_mask.width;
  const Tensor x = normalize(s.image).reshaped(Shape{1, 1, H, W});
  CounterRng unused(0);
  const BinaryMask pred = argmax_foreground(net.logits(x, false, unused), 0);
  const Tensor u = pixel_uncertainty(mc_pseudo_labels(net, x, spec, rng), true);
  return {intensity_image(s.image), mask_image(s.clean_mask), mask_image(s.noisy_mask), mask_image(pred),
          uncertainty_image(u), noise_variance_image(s.clean_mask, s.noisy_mask)};
}

// Writes sample_<index>_<kind>.pgm files; returns the paths written.
inline std::vector<std::filesystem::path> write_render(const SampleRender& r, std::size_t index,
                                                       const std::filesystem::path& dir) {
  char prefix[32];
  std::snprintf(prefix, sizeof prefix, "sample_%03zu_", index);
  std::vector<std::filesystem::path> paths;
  const std::pair<const char*, const GrayImage*> parts[] = {
      {"input", &r.input}, {"clean", &r.clean}, {"noisy", &r.noisy}, {"predicted", &r.predicted},
      {"uncertainty", &r.uncertainty}, {"noise_variance", &r.noise_variance}};
  for (const auto& [kind, img] : parts) {
    paths.push_back(dir / (std::string(prefix) + kind + ".pgm"));
    write_pgm(*img, paths.back());
  }
  return paths;
}

}  // namespace pint
