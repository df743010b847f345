#pragma once

#include "megan/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace megan::img {

/// RGB image with interleaved doubles in [0, 1], row-major [y][x][channel].
struct Image {
  int height = 0, width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}
  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

/// Bilinear resize with the half-pixel-center convention.
Image bilinear_resize(const Image& in, int out_h, int out_w);

/// Resizes to 46x46 and tiles into 23x23 = 529 non-overlapping 2x2x3 patches
/// in row-major patch order. Each patch flattens to 12 values with the
/// channel index varying fastest: value (dy, dx, c) lands at 3*(2*dy+dx)+c.
/// Returns all 529 columns; callers drop the tail.
Eigen::MatrixXf patchify_full(const Image& img);

/// The 12 x 512 signal-shaped view: patchify_full with the last 17 patches
/// dropped.
Eigen::MatrixXf patchify_image(const Image& img);

/// Rebuilds the pixels covered by the given patch columns (inverse of the
/// flattening above); used to verify the tiling is lossless.
Image unpatchify(const Eigen::MatrixXf& patches, int out_h = 46, int out_w = 46);

/// Labeled small-image corpus. On disk: corpus.json + images.u8 holding
/// count*height*width*3 bytes.
struct ImageCorpus {
  int height = 0, width = 0, classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  int count() const { return static_cast<int>(labels.size()); }
  Image image(int i) const;

  void save(const std::string& dir) const;
  static ImageCorpus load(const std::string& dir);
};

/// Procedural 8-ish-class texture corpus (stripes, checkers, blobs,
/// gradients, noise) used to smoke-pretrain the feature extractor when no
/// real image corpus is available.
ImageCorpus synth_image_corpus(int count, int classes, std::uint64_t seed, int size = 46);

}  // namespace megan::img
