#pragma once

#include "megan/layers.hpp"

#include <memory>
#include <string>
#include <vector>

namespace megan::metrics {

using megan::Mat;
using megan::ParamRefs;
using megan::Rng;
using megan::Tensor;

/// Inception-v3 trunk with every 2D operation collapsed to 1D: each conv
/// keeps the first dimension of its 2D kernel (7x1 -> k7, 1x7 -> k1), strides
/// and pools collapse the same way. Input is a 12 x 512 signal; global
/// average pooling yields the 2048-dim feature.
class Inception1D {
 public:
  static constexpr int kFeatureDim = 2048;

  Inception1D(int in_channels, Rng& rng);
  ~Inception1D();

  /// x: (B, in_channels, 512) -> (B, 2048, 1).
  Tensor<float> forward(const Tensor<float>& x);
  Tensor<float> backward(const Tensor<float>& dfeatures, bool param_grads = true);

  void set_training(bool t);
  ParamRefs<float>& params();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace megan::metrics
