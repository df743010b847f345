#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace megan {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Batch of 1D multi-channel signals, stored as one channels x (batch*length)
/// matrix. Sample b occupies the contiguous column block [b*length, (b+1)*length),
/// which makes per-channel ops row-wise and keeps convolutions as single GEMMs
/// over the whole batch. A tensor with length == 1 doubles as a batch of
/// feature vectors (channels x batch).
template <typename S>
struct Tensor {
  int batch = 0;
  int channels = 0;
  int length = 0;
  Mat<S> m;

  Tensor() = default;
  Tensor(int b, int c, int l) : batch(b), channels(c), length(l), m(Mat<S>::Zero(c, b * l)) {}

  int cols() const { return batch * length; }

  auto sample(int b) { return m.middleCols(b * length, length); }
  auto sample(int b) const { return m.middleCols(b * length, length); }

  void set_zero() { m.setZero(); }

  bool all_finite() const {
    for (int j = 0; j < m.cols(); ++j)
      for (int i = 0; i < m.rows(); ++i)
        if (!std::isfinite(static_cast<double>(m(i, j)))) return false;
    return true;
  }

  /// Reinterprets each sample's channels x length block as one flat feature
  /// vector (column-major, so channel index varies fastest within a position).
  Tensor<S> flattened() const {
    Tensor<S> out;
    out.batch = batch;
    out.channels = channels * length;
    out.length = 1;
    out.m = Eigen::Map<const Mat<S>>(m.data(), channels * length, batch);
    return out;
  }

  /// Inverse of flattened().
  Tensor<S> unflattened(int c, int l) const {
    if (channels != c * l || length != 1)
      throw std::invalid_argument("unflattened: shape mismatch");
    Tensor<S> out;
    out.batch = batch;
    out.channels = c;
    out.length = l;
    out.m = Eigen::Map<const Mat<S>>(m.data(), c, batch * l);
    return out;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.batch = batch;
    out.channels = channels;
    out.length = length;
    out.m = m.template cast<T>();
    return out;
  }
};

/// Named parameter (or non-trainable buffer) of a layer.
template <typename S>
struct Param {
  std::string name;
  Mat<S> data;
  Mat<S> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, int rows, int cols, bool train = true)
      : name(std::move(n)), data(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)), trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

template <typename S>
using ParamRefs = std::vector<Param<S>*>;

template <typename S>
inline void zero_grads(const ParamRefs<S>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename S>
inline double grad_global_norm(const ParamRefs<S>& params) {
  double acc = 0.0;
  for (const auto* p : params)
    if (p->trainable) acc += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(acc);
}

template <typename S>
inline void clip_grad_norm(const ParamRefs<S>& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto* p : params)
      if (p->trainable) p->grad *= scale;
  }
}

}  // namespace megan
