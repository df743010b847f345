#pragma once

#include "megan/rng.hpp"
#include "megan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace megan::nn {

using megan::Mat;
using megan::Param;
using megan::ParamRefs;
using megan::Rng;
using megan::Tensor;
using megan::Vec;

/// Centered uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
/// Fill order is fixed (column-major) so results are reproducible.
template <typename S>
inline void init_fan_in(Mat<S>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int j = 0; j < w.cols(); ++j)
    for (int i = 0; i < w.rows(); ++i) w(i, j) = static_cast<S>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// Fully connected layer. Input is a length-1 tensor (features x batch).
// ---------------------------------------------------------------------------
template <typename S>
class Dense {
 public:
  Dense(const std::string& prefix, int in, int out, Rng& rng)
      : in_(in), out_(out), w_(prefix + ".w", out, in), b_(prefix + ".b", out, 1) {
    init_fan_in(w_.data, in, rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.channels != in_ || x.length != 1) throw std::invalid_argument("Dense: bad input shape");
    x_ = x.m;
    Tensor<S> y(x.batch, out_, 1);
    y.m.noalias() = w_.data * x.m;
    y.m.colwise() += b_.data.col(0);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool param_grads = true) {
    if (param_grads) {
      w_.grad.noalias() += dy.m * x_.transpose();
      b_.grad.col(0) += dy.m.rowwise().sum();
    }
    Tensor<S> dx(dy.batch, in_, 1);
    dx.m.noalias() = w_.data.transpose() * dy.m;
    return dx;
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  Param<S>& weight() { return w_; }
  Param<S>& bias() { return b_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Param<S> w_, b_;
  Mat<S> x_;
};

// ---------------------------------------------------------------------------
// 1D convolution via im2col; one GEMM per direction over the whole batch.
// Weight layout: (c_out) x (k*c_in), row block j*c_in..(j+1)*c_in for tap j.
// ---------------------------------------------------------------------------
template <typename S>
class Conv1d {
 public:
  Conv1d(const std::string& prefix, int c_in, int c_out, int k, int stride, int pad, Rng& rng)
      : c_in_(c_in), c_out_(c_out), k_(k), stride_(stride), pad_(pad),
        w_(prefix + ".w", c_out, c_in * k), b_(prefix + ".b", c_out, 1) {
    if (k < 1 || stride < 1 || pad < 0) throw std::invalid_argument("Conv1d: bad config");
    init_fan_in(w_.data, c_in * k, rng);
  }

  int out_length(int l_in) const { return (l_in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<S> forward(const Tensor<S>& x) {
    if (x.channels != c_in_) throw std::invalid_argument("Conv1d: channel mismatch");
    l_in_ = x.length;
    batch_ = x.batch;
    const int l_out = out_length(l_in_);
    if (l_out < 1) throw std::invalid_argument("Conv1d: input too short");
    im2col(x, l_out);
    Tensor<S> y(x.batch, c_out_, l_out);
    y.m.noalias() = w_.data * cols_;
    y.m.colwise() += b_.data.col(0);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool param_grads = true) {
    if (param_grads) {
      w_.grad.noalias() += dy.m * cols_.transpose();
      b_.grad.col(0) += dy.m.rowwise().sum();
    }
    Mat<S> dcols;
    dcols.noalias() = w_.data.transpose() * dy.m;
    return col2im(dcols, dy.length);
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  Param<S>& weight() { return w_; }
  Param<S>& bias() { return b_; }

 private:
  void im2col(const Tensor<S>& x, int l_out) {
    cols_.setZero(c_in_ * k_, static_cast<Eigen::Index>(x.batch) * l_out);
    for (int b = 0; b < x.batch; ++b) {
      for (int j = 0; j < k_; ++j) {
        // Output position t reads input position t*stride - pad + j.
        const int off = j - pad_;
        const int t0 = std::max(0, (-off + stride_ - 1) / stride_);
        const int t1 = std::min(l_out - 1, (l_in_ - 1 - off) / stride_);
        if (t1 < t0) continue;
        const int count = t1 - t0 + 1;
        const S* src = x.m.data() + static_cast<std::ptrdiff_t>(b * l_in_ + t0 * stride_ + off) * c_in_;
        Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>> view(
            src, c_in_, count, Eigen::OuterStride<>(static_cast<Eigen::Index>(c_in_) * stride_));
        cols_.block(j * c_in_, static_cast<Eigen::Index>(b) * l_out + t0, c_in_, count) = view;
      }
    }
  }

  Tensor<S> col2im(const Mat<S>& dcols, int l_out) {
    Tensor<S> dx(batch_, c_in_, l_in_);
    for (int b = 0; b < batch_; ++b) {
      for (int j = 0; j < k_; ++j) {
        const int off = j - pad_;
        const int t0 = std::max(0, (-off + stride_ - 1) / stride_);
        const int t1 = std::min(l_out - 1, (l_in_ - 1 - off) / stride_);
        if (t1 < t0) continue;
        const int count = t1 - t0 + 1;
        S* dst = dx.m.data() + static_cast<std::ptrdiff_t>(b * l_in_ + t0 * stride_ + off) * c_in_;
        Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>> view(
            dst, c_in_, count, Eigen::OuterStride<>(static_cast<Eigen::Index>(c_in_) * stride_));
        view += dcols.block(j * c_in_, static_cast<Eigen::Index>(b) * l_out + t0, c_in_, count);
      }
    }
    return dx;
  }

  int c_in_, c_out_, k_, stride_, pad_;
  int l_in_ = 0, batch_ = 0;
  Param<S> w_, b_;
  Mat<S> cols_;
};

// ---------------------------------------------------------------------------
// Batch normalization over (batch, length) per channel. Training mode uses
// batch statistics (population variance); eval mode uses running estimates.
// ---------------------------------------------------------------------------
template <typename S>
class BatchNorm1d {
 public:
  BatchNorm1d(const std::string& prefix, int channels, S momentum = static_cast<S>(0.1))
      : c_(channels), momentum_(momentum),
        gamma_(prefix + ".gamma", channels, 1), beta_(prefix + ".beta", channels, 1),
        run_mean_(prefix + ".running_mean", channels, 1, false),
        run_var_(prefix + ".running_var", channels, 1, false) {
    gamma_.data.setOnes();
    run_var_.data.setOnes();
  }

  void set_training(bool t) { training_ = t; }

  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y(x.batch, c_, x.length);
    if (training_) {
      mean_ = x.m.rowwise().mean();
      Mat<S> centered = x.m.colwise() - mean_;
      var_ = centered.array().square().matrix().rowwise().mean();
      inv_std_ = (var_.array() + eps_).sqrt().inverse().matrix();
      xhat_ = (centered.array().colwise() * inv_std_.array()).matrix();
      run_mean_.data.col(0) = (S(1) - momentum_) * run_mean_.data.col(0) + momentum_ * mean_;
      run_var_.data.col(0) = (S(1) - momentum_) * run_var_.data.col(0) + momentum_ * var_;
      y.m = ((xhat_.array().colwise() * gamma_.data.col(0).array()).colwise() + beta_.data.col(0).array()).matrix();
    } else {
      Vec<S> inv = (run_var_.data.col(0).array() + eps_).sqrt().inverse().matrix();
      Mat<S> centered = x.m.colwise() - run_mean_.data.col(0);
      y.m = (((centered.array().colwise() * inv.array()).colwise() * gamma_.data.col(0).array()).colwise() +
             beta_.data.col(0).array()).matrix();
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool param_grads = true) {
    if (!training_) throw std::logic_error("BatchNorm1d: backward in eval mode");
    if (param_grads) {
      gamma_.grad.col(0) += (dy.m.array() * xhat_.array()).matrix().rowwise().sum();
      beta_.grad.col(0) += dy.m.rowwise().sum();
    }
    // dx = gamma*inv_std * (dy - mean(dy) - xhat * mean(dy*xhat)) per channel.
    Vec<S> mean_dy = dy.m.rowwise().mean();
    Vec<S> mean_dyx = (dy.m.array() * xhat_.array()).matrix().rowwise().mean();
    Tensor<S> dx(dy.batch, c_, dy.length);
    Mat<S> centered_dy = dy.m.colwise() - mean_dy;
    dx.m = ((centered_dy.array() - (xhat_.array().colwise() * mean_dyx.array())).colwise() *
            (gamma_.data.col(0).array() * inv_std_.array())).matrix();
    return dx;
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&run_mean_);
    out.push_back(&run_var_);
  }

  Param<S>& gamma() { return gamma_; }
  Param<S>& beta() { return beta_; }
  Param<S>& running_mean() { return run_mean_; }
  Param<S>& running_var() { return run_var_; }

 private:
  int c_;
  S momentum_;
  static constexpr S eps_ = static_cast<S>(1e-5);
  bool training_ = true;
  Param<S> gamma_, beta_, run_mean_, run_var_;
  Vec<S> mean_, var_, inv_std_;
  Mat<S> xhat_;
};

// ---------------------------------------------------------------------------
// Instance normalization per (sample, channel) over length, no affine part.
// ---------------------------------------------------------------------------
template <typename S>
class InstanceNorm1d {
 public:
  explicit InstanceNorm1d(int channels) : c_(channels) {}

  Tensor<S> forward(const Tensor<S>& x) {
    batch_ = x.batch;
    length_ = x.length;
    xhat_.resize(x.channels, x.cols());
    inv_std_.resize(x.channels, x.batch);
    for (int b = 0; b < x.batch; ++b) {
      auto xs = x.sample(b);
      Vec<S> mean = xs.rowwise().mean();
      Mat<S> centered = xs.colwise() - mean;
      Vec<S> var = centered.array().square().matrix().rowwise().mean();
      inv_std_.col(b) = (var.array() + eps_).sqrt().inverse().matrix();
      xhat_.middleCols(static_cast<Eigen::Index>(b) * x.length, x.length) =
          (centered.array().colwise() * inv_std_.col(b).array()).matrix();
    }
    Tensor<S> y(x.batch, c_, x.length);
    y.m = xhat_;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool /*param_grads*/ = true) {
    Tensor<S> dx(batch_, c_, length_);
    for (int b = 0; b < batch_; ++b) {
      auto dys = dy.sample(b);
      auto xh = xhat_.middleCols(static_cast<Eigen::Index>(b) * length_, length_);
      Vec<S> mean_dy = dys.rowwise().mean();
      Vec<S> mean_dyx = (dys.array() * xh.array()).matrix().rowwise().mean();
      Mat<S> centered_dy = dys.colwise() - mean_dy;
      dx.sample(b) = ((centered_dy.array() - (xh.array().colwise() * mean_dyx.array())).colwise() *
                      inv_std_.col(b).array()).matrix();
    }
    return dx;
  }

 private:
  int c_;
  static constexpr S eps_ = static_cast<S>(1e-5);
  Mat<S> xhat_;
  Mat<S> inv_std_;
  int batch_ = 0, length_ = 0;
};

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------
template <typename S>
class ReLU {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y = x;
    y.m = y.m.cwiseMax(S(0));
    y_ = y.m;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx = dy;
    dx.m = (y_.array() > S(0)).select(dy.m, Mat<S>::Zero(dy.m.rows(), dy.m.cols()));
    return dx;
  }

 private:
  Mat<S> y_;
};

template <typename S>
class LeakyReLU {
 public:
  explicit LeakyReLU(S slope = static_cast<S>(0.2)) : slope_(slope) {}
  Tensor<S> forward(const Tensor<S>& x) {
    factor_ = (x.m.array() > S(0)).select(Mat<S>::Ones(x.m.rows(), x.m.cols()),
                                          Mat<S>::Constant(x.m.rows(), x.m.cols(), slope_));
    Tensor<S> y = x;
    y.m = x.m.cwiseProduct(factor_);
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx = dy;
    dx.m = dy.m.cwiseProduct(factor_);
    return dx;
  }

 private:
  S slope_;
  Mat<S> factor_;
};

template <typename S>
class Sigmoid {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y = x;
    y.m = (((-x.m.array()).exp() + S(1)).inverse()).matrix();
    y_ = y.m;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx = dy;
    dx.m = (dy.m.array() * y_.array() * (S(1) - y_.array())).matrix();
    return dx;
  }

 private:
  Mat<S> y_;
};

template <typename S>
class Tanh {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y = x;
    y.m = x.m.array().tanh().matrix();
    y_ = y.m;
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx = dy;
    dx.m = (dy.m.array() * (S(1) - y_.array().square())).matrix();
    return dx;
  }

 private:
  Mat<S> y_;
};

// ---------------------------------------------------------------------------
// Factor-2 linear upsample. out[2t] = in[t]; out[2t+1] = (in[t]+in[t+1])/2,
// with the final odd slot replicating the last sample:
// [0,1,2] -> [0, 0.5, 1, 1.5, 2, 2].
// ---------------------------------------------------------------------------
template <typename S>
class Upsample2xLinear {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    l_in_ = x.length;
    Tensor<S> y(x.batch, x.channels, 2 * x.length);
    for (int b = 0; b < x.batch; ++b) {
      auto xs = x.sample(b);
      auto ys = y.sample(b);
      for (int t = 0; t < x.length; ++t) {
        ys.col(2 * t) = xs.col(t);
        if (t + 1 < x.length)
          ys.col(2 * t + 1) = S(0.5) * (xs.col(t) + xs.col(t + 1));
        else
          ys.col(2 * t + 1) = xs.col(t);
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx(dy.batch, dy.channels, l_in_);
    for (int b = 0; b < dy.batch; ++b) {
      auto dys = dy.sample(b);
      auto dxs = dx.sample(b);
      for (int t = 0; t < l_in_; ++t) {
        dxs.col(t) = dys.col(2 * t);
        if (t > 0) dxs.col(t) += S(0.5) * dys.col(2 * t - 1);
        if (t + 1 < l_in_)
          dxs.col(t) += S(0.5) * dys.col(2 * t + 1);
        else
          dxs.col(t) += dys.col(2 * t + 1);
      }
    }
    return dx;
  }

 private:
  int l_in_ = 0;
};

// ---------------------------------------------------------------------------
// 1D max / average pooling. Average pooling divides by the kernel size
// regardless of padding overlap.
// ---------------------------------------------------------------------------
template <typename S>
class Pool1d {
 public:
  enum class Kind { Max, Avg };

  Pool1d(Kind kind, int k, int stride, int pad = 0) : kind_(kind), k_(k), stride_(stride), pad_(pad) {}

  int out_length(int l_in) const { return (l_in + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<S> forward(const Tensor<S>& x) {
    l_in_ = x.length;
    const int l_out = out_length(x.length);
    Tensor<S> y(x.batch, x.channels, l_out);
    if (kind_ == Kind::Max) argmax_.assign(static_cast<size_t>(x.batch) * x.channels * l_out, -1);
    for (int b = 0; b < x.batch; ++b) {
      auto xs = x.sample(b);
      auto ys = y.sample(b);
      for (int t = 0; t < l_out; ++t) {
        const int start = t * stride_ - pad_;
        if (kind_ == Kind::Avg) {
          Vec<S> acc = Vec<S>::Zero(x.channels);
          for (int j = 0; j < k_; ++j) {
            const int p = start + j;
            if (p >= 0 && p < x.length) acc += xs.col(p);
          }
          ys.col(t) = acc / static_cast<S>(k_);
        } else {
          for (int c = 0; c < x.channels; ++c) {
            S best = std::numeric_limits<S>::lowest();
            int best_p = -1;
            for (int j = 0; j < k_; ++j) {
              const int p = start + j;
              if (p >= 0 && p < x.length && xs(c, p) > best) {
                best = xs(c, p);
                best_p = p;
              }
            }
            ys(c, t) = best;
            argmax_[idx(b, c, t, x.channels, l_out)] = best_p;
          }
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx(dy.batch, dy.channels, l_in_);
    for (int b = 0; b < dy.batch; ++b) {
      auto dys = dy.sample(b);
      auto dxs = dx.sample(b);
      for (int t = 0; t < dy.length; ++t) {
        if (kind_ == Kind::Avg) {
          const int start = t * stride_ - pad_;
          for (int j = 0; j < k_; ++j) {
            const int p = start + j;
            if (p >= 0 && p < l_in_) dxs.col(p) += dys.col(t) / static_cast<S>(k_);
          }
        } else {
          for (int c = 0; c < dy.channels; ++c) {
            const int p = argmax_[idx(b, c, t, dy.channels, dy.length)];
            if (p >= 0) dxs(c, p) += dys(c, t);
          }
        }
      }
    }
    return dx;
  }

 private:
  static size_t idx(int b, int c, int t, int channels, int l_out) {
    return (static_cast<size_t>(b) * channels + c) * l_out + t;
  }
  Kind kind_;
  int k_, stride_, pad_;
  int l_in_ = 0;
  std::vector<int> argmax_;
};

template <typename S>
class GlobalAvgPool {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    l_in_ = x.length;
    Tensor<S> y(x.batch, x.channels, 1);
    for (int b = 0; b < x.batch; ++b) y.m.col(b) = x.sample(b).rowwise().mean();
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy, bool = true) {
    Tensor<S> dx(dy.batch, dy.channels, l_in_);
    for (int b = 0; b < dy.batch; ++b) dx.sample(b).colwise() += dy.m.col(b) / static_cast<S>(l_in_);
    return dx;
  }

 private:
  int l_in_ = 0;
};

// ---------------------------------------------------------------------------
// Channel concatenation helpers (used by MixupNorm's attention and Inception).
// ---------------------------------------------------------------------------
template <typename S>
inline Tensor<S> concat_channels(const std::vector<const Tensor<S>*>& parts) {
  int c_total = 0;
  for (const auto* p : parts) c_total += p->channels;
  Tensor<S> out(parts[0]->batch, c_total, parts[0]->length);
  int row = 0;
  for (const auto* p : parts) {
    out.m.middleRows(row, p->channels) = p->m;
    row += p->channels;
  }
  return out;
}

template <typename S>
inline std::vector<Tensor<S>> split_channels(const Tensor<S>& x, const std::vector<int>& sizes) {
  std::vector<Tensor<S>> out;
  int row = 0;
  for (int c : sizes) {
    Tensor<S> part(x.batch, c, x.length);
    part.m = x.m.middleRows(row, c);
    out.push_back(std::move(part));
    row += c;
  }
  return out;
}

}  // namespace megan::nn
