#pragma once

#include "megan/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace megan::disc {

using megan::Mat;
using megan::Param;
using megan::ParamRefs;
using megan::Rng;
using megan::Tensor;
using namespace megan::nn;

struct DiscConfig {
  int views = 12;
  int length = 512;
  int cond_dim = 3;
  int crop_length = 128;
  int pe_channels = 8;  // sinusoidal position channels appended per view

  std::string json() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "{\"cond_dim\":%d,\"crop_length\":%d,\"length\":%d,\"pe_channels\":%d,\"views\":%d}",
                  cond_dim, crop_length, length, pe_channels, views);
    return buf;
  }
};

// ---------------------------------------------------------------------------
// View shuffling (Eq.-style row permutation shared by signals and angles),
// cropping and positional encoding. These are plain data ops; gradients for
// the generator path are provided as explicit *_backward helpers.
// ---------------------------------------------------------------------------

/// Validates that P is an n x n permutation matrix (0/1 doubly stochastic).
inline void validate_permutation(const Eigen::MatrixXi& p) {
  if (p.rows() != p.cols() || p.rows() < 1) throw std::invalid_argument("P must be square");
  for (int i = 0; i < p.rows(); ++i) {
    int row_sum = 0, col_sum = 0;
    for (int j = 0; j < p.cols(); ++j) {
      if (p(i, j) != 0 && p(i, j) != 1) throw std::invalid_argument("P entries must be 0 or 1");
      row_sum += p(i, j);
      col_sum += p(j, i);
    }
    if (row_sum != 1 || col_sum != 1) throw std::invalid_argument("P must be a permutation matrix");
  }
}

/// Draws a uniformly random permutation matrix.
inline Eigen::MatrixXi random_permutation(int n, Rng& rng) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  Eigen::MatrixXi p = Eigen::MatrixXi::Zero(n, n);
  for (int i = 0; i < n; ++i) p(perm[i], i) = 1;  // result row i <- input row perm[i]
  return p;
}

/// X' = (X^T P)^T = P^T X: row i of the result is the row j of the input
/// with P(j, i) == 1. Applies per sample of a (B, n, L) tensor.
template <typename S>
Tensor<S> shuffle_views(const Tensor<S>& x, const Eigen::MatrixXi& p) {
  validate_permutation(p);
  const int n = static_cast<int>(p.rows());
  if (x.channels != n) throw std::invalid_argument("shuffle_views: row count mismatch");
  std::vector<int> src(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (p(j, i) == 1) src[i] = j;
  Tensor<S> out(x.batch, n, x.length);
  for (int i = 0; i < n; ++i) out.m.row(i) = x.m.row(src[i]);
  return out;
}

/// Same operation on an n x c row-per-view matrix (e.g. the viewpoint
/// encoding).
template <typename M>
M shuffle_rows(const M& x, const Eigen::MatrixXi& p) {
  validate_permutation(p);
  M out(x.rows(), x.cols());
  for (int i = 0; i < p.rows(); ++i)
    for (int j = 0; j < p.rows(); ++j)
      if (p(j, i) == 1) out.row(i) = x.row(j);
  return out;
}

template <typename S>
Tensor<S> shuffle_views_backward(const Tensor<S>& dshuffled, const Eigen::MatrixXi& p) {
  return shuffle_views(dshuffled, Eigen::MatrixXi(p.transpose()));
}

/// Appends pe_channels sinusoidal absolute-position channels to every view:
/// a (B, n, L) signal tensor becomes (B*n, 1+pe_channels, L). Frequencies are
/// geometric from 1 down to 1e-4 radians/sample; channel 0 is the signal.
template <typename S>
Tensor<S> positional_encode(const Tensor<S>& x, int pe_channels = 8) {
  const int pairs = pe_channels / 2;
  Tensor<S> out(x.batch * x.channels, 1 + pe_channels, x.length);
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> pe(pe_channels, x.length);
  for (int i = 0; i < pairs; ++i) {
    const double omega = std::pow(10000.0, -static_cast<double>(i) / (pairs - 1));
    for (int t = 0; t < x.length; ++t) {
      pe(2 * i, t) = static_cast<S>(std::sin(omega * t));
      pe(2 * i + 1, t) = static_cast<S>(std::cos(omega * t));
    }
  }
  for (int b = 0; b < x.batch; ++b) {
    for (int v = 0; v < x.channels; ++v) {
      auto dst = out.sample(b * x.channels + v);
      dst.row(0) = x.sample(b).row(v);
      dst.bottomRows(pe_channels) = pe;
    }
  }
  return out;
}

template <typename S>
Tensor<S> positional_encode_backward(const Tensor<S>& dpe, int views) {
  const int B = dpe.batch / views;
  Tensor<S> dx(B, views, dpe.length);
  for (int b = 0; b < B; ++b)
    for (int v = 0; v < views; ++v) dx.sample(b).row(v) = dpe.sample(b * views + v).row(0);
  return dx;
}

/// Copies columns [eps, eps + len). Requires eps >= 0 and eps + len < L.
template <typename S>
Tensor<S> crop_window(const Tensor<S>& x, int eps, int len) {
  if (eps < 0 || len < 1 || eps + len >= x.length)
    throw std::invalid_argument("crop_window: offset out of range (need eps + len < L)");
  Tensor<S> out(x.batch, x.channels, len);
  for (int b = 0; b < x.batch; ++b) out.sample(b) = x.sample(b).middleCols(eps, len);
  return out;
}

template <typename S>
Tensor<S> crop_window_backward(const Tensor<S>& dcrop, int eps, int full_length) {
  Tensor<S> dx(dcrop.batch, dcrop.channels, full_length);
  for (int b = 0; b < dcrop.batch; ++b) dx.sample(b).middleCols(eps, dcrop.length) = dcrop.sample(b);
  return dx;
}

/// Uniform crop offset in [0, L - len - 1].
inline int random_crop_offset(int full_length, int len, Rng& rng) {
  return static_cast<int>(rng.below(static_cast<std::uint64_t>(full_length - len)));
}

// ---------------------------------------------------------------------------
// Major discriminator: three conv blocks (conv k4 s2 / instance norm / leaky
// ReLU), then a least-squares realness head and a disease-logit head off the
// shared trunk.
// ---------------------------------------------------------------------------
template <typename S>
class MajorDiscriminator {
 public:
  MajorDiscriminator(const DiscConfig& cfg, Rng& rng)
      : cfg_(cfg),
        conv1_("d.conv1", cfg.views, 64, 4, 2, 1, rng), in1_(64),
        conv2_("d.conv2", 64, 128, 4, 2, 1, rng), in2_(128),
        conv3_("d.conv3", 128, 256, 4, 2, 1, rng), in3_(256),
        rf_head_("d.rf", 256 * (cfg.length / 8), 1, rng),
        cls_head_("d.cls", 256 * (cfg.length / 8), cfg.cond_dim, rng) {
    collect(params_);
  }

  struct Output {
    Tensor<S> realness;       // (B, 1, 1)
    Tensor<S> disease_logits; // (B, k, 1)
  };

  Output forward(const Tensor<S>& x) {
    Tensor<S> h = lr1_.forward(in1_.forward(conv1_.forward(x)));
    h = lr2_.forward(in2_.forward(conv2_.forward(h)));
    h = lr3_.forward(in3_.forward(conv3_.forward(h)));
    trunk_out_ = h.flattened();
    return {rf_head_.forward(trunk_out_), cls_head_.forward(trunk_out_)};
  }

  Tensor<S> backward(const Tensor<S>& d_realness, const Tensor<S>& d_logits, bool param_grads = true) {
    Tensor<S> d_flat = rf_head_.backward(d_realness, param_grads);
    d_flat.m += cls_head_.backward(d_logits, param_grads).m;
    Tensor<S> dh = d_flat.unflattened(256, cfg_.length / 8);
    dh = conv3_.backward(in3_.backward(lr3_.backward(dh)), param_grads);
    dh = conv2_.backward(in2_.backward(lr2_.backward(dh)), param_grads);
    return conv1_.backward(in1_.backward(lr1_.backward(dh)), param_grads);
  }

  ParamRefs<S>& params() { return params_; }
  void collect(ParamRefs<S>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
    conv3_.collect(out);
    rf_head_.collect(out);
    cls_head_.collect(out);
  }

  // Test hooks.
  Dense<S>& realness_head() { return rf_head_; }
  Dense<S>& class_head() { return cls_head_; }
  Conv1d<S>& trunk_conv(int i) { return i == 0 ? conv1_ : (i == 1 ? conv2_ : conv3_); }

 private:
  DiscConfig cfg_;
  Conv1d<S> conv1_, conv2_, conv3_;
  InstanceNorm1d<S> in1_, in2_, in3_;
  LeakyReLU<S> lr1_, lr2_, lr3_;
  Dense<S> rf_head_, cls_head_;
  Tensor<S> trunk_out_;
  ParamRefs<S> params_;
};

// ---------------------------------------------------------------------------
// View discriminator: a shared per-view subnetwork embeds each positionally
// encoded crop into 64 features; the concatenation runs through an FC stack
// and tanh to regress the 2n shuffled viewpoint encodings (row-major).
// ---------------------------------------------------------------------------
template <typename S>
class ViewDiscriminator {
 public:
  static constexpr int kEmbedDim = 64;

  ViewDiscriminator(const DiscConfig& cfg, Rng& rng)
      : cfg_(cfg),
        conv1_("v.conv1", 1 + cfg.pe_channels, 32, 4, 2, 1, rng), in1_(32),
        conv2_("v.conv2", 32, 64, 4, 2, 1, rng), in2_(64),
        conv3_("v.conv3", 64, 64, 4, 2, 1, rng), in3_(64),
        embed_("v.embed", 64 * (cfg.crop_length / 8), kEmbedDim, rng),
        fc1_("v.fc1", cfg.views * kEmbedDim, 256, rng),
        fc2_("v.fc2", 256, 2 * cfg.views, rng) {
    collect(params_);
  }

  /// crops: (B*views, 1+pe_channels, crop_length) -> (B, 2*views, 1) in (-1,1).
  Tensor<S> forward(const Tensor<S>& crops) {
    const int n = cfg_.views;
    if (crops.batch % n != 0) throw std::invalid_argument("ViewDiscriminator: batch not a multiple of views");
    const int B = crops.batch / n;

    Tensor<S> h = lr1_.forward(in1_.forward(conv1_.forward(crops)));
    h = lr2_.forward(in2_.forward(conv2_.forward(h)));
    h = lr3_.forward(in3_.forward(conv3_.forward(h)));
    Tensor<S> emb = lr4_.forward(embed_.forward(h.flattened()));  // (B*n, 64, 1)

    Tensor<S> cat(B, n * kEmbedDim, 1);
    cat.m = Eigen::Map<const Mat<S>>(emb.m.data(), n * kEmbedDim, B);
    return tanh_.forward(fc2_.forward(lr5_.forward(fc1_.forward(cat))));
  }

  Tensor<S> backward(const Tensor<S>& dout, bool param_grads = true) {
    const int n = cfg_.views;
    const int B = dout.batch;
    Tensor<S> d_cat = fc1_.backward(lr5_.backward(fc2_.backward(tanh_.backward(dout), param_grads)), param_grads);
    Tensor<S> d_emb(B * n, kEmbedDim, 1);
    d_emb.m = Eigen::Map<const Mat<S>>(d_cat.m.data(), kEmbedDim, B * n);
    Tensor<S> dh = embed_.backward(lr4_.backward(d_emb), param_grads)
                       .unflattened(64, cfg_.crop_length / 8);
    dh = conv3_.backward(in3_.backward(lr3_.backward(dh)), param_grads);
    dh = conv2_.backward(in2_.backward(lr2_.backward(dh)), param_grads);
    return conv1_.backward(in1_.backward(lr1_.backward(dh)), param_grads);
  }

  ParamRefs<S>& params() { return params_; }
  void collect(ParamRefs<S>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
    conv3_.collect(out);
    embed_.collect(out);
    fc1_.collect(out);
    fc2_.collect(out);
  }

 private:
  DiscConfig cfg_;
  Conv1d<S> conv1_, conv2_, conv3_;
  InstanceNorm1d<S> in1_, in2_, in3_;
  LeakyReLU<S> lr1_, lr2_, lr3_, lr4_, lr5_;
  Dense<S> embed_;
  Dense<S> fc1_, fc2_;
  Tanh<S> tanh_;
  ParamRefs<S> params_;
};

}  // namespace megan::disc
