#pragma once

#include "megan/adam.hpp"
#include "megan/checkpoint.hpp"
#include "megan/errors.hpp"
#include "megan/layers.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace megan::gen {

using megan::Mat;
using megan::Param;
using megan::ParamRefs;
using megan::Rng;
using megan::Tensor;
using namespace megan::nn;

/// Architecture knobs for the two-stage generator. The four ladder levels are
/// fixed at channel widths (256, 128, 64, 32) over lengths (64, 128, 256, 512)
/// with condition widths (32, 32, 16, 16).
struct GenConfig {
  int noise_dim = 128;       // z
  int cond_dim = 3;          // c (disease categories)
  int style_dim = 128;       // z' channels
  int cond_style_dim = 32;   // c' channels
  int hidden_dim = 64;       // d_h inside MixupNorm
  int common_channels = 32;  // per-level projection width, also S channels
  int length = 512;
  int views = 12;

  static constexpr int kLevels = 4;
  static constexpr std::array<int, kLevels> level_channels{256, 128, 64, 32};
  static constexpr std::array<int, kLevels> cond_channels{32, 32, 16, 16};
  static constexpr std::array<int, kLevels> level_lengths{64, 128, 256, 512};
  static constexpr int seed_channels = 256;  // z is mapped to seed_channels x seed_length
  static constexpr int seed_length = 32;
  static constexpr int cond_seed_channels = 32;

  std::string json() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"common_channels\":%d,\"cond_dim\":%d,\"cond_style_dim\":%d,\"hidden_dim\":%d,"
                  "\"length\":%d,\"noise_dim\":%d,\"style_dim\":%d,\"views\":%d}",
                  common_channels, cond_dim, cond_style_dim, hidden_dim, length, noise_dim, style_dim, views);
    return buf;
  }
};

// ---------------------------------------------------------------------------
// Ladder convolution block: linear 2x upsample -> conv(k3, p1) -> BN -> ReLU.
// ---------------------------------------------------------------------------
template <typename S>
class ConvBlock {
 public:
  ConvBlock(const std::string& prefix, int c_in, int c_out, Rng& rng)
      : conv_(prefix + ".conv", c_in, c_out, 3, 1, 1, rng), bn_(prefix + ".bn", c_out) {}

  Tensor<S> forward(const Tensor<S>& x) { return act_.forward(bn_.forward(conv_.forward(up_.forward(x)))); }

  Tensor<S> backward(const Tensor<S>& dy, bool param_grads = true) {
    return up_.backward(conv_.backward(bn_.backward(act_.backward(dy), param_grads), param_grads));
  }

  void set_training(bool t) { bn_.set_training(t); }
  void collect(ParamRefs<S>& out) {
    conv_.collect(out);
    bn_.collect(out);
  }

 private:
  Upsample2xLinear<S> up_;
  Conv1d<S> conv_;
  BatchNorm1d<S> bn_;
  ReLU<S> act_;
};

// ---------------------------------------------------------------------------
// MixupNorm: length-wise conditional normalization. A spatial attention
// computed from [z_i, c_i] blends a noise style (z' -> z*, constant along
// length) with a disease style (c' -> c*, varying along length); the blend is
// mapped channel-wise to per-position (alpha, beta) which modulate the
// channel-normalized major-path representation.
// ---------------------------------------------------------------------------
template <typename S>
class MixupNorm {
 public:
  MixupNorm(const std::string& prefix, int channels, int cond_channels, int style_dim, int cond_style_dim,
            int hidden_dim, int length, Rng& rng)
      : c_(channels), kc_(cond_channels), dh_(hidden_dim), l_(length),
        attn_conv1_(prefix + ".attn.conv1", channels + cond_channels, (channels + cond_channels) / 2, 3, 1, 1, rng),
        attn_bn_(prefix + ".attn.bn", (channels + cond_channels) / 2),
        attn_conv2_(prefix + ".attn.conv2", (channels + cond_channels) / 2, 1, 3, 1, 1, rng),
        u_(prefix + ".u", style_dim, hidden_dim),
        v_(prefix + ".v", 1, length),
        b_(prefix + ".b", 1, length),
        w_(prefix + ".w", cond_style_dim, hidden_dim),
        ab_w_(prefix + ".ab.w", 2, hidden_dim),
        ab_b_(prefix + ".ab.b", 2, 1) {
    init_fan_in(u_.data, style_dim, rng);
    init_fan_in(v_.data, 1, rng);
    init_fan_in(w_.data, cond_style_dim, rng);
    init_fan_in(ab_w_.data, hidden_dim, rng);
    ab_b_.data(0, 0) = S(1);  // alpha starts at identity scale
  }

  /// z_i: (B, channels, length); c_i: (B, cond_channels, length);
  /// z_style: (B, style_dim, 1); c_style: (B, cond_style_dim, 1).
  Tensor<S> forward(const Tensor<S>& z_i, const Tensor<S>& c_i, const Tensor<S>& z_style,
                    const Tensor<S>& c_style) {
    const int B = z_i.batch;
    batch_ = B;

    Tensor<S> cat = concat_channels<S>({&z_i, &c_i});
    attn_ = attn_sig_.forward(
        attn_conv2_.forward(attn_relu_.forward(attn_bn_.forward(attn_conv1_.forward(cat)))));

    // Noise style, constant along length: z* = U^T z' per sample.
    z_style_in_ = z_style.m;
    z_star_.noalias() = u_.data.transpose() * z_style.m;  // d_h x B

    // Disease style, varying along length: c* = W^T relu(c' V + b).
    c_style_in_ = c_style.m;
    q_.resize(w_.data.rows(), static_cast<Eigen::Index>(B) * l_);
    for (int b = 0; b < B; ++b)
      q_.middleCols(static_cast<Eigen::Index>(b) * l_, l_) =
          c_style.m.col(b) * v_.data + Mat<S>::Ones(w_.data.rows(), 1) * b_.data;
    r_ = q_.cwiseMax(S(0));
    Tensor<S> c_star(B, dh_, l_);
    for (int b = 0; b < B; ++b)
      c_star.sample(b).noalias() = w_.data.transpose() * r_.middleCols(static_cast<Eigen::Index>(b) * l_, l_);
    c_star_ = c_star.m;

    // Blend per position: h = a*c* + (1-a)*z*.
    h_.resize(dh_, static_cast<Eigen::Index>(B) * l_);
    for (int b = 0; b < B; ++b) {
      auto a_row = attn_.sample(b);  // 1 x l
      for (int t = 0; t < l_; ++t) {
        const S a = a_row(0, t);
        h_.col(static_cast<Eigen::Index>(b) * l_ + t) =
            a * c_star.sample(b).col(t) + (S(1) - a) * z_star_.col(b);
      }
    }

    // Channel-wise FC to per-position (alpha, beta).
    ab_.noalias() = ab_w_.data * h_;
    ab_.colwise() += ab_b_.data.col(0);

    // Normalize z_i per position over channels and modulate.
    const int n_ch = z_i.channels;
    Eigen::Matrix<S, 1, Eigen::Dynamic> mu = z_i.m.colwise().mean();
    Mat<S> centered = z_i.m.rowwise() - mu;
    Eigen::Matrix<S, 1, Eigen::Dynamic> var = centered.array().square().matrix().colwise().sum() / S(n_ch);
    inv_r_ = (var.array() + S(1e-12)).sqrt().inverse().matrix();
    sigma_ = (var.array() + S(1e-12)).sqrt().matrix();
    sigma_.array() += S(1e-5);
    zhat_ = (centered.array().rowwise() / sigma_.array()).matrix();

    Tensor<S> out(B, n_ch, l_);
    out.m = ((zhat_.array().rowwise() * ab_.row(0).array()).rowwise() + ab_.row(1).array()).matrix();
    return out;
  }

  struct Grads {
    Tensor<S> d_z_i, d_c_i, d_z_style, d_c_style;
  };

  Grads backward(const Tensor<S>& dout, bool param_grads = true) {
    const int B = batch_;
    const int n_ch = static_cast<int>(zhat_.rows());

    Eigen::Matrix<S, 1, Eigen::Dynamic> d_alpha = (dout.m.array() * zhat_.array()).matrix().colwise().sum();
    Eigen::Matrix<S, 1, Eigen::Dynamic> d_beta = dout.m.colwise().sum();
    Mat<S> d_zhat = (dout.m.array().rowwise() * ab_.row(0).array()).matrix();

    // Per-position channel-norm backward with sigma = sqrt(var + 1e-12) + 1e-5:
    // dz = (dzh - mean(dzh))/sigma - zhat * mean(dzh .* zhat) / r.
    Eigen::Matrix<S, 1, Eigen::Dynamic> mean_dzh = d_zhat.colwise().mean();
    Eigen::Matrix<S, 1, Eigen::Dynamic> mean_dzh_zh =
        (d_zhat.array() * zhat_.array()).matrix().colwise().sum() / S(n_ch);
    Mat<S> d_z_norm =
        ((d_zhat.rowwise() - mean_dzh).array().rowwise() / sigma_.array()).matrix() -
        (zhat_.array().rowwise() * (mean_dzh_zh.array() * inv_r_.array())).matrix();

    // alpha/beta head.
    Mat<S> d_ab(2, d_alpha.cols());
    d_ab.row(0) = d_alpha;
    d_ab.row(1) = d_beta;
    if (param_grads) {
      ab_w_.grad.noalias() += d_ab * h_.transpose();
      ab_b_.grad.col(0) += d_ab.rowwise().sum();
    }
    Mat<S> d_h;
    d_h.noalias() = ab_w_.data.transpose() * d_ab;

    // Blend backward.
    Tensor<S> d_attn(B, 1, l_);
    Mat<S> d_c_star(dh_, static_cast<Eigen::Index>(B) * l_);
    Mat<S> d_z_star = Mat<S>::Zero(dh_, B);
    for (int b = 0; b < B; ++b) {
      auto a_row = attn_.sample(b);
      for (int t = 0; t < l_; ++t) {
        const Eigen::Index col = static_cast<Eigen::Index>(b) * l_ + t;
        const S a = a_row(0, t);
        d_attn.sample(b)(0, t) =
            d_h.col(col).dot(c_star_.col(col) - z_star_.col(b));
        d_c_star.col(col) = a * d_h.col(col);
        d_z_star.col(b) += (S(1) - a) * d_h.col(col);
      }
    }

    // Disease-style path.
    Mat<S> d_r(r_.rows(), r_.cols());
    for (int b = 0; b < B; ++b)
      d_r.middleCols(static_cast<Eigen::Index>(b) * l_, l_).noalias() =
          w_.data * d_c_star.middleCols(static_cast<Eigen::Index>(b) * l_, l_);
    if (param_grads) {
      for (int b = 0; b < B; ++b)
        w_.grad.noalias() += r_.middleCols(static_cast<Eigen::Index>(b) * l_, l_) *
                             d_c_star.middleCols(static_cast<Eigen::Index>(b) * l_, l_).transpose();
    }
    Mat<S> d_q = (q_.array() > S(0)).select(d_r, Mat<S>::Zero(d_r.rows(), d_r.cols()));
    Tensor<S> d_c_style(B, static_cast<int>(c_style_in_.rows()), 1);
    for (int b = 0; b < B; ++b) {
      auto dq_b = d_q.middleCols(static_cast<Eigen::Index>(b) * l_, l_);
      d_c_style.m.col(b).noalias() = dq_b * v_.data.transpose();
      if (param_grads) {
        v_.grad.noalias() += c_style_in_.col(b).transpose() * dq_b;
        b_.grad += dq_b.colwise().sum();
      }
    }

    // Noise-style path.
    Tensor<S> d_z_style(B, static_cast<int>(z_style_in_.rows()), 1);
    d_z_style.m.noalias() = u_.data * d_z_star;
    if (param_grads) u_.grad.noalias() += z_style_in_ * d_z_star.transpose();

    // Attention path.
    Tensor<S> d_cat = attn_conv1_.backward(
        attn_bn_.backward(attn_relu_.backward(attn_conv2_.backward(attn_sig_.backward(d_attn), param_grads)),
                          param_grads),
        param_grads);
    auto parts = split_channels(d_cat, {c_, kc_});

    Grads g;
    g.d_z_i = std::move(parts[0]);
    g.d_z_i.m += d_z_norm;
    g.d_c_i = std::move(parts[1]);
    g.d_z_style = std::move(d_z_style);
    g.d_c_style = std::move(d_c_style);
    return g;
  }

  void set_training(bool t) { attn_bn_.set_training(t); }

  void collect(ParamRefs<S>& out) {
    attn_conv1_.collect(out);
    attn_bn_.collect(out);
    attn_conv2_.collect(out);
    out.push_back(&u_);
    out.push_back(&v_);
    out.push_back(&b_);
    out.push_back(&w_);
    out.push_back(&ab_w_);
    out.push_back(&ab_b_);
  }

  // Test hooks.
  Conv1d<S>& attention_conv2() { return attn_conv2_; }
  Param<S>& alpha_beta_weight() { return ab_w_; }
  Param<S>& alpha_beta_bias() { return ab_b_; }

 private:
  int c_, kc_, dh_, l_;
  int batch_ = 0;
  Conv1d<S> attn_conv1_;
  BatchNorm1d<S> attn_bn_;
  ReLU<S> attn_relu_;
  Conv1d<S> attn_conv2_;
  Sigmoid<S> attn_sig_;
  Param<S> u_, v_, b_, w_, ab_w_, ab_b_;

  Tensor<S> attn_;
  Mat<S> z_style_in_, c_style_in_;
  Mat<S> z_star_, q_, r_, c_star_, h_, ab_;
  Mat<S> zhat_;
  Eigen::Matrix<S, 1, Eigen::Dynamic> sigma_, inv_r_;
};

// ---------------------------------------------------------------------------
// Style MLP: four Dense layers with ReLU in between.
// ---------------------------------------------------------------------------
template <typename S>
class StyleMlp {
 public:
  StyleMlp(const std::string& prefix, int in, int hidden, int out, Rng& rng) {
    const int dims[5] = {in, hidden, hidden, hidden, out};
    for (int i = 0; i < 4; ++i)
      fcs_.emplace_back(prefix + ".fc" + std::to_string(i), dims[i], dims[i + 1], rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> h = x;
    for (int i = 0; i < 4; ++i) {
      h = fcs_[i].forward(h);
      if (i < 3) h = relus_[i].forward(h);
    }
    return h;
  }

  Tensor<S> backward(const Tensor<S>& dy, bool param_grads = true) {
    Tensor<S> d = dy;
    for (int i = 3; i >= 0; --i) {
      if (i < 3) d = relus_[i].backward(d);
      d = fcs_[i].backward(d, param_grads);
    }
    return d;
  }

  void collect(ParamRefs<S>& out) {
    for (auto& fc : fcs_) fc.collect(out);
  }

 private:
  std::vector<Dense<S>> fcs_;
  std::array<ReLU<S>, 3> relus_;
};

// ---------------------------------------------------------------------------
// Stage one: the four-level ladder producing the stereo representation S.
// ---------------------------------------------------------------------------
template <typename S>
class Stage1 {
 public:
  Stage1(const GenConfig& cfg, Rng& rng)
      : cfg_(cfg),
        z_fc_("g.s1.z_fc", cfg.noise_dim, GenConfig::seed_channels * GenConfig::seed_length, rng),
        c_fc_("g.s1.c_fc", cfg.cond_dim, GenConfig::cond_seed_channels * GenConfig::seed_length, rng),
        z_mlp_("g.s1.z_mlp", cfg.noise_dim, cfg.style_dim, cfg.style_dim, rng),
        c_mlp_("g.s1.c_mlp", cfg.cond_dim, cfg.cond_style_dim, cfg.cond_style_dim, rng) {
    int major_in = GenConfig::seed_channels;
    int cond_in = GenConfig::cond_seed_channels;
    for (int i = 0; i < GenConfig::kLevels; ++i) {
      const std::string lp = "g.s1.level" + std::to_string(i);
      const int d_i = GenConfig::level_channels[i];
      const int k_i = GenConfig::cond_channels[i];
      const int l_i = GenConfig::level_lengths[i];
      major_blocks_.push_back(std::make_unique<ConvBlock<S>>(lp + ".major", major_in, d_i, rng));
      cond_blocks_.push_back(std::make_unique<ConvBlock<S>>(lp + ".cond", cond_in, k_i, rng));
      mixups_.push_back(std::make_unique<MixupNorm<S>>(lp + ".mixup", d_i, k_i, cfg.style_dim,
                                                       cfg.cond_style_dim, cfg.hidden_dim, l_i, rng));
      projections_.push_back(
          std::make_unique<Conv1d<S>>(lp + ".proj", d_i, cfg.common_channels, 1, 1, 0, rng));
      // Upsample each level's projection to the final resolution.
      int ups = 0;
      for (int l = l_i; l < cfg.length; l *= 2) ++ups;
      level_upsamples_.emplace_back(ups);
      major_in = d_i;
      cond_in = k_i;
    }
  }

  /// z: (B, noise_dim, 1); c: (B, cond_dim, 1) -> S: (B, common, length).
  Tensor<S> forward(const Tensor<S>& z, const Tensor<S>& c) {
    const int B = z.batch;
    z_style_ = z_mlp_.forward(z);
    c_style_ = c_mlp_.forward(c);

    Tensor<S> h = z_fc_.forward(z).unflattened(GenConfig::seed_channels, GenConfig::seed_length);
    Tensor<S> hc = c_fc_.forward(c).unflattened(GenConfig::cond_seed_channels, GenConfig::seed_length);

    Tensor<S> stereo(B, cfg_.common_channels, cfg_.length);
    for (int i = 0; i < GenConfig::kLevels; ++i) {
      h = major_blocks_[i]->forward(h);
      hc = cond_blocks_[i]->forward(hc);
      h = mixups_[i]->forward(h, hc, z_style_, c_style_);
      Tensor<S> p = projections_[i]->forward(h);
      for (auto& up : level_upsamples_[i]) p = up.forward(p);
      stereo.m += p.m;
    }
    return stereo;
  }

  struct Grads {
    Tensor<S> d_z, d_c;
  };

  Grads backward(const Tensor<S>& d_stereo, bool param_grads = true) {
    const int B = d_stereo.batch;
    Tensor<S> d_z_style(B, cfg_.style_dim, 1);
    Tensor<S> d_c_style(B, cfg_.cond_style_dim, 1);
    Tensor<S> major_carry, cond_carry;

    for (int i = GenConfig::kLevels - 1; i >= 0; --i) {
      Tensor<S> dp = d_stereo;
      for (auto it = level_upsamples_[i].rbegin(); it != level_upsamples_[i].rend(); ++it)
        dp = it->backward(dp);
      Tensor<S> d_mix = projections_[i]->backward(dp, param_grads);
      if (i < GenConfig::kLevels - 1) d_mix.m += major_carry.m;

      auto g = mixups_[i]->backward(d_mix, param_grads);
      d_z_style.m += g.d_z_style.m;
      d_c_style.m += g.d_c_style.m;
      if (i < GenConfig::kLevels - 1) g.d_c_i.m += cond_carry.m;

      major_carry = major_blocks_[i]->backward(g.d_z_i, param_grads);
      cond_carry = cond_blocks_[i]->backward(g.d_c_i, param_grads);
    }

    Grads out;
    out.d_z = z_fc_.backward(major_carry.flattened(), param_grads);
    out.d_z.m += z_mlp_.backward(d_z_style, param_grads).m;
    out.d_c = c_fc_.backward(cond_carry.flattened(), param_grads);
    out.d_c.m += c_mlp_.backward(d_c_style, param_grads).m;
    return out;
  }

  void set_training(bool t) {
    for (auto& b : major_blocks_) b->set_training(t);
    for (auto& b : cond_blocks_) b->set_training(t);
    for (auto& m : mixups_) m->set_training(t);
  }

  void collect(ParamRefs<S>& out) {
    z_fc_.collect(out);
    c_fc_.collect(out);
    z_mlp_.collect(out);
    c_mlp_.collect(out);
    for (int i = 0; i < GenConfig::kLevels; ++i) {
      major_blocks_[i]->collect(out);
      cond_blocks_[i]->collect(out);
      mixups_[i]->collect(out);
      projections_[i]->collect(out);
    }
  }

  MixupNorm<S>& mixup(int level) { return *mixups_.at(level); }

 private:
  GenConfig cfg_;
  Dense<S> z_fc_, c_fc_;
  StyleMlp<S> z_mlp_, c_mlp_;
  std::vector<std::unique_ptr<ConvBlock<S>>> major_blocks_;
  std::vector<std::unique_ptr<ConvBlock<S>>> cond_blocks_;
  std::vector<std::unique_ptr<MixupNorm<S>>> mixups_;
  std::vector<std::unique_ptr<Conv1d<S>>> projections_;
  std::vector<std::vector<Upsample2xLinear<S>>> level_upsamples_;
  Tensor<S> z_style_, c_style_;
};

// ---------------------------------------------------------------------------
// Stage two: viewpoint-conditioned shallow projection decoder. Each view
// FiLM-modulates the shared stereo representation with scale/shift derived
// from its (cos theta, cos phi/2) encoding, then runs two shared conv blocks
// and a sigmoid head. Views are processed independently, which is what makes
// the decoder permutation-equivariant in the viewpoint rows.
// ---------------------------------------------------------------------------
template <typename S>
class ProjectionDecoder {
 public:
  ProjectionDecoder(const GenConfig& cfg, Rng& rng)
      : cfg_(cfg),
        film_fc_("g.dec.film", 2, 2 * cfg.common_channels, rng),
        conv1_("g.dec.conv1", cfg.common_channels, cfg.common_channels, 3, 1, 1, rng),
        conv2_("g.dec.conv2", cfg.common_channels, cfg.common_channels, 3, 1, 1, rng),
        head_("g.dec.head", cfg.common_channels, 1, 3, 1, 1, rng) {}

  /// stereo: (B, common, length); theta_enc: n x 2 -> (B, n, length).
  Tensor<S> forward(const Tensor<S>& stereo, const Mat<S>& theta_enc) {
    const int B = stereo.batch;
    const int n = static_cast<int>(theta_enc.rows());
    const int C = cfg_.common_channels;
    n_ = n;
    stereo_ = stereo;

    Tensor<S> enc(n, 2, 1);
    enc.m = theta_enc.transpose();
    film_ = film_fc_.forward(enc);  // (n, 2C, 1)

    // Scale uses 1 + raw output so the decoder starts near identity.
    Tensor<S> x(B * n, C, stereo.length);
    for (int b = 0; b < B; ++b) {
      for (int p = 0; p < n; ++p) {
        auto scale = film_.m.col(p).head(C);
        auto shift = film_.m.col(p).tail(C);
        x.sample(b * n + p) =
            ((stereo.sample(b).array().colwise() * (scale.array() + S(1))).colwise() + shift.array()).matrix();
      }
    }

    Tensor<S> y = sig_.forward(head_.forward(relu2_.forward(conv2_.forward(relu1_.forward(conv1_.forward(x))))));

    Tensor<S> out(B, n, stereo.length);
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < n; ++p) out.sample(b).row(p) = y.sample(b * n + p).row(0);
    return out;
  }

  Tensor<S> backward(const Tensor<S>& dout, bool param_grads = true) {
    const int B = dout.batch;
    const int n = n_;
    const int C = cfg_.common_channels;

    Tensor<S> dy(B * n, 1, dout.length);
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < n; ++p) dy.sample(b * n + p).row(0) = dout.sample(b).row(p);

    Tensor<S> dx = conv1_.backward(
        relu1_.backward(conv2_.backward(relu2_.backward(head_.backward(sig_.backward(dy), param_grads)),
                                        param_grads)),
        param_grads);

    Tensor<S> d_stereo(B, C, dout.length);
    Tensor<S> d_film(n, 2 * C, 1);
    for (int b = 0; b < B; ++b) {
      for (int p = 0; p < n; ++p) {
        auto dxs = dx.sample(b * n + p);
        auto scale = film_.m.col(p).head(C);
        d_stereo.sample(b) += (dxs.array().colwise() * (scale.array() + S(1))).matrix();
        d_film.m.col(p).head(C) += (dxs.array() * stereo_.sample(b).array()).rowwise().sum().matrix();
        d_film.m.col(p).tail(C) += dxs.rowwise().sum();
      }
    }
    film_fc_.backward(d_film, param_grads);
    return d_stereo;
  }

  void collect(ParamRefs<S>& out) {
    film_fc_.collect(out);
    conv1_.collect(out);
    conv2_.collect(out);
    head_.collect(out);
  }

 private:
  GenConfig cfg_;
  Dense<S> film_fc_;
  Conv1d<S> conv1_, conv2_, head_;
  ReLU<S> relu1_, relu2_;
  Sigmoid<S> sig_;
  int n_ = 0;
  Tensor<S> stereo_, film_;
};

// ---------------------------------------------------------------------------
// Full generator.
// ---------------------------------------------------------------------------
template <typename S>
class Generator {
 public:
  Generator(const GenConfig& cfg, Rng& rng) : cfg_(cfg), stage1_(cfg, rng), decoder_(cfg, rng) {
    collect(params_);
  }

  const GenConfig& config() const { return cfg_; }

  Tensor<S> stage1_forward(const Tensor<S>& z, const Tensor<S>& c) { return stage1_.forward(z, c); }

  Tensor<S> project_views(const Tensor<S>& stereo, const Mat<S>& theta_enc) {
    return decoder_.forward(stereo, theta_enc);
  }

  /// Full forward pass: (B, views, length).
  Tensor<S> forward(const Tensor<S>& z, const Tensor<S>& c, const Mat<S>& theta_enc) {
    return decoder_.forward(stage1_.forward(z, c), theta_enc);
  }

  typename Stage1<S>::Grads backward(const Tensor<S>& dout, bool param_grads = true) {
    return stage1_.backward(decoder_.backward(dout, param_grads), param_grads);
  }

  void set_training(bool t) { stage1_.set_training(t); }

  ParamRefs<S>& params() { return params_; }
  Stage1<S>& stage1() { return stage1_; }
  ProjectionDecoder<S>& decoder() { return decoder_; }

  void save_into(Checkpoint& ckpt) const {
    for (const auto* p : params_) ckpt.put(p->name, to_f32(p->data));
  }
  void load_from(const Checkpoint& ckpt) {
    ckpt.expect("generator", cfg_.json());
    for (auto* p : params_) {
      if (!ckpt.has(p->name)) throw ConfigMismatchError("checkpoint missing tensor " + p->name);
      from_f32(ckpt.get(p->name), p->data);
    }
  }

 private:
  GenConfig cfg_;
  Stage1<S> stage1_;
  ProjectionDecoder<S> decoder_;
  ParamRefs<S> params_;

  void collect(ParamRefs<S>& out) {
    stage1_.collect(out);
    decoder_.collect(out);
  }
};

}  // namespace megan::gen
