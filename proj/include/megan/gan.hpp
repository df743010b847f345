#pragma once

#include "megan/discriminators.hpp"
#include "megan/generator.hpp"

#include <cmath>
#include <stdexcept>

namespace megan::train {

using megan::Mat;
using megan::Rng;
using megan::Tensor;
using megan::Vec;

/// The three players plus the fixed viewpoint encoding they train against.
/// Not movable: the nets hold self-referential parameter lists.
template <typename S>
struct GanModel {
  gen::GenConfig gcfg;
  disc::DiscConfig dcfg;
  gen::Generator<S> g;
  disc::MajorDiscriminator<S> d;
  disc::ViewDiscriminator<S> v;
  Mat<S> theta_enc;  // views x 2

  GanModel(const gen::GenConfig& gc, const disc::DiscConfig& dc, const Eigen::MatrixXd& encoding, Rng init_rng)
      : gcfg(gc), dcfg(dc),
        g(make<gen::Generator<S>, gen::GenConfig>(gc, init_rng.child(0x67))),
        d(make<disc::MajorDiscriminator<S>, disc::DiscConfig>(dc, init_rng.child(0x64))),
        v(make<disc::ViewDiscriminator<S>, disc::DiscConfig>(dc, init_rng.child(0x76))),
        theta_enc(encoding.cast<S>()) {}

  GanModel(const GanModel&) = delete;
  GanModel& operator=(const GanModel&) = delete;

 private:
  template <typename Net, typename Cfg>
  static Net make(const Cfg& cfg, Rng rng) {
    return Net(cfg, rng);  // guaranteed elision: constructed in place
  }
};

// ---------------------------------------------------------------------------
// Loss primitives (values are always accumulated in double).
// ---------------------------------------------------------------------------

template <typename S>
inline double softmax_ce_multi(const Mat<S>& logits, const Mat<S>& labels, Mat<S>* dlogits) {
  // -sum_j c_j log softmax_j, summed only over samples with a nonzero label;
  // the mean over the full batch is taken by the caller via the 1/B factor in
  // dlogits. Multi-hot labels weight the terms.
  const int B = static_cast<int>(logits.cols());
  double total = 0.0;
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  for (int b = 0; b < B; ++b) {
    const double csum = static_cast<double>(labels.col(b).sum());
    if (csum == 0.0) continue;
    Vec<S> x = logits.col(b);
    const S xmax = x.maxCoeff();
    Vec<S> ex = (x.array() - xmax).exp().matrix();
    const S z = ex.sum();
    Vec<S> p = ex / z;
    for (int j = 0; j < x.size(); ++j)
      if (labels(j, b) != S(0))
        total -= static_cast<double>(labels(j, b)) *
                 (static_cast<double>(x(j)) - static_cast<double>(xmax) - std::log(static_cast<double>(z)));
    if (dlogits) dlogits->col(b) = static_cast<S>(csum) * p - labels.col(b);
  }
  return total;
}

template <typename S>
inline double bce_with_logits(const Mat<S>& logits, const Mat<S>& labels, Mat<S>* dlogits) {
  // Per-class binary cross entropy, summed over classes per sample.
  double total = 0.0;
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  for (int b = 0; b < logits.cols(); ++b) {
    for (int j = 0; j < logits.rows(); ++j) {
      const double x = static_cast<double>(logits(j, b));
      const double c = static_cast<double>(labels(j, b));
      total += std::max(x, 0.0) - x * c + std::log1p(std::exp(-std::abs(x)));
      if (dlogits) (*dlogits)(j, b) = static_cast<S>(1.0 / (1.0 + std::exp(-x)) - c);
    }
  }
  return total;
}

/// Eq. 5, discriminator side: mean over the batch of
/// (D_rf(X)-a)^2 + CE(D_c(X), c) + (D_rf(X_hat)-b)^2, with the fake batch
/// detached. All-zero-condition reals contribute no CE term.
template <typename S>
double d_loss(disc::MajorDiscriminator<S>& d, const Tensor<S>& real, const Mat<S>& labels,
              const Tensor<S>& fake, double a, double b, bool no_disease, bool backprop = true) {
  const int B = real.batch;
  double loss = 0.0;

  auto out_r = d.forward(real);
  for (int i = 0; i < B; ++i) loss += std::pow(static_cast<double>(out_r.realness.m(0, i)) - a, 2.0) / B;
  Mat<S> dlogits;
  if (!no_disease) loss += softmax_ce_multi(out_r.disease_logits.m, labels, backprop ? &dlogits : nullptr) / B;
  if (backprop) {
    Tensor<S> d_rf(B, 1, 1);
    d_rf.m = (S(2.0 / B) * (out_r.realness.m.array() - S(a))).matrix();
    Tensor<S> d_cls(B, static_cast<int>(out_r.disease_logits.m.rows()), 1);
    if (!no_disease)
      d_cls.m = dlogits / S(B);
    else
      d_cls.m.setZero();
    d.backward(d_rf, d_cls, true);
  }

  auto out_f = d.forward(fake);
  for (int i = 0; i < B; ++i) loss += std::pow(static_cast<double>(out_f.realness.m(0, i)) - b, 2.0) / B;
  if (backprop) {
    Tensor<S> d_rf(B, 1, 1);
    d_rf.m = (S(2.0 / B) * (out_f.realness.m.array() - S(b))).matrix();
    Tensor<S> d_cls(B, static_cast<int>(out_f.disease_logits.m.rows()), 1);
    d_cls.m.setZero();
    d.backward(d_rf, d_cls, true);
  }
  return loss;
}

struct GMajorLoss {
  double adv = 0.0;
  double aux = 0.0;
};

/// Eq. 5, generator side: (D_rf(G(z|c))-a)^2 + BCE(D_c(G(z|c)), c) with D's
/// parameters frozen ("stop updation") but gradients flowing through its
/// activations into d_fake.
template <typename S>
GMajorLoss g_loss_major(disc::MajorDiscriminator<S>& d, const Tensor<S>& fake, const Mat<S>& labels,
                        double a, bool no_disease, Tensor<S>* d_fake) {
  const int B = fake.batch;
  GMajorLoss loss;

  auto out = d.forward(fake);
  for (int i = 0; i < B; ++i) loss.adv += std::pow(static_cast<double>(out.realness.m(0, i)) - a, 2.0) / B;
  Mat<S> dlogits;
  if (!no_disease) loss.aux = bce_with_logits(out.disease_logits.m, labels, d_fake ? &dlogits : nullptr) / B;

  if (d_fake) {
    Tensor<S> d_rf(B, 1, 1);
    d_rf.m = (S(2.0 / B) * (out.realness.m.array() - S(a))).matrix();
    Tensor<S> d_cls(B, static_cast<int>(out.disease_logits.m.rows()), 1);
    if (!no_disease)
      d_cls.m = dlogits / S(B);
    else
      d_cls.m.setZero();
    Tensor<S> dx = d.backward(d_rf, d_cls, /*param_grads=*/false);
    d_fake->m += dx.m;
  }
  return loss;
}

template <typename S>
inline double mse(const Mat<S>& a, const Mat<S>& b) {
  return static_cast<double>((a - b).squaredNorm()) / static_cast<double>(a.size());
}

/// Eq. 8, view-discriminator side:
/// MSE(V(real crop), Theta') - MSE(V(real crop), V(fake crop)),
/// minimized over V with the fake branch detached from G. The target is the
/// shuffled viewpoint encoding flattened row-major, identical per sample.
template <typename S>
double v_loss(disc::ViewDiscriminator<S>& v, const Tensor<S>& real_crops, const Tensor<S>& fake_crops,
              const Vec<S>& theta_target, bool backprop = true) {
  Tensor<S> pred_f = v.forward(fake_crops);
  Mat<S> pf = pred_f.m;
  Tensor<S> pred_r = v.forward(real_crops);
  Mat<S> pr = pred_r.m;
  const int B = pred_r.batch;
  const auto n_out = static_cast<double>(pr.size());

  Mat<S> target = theta_target * Mat<S>::Ones(1, B);
  const double reg = mse<S>(pr, target);
  const double gap = mse<S>(pr, pf);

  if (backprop) {
    // Real-branch caches are live: backprop d/d_pr first.
    Tensor<S> d_pr(B, static_cast<int>(pr.rows()), 1);
    d_pr.m = (S(2.0) * ((pr - target) - (pr - pf)) / S(n_out)).eval();
    v.backward(d_pr, true);
    // Re-run the fake branch to restore its caches, then backprop d/d_pf.
    v.forward(fake_crops);
    Tensor<S> d_pf(B, static_cast<int>(pf.rows()), 1);
    d_pf.m = (S(2.0) * (pr - pf) / S(n_out)).eval();
    v.backward(d_pf, true);
  }
  return reg - gap;
}

/// Eq. 8, generator side: +MSE(V(real crop), V(fake crop)) with V frozen;
/// the gradient w.r.t. the fake crops is returned through d_fake_crops.
template <typename S>
double g_loss_view(disc::ViewDiscriminator<S>& v, const Tensor<S>& real_crops, const Tensor<S>& fake_crops,
                   Tensor<S>* d_fake_crops) {
  Tensor<S> pred_r = v.forward(real_crops);
  Mat<S> pr = pred_r.m;
  Tensor<S> pred_f = v.forward(fake_crops);  // caches now match the fake branch
  Mat<S> pf = pred_f.m;
  const double gap = mse<S>(pr, pf);
  if (d_fake_crops) {
    Tensor<S> d_pf(pred_f.batch, static_cast<int>(pf.rows()), 1);
    d_pf.m = (S(-2.0) * (pr - pf) / S(pf.size())).eval();
    *d_fake_crops = v.backward(d_pf, /*param_grads=*/false);
  }
  return gap;
}

/// Flattens a viewpoint encoding matrix (n x 2) row-major into a 2n vector:
/// (cos theta_1, cos phi_1/2, cos theta_2, ...).
template <typename S>
Vec<S> flatten_encoding(const Mat<S>& enc) {
  Vec<S> out(enc.rows() * 2);
  for (int p = 0; p < enc.rows(); ++p) {
    out(2 * p) = enc(p, 0);
    out(2 * p + 1) = enc(p, 1);
  }
  return out;
}

}  // namespace megan::train
