#include <doctest.h>

#include "megan/dataset.hpp"
#include "megan/discriminators.hpp"

#include "../support/gradcheck.hpp"

#include <set>

using namespace megan;
using namespace megan::disc;

namespace {

template <typename S>
Tensor<S> randn(int b, int c, int l, Rng& rng) {
  Tensor<S> t(b, c, l);
  for (int j = 0; j < t.m.cols(); ++j)
    for (int i = 0; i < t.m.rows(); ++i) t.m(i, j) = static_cast<S>(rng.normal());
  return t;
}

Eigen::MatrixXi cyclic3() {
  // Result row i takes input row perm[i] with perm = (2, 0, 1):
  // rows (r0, r1, r2) -> (r2, r0, r1).
  Eigen::MatrixXi p = Eigen::MatrixXi::Zero(3, 3);
  p(2, 0) = 1;
  p(0, 1) = 1;
  p(1, 2) = 1;
  return p;
}

}  // namespace

TEST_CASE("shuffle_views") {
  Rng rng(3);
  Tensor<double> x = randn<double>(2, 3, 8, rng);

  SUBCASE("identity permutation is a fixed point") {
    auto y = shuffle_views(x, Eigen::MatrixXi::Identity(3, 3));
    CHECK((y.m.array() == x.m.array()).all());
  }

  SUBCASE("P then P^T restores the input bitwise") {
    auto p = cyclic3();
    auto y = shuffle_views(shuffle_views(x, p), Eigen::MatrixXi(p.transpose()));
    CHECK((y.m.array() == x.m.array()).all());
  }

  SUBCASE("worked 3x3 example") {
    auto y = shuffle_views(x, cyclic3());
    CHECK((y.m.row(0).array() == x.m.row(2).array()).all());
    CHECK((y.m.row(1).array() == x.m.row(0).array()).all());
    CHECK((y.m.row(2).array() == x.m.row(1).array()).all());
  }

  SUBCASE("angles shuffle with the same matrix") {
    Eigen::MatrixXd enc(3, 2);
    enc << 1, 2, 3, 4, 5, 6;
    auto out = shuffle_rows(enc, cyclic3());
    CHECK(out(0, 0) == 5);
    CHECK(out(1, 0) == 1);
    CHECK(out(2, 0) == 3);
  }

  SUBCASE("non-permutation matrices are rejected") {
    Eigen::MatrixXi bad = Eigen::MatrixXi::Zero(3, 3);
    bad(0, 0) = 1;
    bad(0, 1) = 1;  // row sum 2
    bad(1, 2) = 1;
    CHECK_THROWS_AS(shuffle_views(x, bad), std::invalid_argument);
    Eigen::MatrixXi two = Eigen::MatrixXi::Identity(3, 3);
    two(0, 0) = 2;
    CHECK_THROWS_AS(shuffle_views(x, two), std::invalid_argument);
  }

  SUBCASE("random permutations preserve the row multiset") {
    Rng prng(17);
    auto p = random_permutation(12, prng);
    validate_permutation(p);
  }
}

TEST_CASE("crop_window") {
  Tensor<double> x(1, 2, 512);
  for (int t = 0; t < 512; ++t) {
    x.m(0, t) = t;
    x.m(1, t) = -t;
  }

  SUBCASE("eps=0, l=L-1 copies the first L-1 columns") {
    auto y = crop_window(x, 0, 511);
    CHECK(y.length == 511);
    CHECK(y.m(0, 510) == 510.0);
  }

  SUBCASE("eps=5, l=3 on a ramp yields columns 5,6,7") {
    auto y = crop_window(x, 5, 3);
    CHECK(y.m(0, 0) == 5.0);
    CHECK(y.m(0, 1) == 6.0);
    CHECK(y.m(0, 2) == 7.0);
  }

  SUBCASE("out-of-range offsets are rejected") {
    CHECK_THROWS_AS(crop_window(x, -1, 10), std::invalid_argument);
    CHECK_THROWS_AS(crop_window(x, 384, 128), std::invalid_argument);  // eps + l == L
    CHECK_THROWS_AS(crop_window(x, 512, 1), std::invalid_argument);
  }

  SUBCASE("uniform offset sampler covers >= 95% of valid offsets") {
    Rng rng(23);
    std::set<int> seen;
    for (int i = 0; i < 10000; ++i) {
      const int eps = random_crop_offset(512, 128, rng);
      CHECK(eps >= 0);
      CHECK(eps + 128 < 512);
      seen.insert(eps);
    }
    CHECK(static_cast<double>(seen.size()) >= 0.95 * 384);
  }

  SUBCASE("crop and shuffle commute bitwise") {
    Rng rng(29);
    Tensor<double> sig = randn<double>(2, 12, 64, rng);
    auto p = random_permutation(12, rng);
    auto a = crop_window(shuffle_views(sig, p), 7, 20);
    auto b = shuffle_views(crop_window(sig, 7, 20), p);
    CHECK((a.m.array() == b.m.array()).all());
  }
}

TEST_CASE("positional encoding") {
  Rng rng(5);
  Tensor<double> x = randn<double>(2, 3, 100, rng);
  auto pe = positional_encode(x, 8);
  REQUIRE(pe.batch == 6);
  REQUIRE(pe.channels == 9);
  REQUIRE(pe.length == 100);

  SUBCASE("channel 0 is the unmodified signal") {
    for (int b = 0; b < 2; ++b)
      for (int v = 0; v < 3; ++v)
        CHECK((pe.sample(b * 3 + v).row(0).array() == x.sample(b).row(v).array()).all());
  }
  SUBCASE("encoding channels are identical across views") {
    for (int v = 1; v < 6; ++v)
      CHECK((pe.sample(v).bottomRows(8).array() == pe.sample(0).bottomRows(8).array()).all());
  }
  SUBCASE("position 0: sin channels 0, cos channels 1") {
    for (int i = 0; i < 4; ++i) {
      CHECK(pe.sample(0)(1 + 2 * i, 0) == 0.0);
      CHECK(pe.sample(0)(2 + 2 * i, 0) == 1.0);
    }
  }
  SUBCASE("frequencies span 1 down to 1e-4") {
    // Second position of the slowest sin channel ~ sin(1e-4).
    CHECK(pe.sample(0)(7, 1) == doctest::Approx(std::sin(1e-4)).epsilon(1e-12));
    CHECK(pe.sample(0)(1, 1) == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  }
}

TEST_CASE("major discriminator") {
  DiscConfig cfg;
  Rng rng(7);
  MajorDiscriminator<double> d(cfg, rng);
  Rng data_rng(11);
  Tensor<double> x = randn<double>(2, 12, 512, data_rng);

  SUBCASE("output shapes (1, k)") {
    auto out = d.forward(x);
    CHECK(out.realness.channels == 1);
    CHECK(out.disease_logits.channels == 3);
    CHECK(out.realness.batch == 2);
  }

  SUBCASE("zeroed trunk makes both heads constant in the input") {
    for (int i = 0; i < 3; ++i) {
      d.trunk_conv(i).weight().data.setZero();
      d.trunk_conv(i).bias().data.setZero();
    }
    auto out1 = d.forward(x);
    Tensor<double> x2 = randn<double>(2, 12, 512, data_rng);
    auto out2 = d.forward(x2);
    CHECK((out1.realness.m.array() == out2.realness.m.array()).all());
    CHECK((out1.disease_logits.m.array() == out2.disease_logits.m.array()).all());
  }

  SUBCASE("gradients match finite differences") {
    Mat<double> w_rf = Mat<double>::Random(1, 2);
    Mat<double> w_cls = Mat<double>::Random(3, 2);
    auto loss_of = [&](const MajorDiscriminator<double>::Output& out) {
      return (out.realness.m.array() * w_rf.array()).sum() +
             (out.disease_logits.m.array() * w_cls.array()).sum();
    };
    auto fwd = [&] { return loss_of(d.forward(x)); };
    auto fwd_bwd = [&] {
      zero_grads(d.params());
      auto out = d.forward(x);
      Tensor<double> d_rf = out.realness;
      d_rf.m = w_rf;
      Tensor<double> d_cls = out.disease_logits;
      d_cls.m = w_cls;
      d.backward(d_rf, d_cls);
      return loss_of(out);
    };
    Rng probe(41);
    auto r = testsupport::gradcheck(d.params(), fwd_bwd, fwd, 10, probe);
    CHECK(r.checked == 10);
    CHECK(r.max_rel_err < 1e-3);
  }

  SUBCASE("instance norm inside the trunk normalizes per channel and sample") {
    // Reproduce the first block by hand to inspect the normalized tensor.
    nn::InstanceNorm1d<double> in1(64);
    nn::Conv1d<double> conv("probe", 12, 64, 4, 2, 1, rng);
    Tensor<double> h = in1.forward(conv.forward(x));
    for (int b = 0; b < h.batch; ++b)
      for (int c = 0; c < 8; ++c) {
        CHECK(std::abs(h.sample(b).row(c).mean()) < 1e-5);
        CHECK(h.sample(b).row(c).array().square().mean() == doctest::Approx(1.0).epsilon(1e-3));
      }
  }
}

TEST_CASE("view discriminator") {
  DiscConfig cfg;
  Rng rng(13);
  ViewDiscriminator<double> v(cfg, rng);
  Rng data_rng(17);

  auto crops_from = [&](Tensor<double> sig, const Eigen::MatrixXi& p, int eps) {
    return crop_window(positional_encode(shuffle_views(sig, p), cfg.pe_channels), eps, cfg.crop_length);
  };

  SUBCASE("output length 2n in (-1, 1)") {
    Tensor<double> sig = randn<double>(2, 12, 512, data_rng);
    auto crops = crops_from(sig, Eigen::MatrixXi::Identity(12, 12), 37);
    auto out = v.forward(crops);
    REQUIRE(out.channels == 24);
    CHECK(out.m.cwiseAbs().maxCoeff() < 1.0);
  }

  SUBCASE("gradients match finite differences") {
    Tensor<double> sig = randn<double>(2, 12, 512, data_rng);
    auto crops = crops_from(sig, Eigen::MatrixXi::Identity(12, 12), 101);
    Mat<double> w = Mat<double>::Random(24, 2);
    auto loss_of = [&](const Tensor<double>& out) { return (out.m.array() * w.array()).sum(); };
    auto fwd = [&] { return loss_of(v.forward(crops)); };
    auto fwd_bwd = [&] {
      zero_grads(v.params());
      auto out = v.forward(crops);
      Tensor<double> dy = out;
      dy.m = w;
      v.backward(dy);
      return loss_of(out);
    };
    Rng probe(43);
    auto r = testsupport::gradcheck(v.params(), fwd_bwd, fwd, 10, probe);
    CHECK(r.checked == 10);
    CHECK(r.max_rel_err < 1e-3);
  }
}
