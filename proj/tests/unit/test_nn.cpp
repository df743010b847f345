#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "megan/adam.hpp"
#include "megan/layers.hpp"

#include "../support/gradcheck.hpp"

using namespace megan;
using namespace megan::nn;

namespace {

Tensor<double> random_tensor(int b, int c, int l, Rng& rng, double scale = 1.0) {
  Tensor<double> t(b, c, l);
  for (int j = 0; j < t.m.cols(); ++j)
    for (int i = 0; i < t.m.rows(); ++i) t.m(i, j) = scale * rng.normal();
  return t;
}

// Reference convolution, written against the contract rather than the
// im2col implementation.
Tensor<double> naive_conv(const Tensor<double>& x, const Mat<double>& w, const Vec<double>& bias, int k,
                          int stride, int pad) {
  const int c_out = static_cast<int>(w.rows());
  const int c_in = x.channels;
  const int l_out = (x.length + 2 * pad - k) / stride + 1;
  Tensor<double> y(x.batch, c_out, l_out);
  for (int b = 0; b < x.batch; ++b)
    for (int o = 0; o < c_out; ++o)
      for (int t = 0; t < l_out; ++t) {
        double acc = bias(o);
        for (int j = 0; j < k; ++j) {
          const int p = t * stride - pad + j;
          if (p < 0 || p >= x.length) continue;
          for (int c = 0; c < c_in; ++c) acc += w(o, j * c_in + c) * x.sample(b)(c, p);
        }
        y.sample(b)(o, t) = acc;
      }
  return y;
}

}  // namespace

TEST_CASE("conv1d matches naive convolution") {
  Rng rng(7);
  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}, {2, 0}}) {
    Conv1d<double> conv("c", 3, 5, 3, stride, pad, rng);
    Tensor<double> x = random_tensor(2, 3, 11, rng);
    Tensor<double> y = conv.forward(x);
    Tensor<double> ref = naive_conv(x, conv.weight().data, conv.bias().data.col(0), 3, stride, pad);
    REQUIRE(y.length == ref.length);
    CHECK((y.m - ref.m).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(11);

  auto weighted_loss = [](const Tensor<double>& y, const Mat<double>& w) {
    return (y.m.array() * w.array()).sum();
  };

  SUBCASE("conv1d") {
    Conv1d<double> conv("c", 3, 4, 3, 2, 1, rng);
    Tensor<double> x = random_tensor(2, 3, 9, rng);
    Mat<double> w = Mat<double>::Random(4, 2 * 5);
    ParamRefs<double> params;
    conv.collect(params);
    auto fwd = [&] { return weighted_loss(conv.forward(x), w); };
    auto fwd_bwd = [&] {
      zero_grads(params);
      Tensor<double> y = conv.forward(x);
      Tensor<double> dy = y;
      dy.m = w;
      conv.backward(dy);
      return weighted_loss(y, w);
    };
    auto r = testsupport::gradcheck(params, fwd_bwd, fwd, 10, rng);
    CHECK(r.checked == 10);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("dense") {
    Dense<double> fc("d", 6, 4, rng);
    Tensor<double> x = random_tensor(3, 6, 1, rng);
    Mat<double> w = Mat<double>::Random(4, 3);
    ParamRefs<double> params;
    fc.collect(params);
    auto fwd = [&] { return weighted_loss(fc.forward(x), w); };
    auto fwd_bwd = [&] {
      zero_grads(params);
      Tensor<double> y = fc.forward(x);
      Tensor<double> dy = y;
      dy.m = w;
      fc.backward(dy);
      return weighted_loss(y, w);
    };
    auto r = testsupport::gradcheck(params, fwd_bwd, fwd, 8, rng);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("batchnorm through input and params") {
    BatchNorm1d<double> bn("bn", 4);
    Conv1d<double> conv("c", 4, 4, 3, 1, 1, rng);  // upstream layer so x-grads matter
    Tensor<double> x = random_tensor(2, 4, 7, rng);
    Mat<double> w = Mat<double>::Random(4, 2 * 7);
    ParamRefs<double> params;
    conv.collect(params);
    bn.collect(params);
    auto fwd = [&] { return weighted_loss(bn.forward(conv.forward(x)), w); };
    auto fwd_bwd = [&] {
      zero_grads(params);
      Tensor<double> y = bn.forward(conv.forward(x));
      Tensor<double> dy = y;
      dy.m = w;
      conv.backward(bn.backward(dy));
      return weighted_loss(y, w);
    };
    auto r = testsupport::gradcheck(params, fwd_bwd, fwd, 10, rng);
    CHECK(r.max_rel_err < 1e-5);
  }

  SUBCASE("instance norm + activations + pooling chain") {
    Conv1d<double> conv("c", 2, 4, 4, 2, 1, rng);
    InstanceNorm1d<double> in(4);
    LeakyReLU<double> act(0.2);
    Pool1d<double> pool(Pool1d<double>::Kind::Avg, 3, 1, 1);
    Tensor<double> x = random_tensor(2, 2, 12, rng);
    Mat<double> w = Mat<double>::Random(4, 2 * 6);
    ParamRefs<double> params;
    conv.collect(params);
    auto chain = [&](const Tensor<double>& in_x) { return pool.forward(act.forward(in.forward(conv.forward(in_x)))); };
    auto fwd = [&] { return weighted_loss(chain(x), w); };
    auto fwd_bwd = [&] {
      zero_grads(params);
      Tensor<double> y = chain(x);
      Tensor<double> dy = y;
      dy.m = w;
      conv.backward(in.backward(act.backward(pool.backward(dy))));
      return weighted_loss(y, w);
    };
    auto r = testsupport::gradcheck(params, fwd_bwd, fwd, 10, rng);
    CHECK(r.max_rel_err < 1e-5);
  }

  SUBCASE("upsample + sigmoid") {
    Conv1d<double> conv("c", 2, 3, 3, 1, 1, rng);
    Upsample2xLinear<double> up;
    Sigmoid<double> sig;
    Tensor<double> x = random_tensor(1, 2, 6, rng);
    Mat<double> w = Mat<double>::Random(3, 12);
    ParamRefs<double> params;
    conv.collect(params);
    auto fwd = [&] { return weighted_loss(sig.forward(up.forward(conv.forward(x))), w); };
    auto fwd_bwd = [&] {
      zero_grads(params);
      Tensor<double> y = sig.forward(up.forward(conv.forward(x)));
      Tensor<double> dy = y;
      dy.m = w;
      conv.backward(up.backward(sig.backward(dy)));
      return weighted_loss(y, w);
    };
    auto r = testsupport::gradcheck(params, fwd_bwd, fwd, 8, rng);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("max pool routes gradients to the argmax") {
    Pool1d<double> pool(Pool1d<double>::Kind::Max, 3, 2);
    Tensor<double> x = random_tensor(1, 2, 9, rng);
    Tensor<double> y = pool.forward(x);
    Tensor<double> dy = y;
    dy.m.setOnes();
    Tensor<double> dx = pool.backward(dy);
    CHECK(dx.m.sum() == doctest::Approx(static_cast<double>(y.m.size())));
  }
}

TEST_CASE("upsample alignment: [0,1,2] -> [0,0.5,1,1.5,2,2]") {
  Upsample2xLinear<double> up;
  Tensor<double> x(1, 1, 3);
  x.m << 0.0, 1.0, 2.0;
  Tensor<double> y = up.forward(x);
  REQUIRE(y.length == 6);
  const double expected[6] = {0.0, 0.5, 1.0, 1.5, 2.0, 2.0};
  for (int t = 0; t < 6; ++t) CHECK(y.m(0, t) == doctest::Approx(expected[t]).epsilon(1e-15));
}

TEST_CASE("batch norm statistics and eval mode") {
  Rng rng(3);
  BatchNorm1d<double> bn("bn", 3);
  Tensor<double> x = random_tensor(4, 3, 16, rng, 2.0);
  Tensor<double> y = bn.forward(x);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(y.m.row(c).mean()) < 1e-12);
    const double var = y.m.row(c).array().square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  // Eval mode must use the running estimates, not the batch.
  bn.set_training(false);
  Tensor<double> y2 = bn.forward(x);
  CHECK((y.m - y2.m).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("instance norm per-sample per-channel statistics") {
  Rng rng(5);
  InstanceNorm1d<double> in(3);
  Tensor<double> x = random_tensor(2, 3, 32, rng, 1.5);
  x.m.array() += 0.7;
  Tensor<double> y = in.forward(x);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(y.sample(b).row(c).mean()) < 1e-5);
      CHECK(y.sample(b).row(c).array().square().mean() == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("flatten / unflatten roundtrip") {
  Rng rng(9);
  Tensor<double> x = random_tensor(3, 4, 5, rng);
  Tensor<double> r = x.flattened().unflattened(4, 5);
  CHECK((x.m - r.m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam with zero learning rate leaves parameters untouched") {
  Rng rng(13);
  Dense<float> fc("d", 4, 3, rng);
  ParamRefs<float> params;
  fc.collect(params);
  Mat<float> before = fc.weight().data;
  nn::Adam<float> opt(params, 0.0f, 0.5f, 0.999f);
  fc.weight().grad.setConstant(1.0f);
  opt.step();
  CHECK((fc.weight().data - before).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("gradient clipping caps the global norm") {
  Rng rng(17);
  Dense<float> fc("d", 8, 8, rng);
  ParamRefs<float> params;
  fc.collect(params);
  fc.weight().grad.setConstant(5.0f);
  fc.bias().grad.setConstant(5.0f);
  clip_grad_norm(params, 10.0);
  CHECK(grad_global_norm(params) == doctest::Approx(10.0).epsilon(1e-5));
}
