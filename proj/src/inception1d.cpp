#include "megan/inception1d.hpp"

#include <utility>

namespace megan::metrics {

using namespace megan::nn;

namespace {

// conv -> BN -> ReLU, the basic Inception unit.
class BasicConv {
 public:
  BasicConv(const std::string& prefix, int c_in, int c_out, int k, int stride, int pad, Rng& rng)
      : conv_(prefix + ".conv", c_in, c_out, k, stride, pad, rng), bn_(prefix + ".bn", c_out) {}

  Tensor<float> forward(const Tensor<float>& x) { return act_.forward(bn_.forward(conv_.forward(x))); }
  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    return conv_.backward(bn_.backward(act_.backward(dy), pg), pg);
  }
  void set_training(bool t) { bn_.set_training(t); }
  void collect(ParamRefs<float>& out) {
    conv_.collect(out);
    bn_.collect(out);
  }

 private:
  Conv1d<float> conv_;
  BatchNorm1d<float> bn_;
  ReLU<float> act_;
};

// A sequential chain of BasicConv units (one Inception branch).
class Branch {
 public:
  Branch() = default;
  Branch& add(const std::string& prefix, int c_in, int c_out, int k, int stride, int pad, Rng& rng) {
    units_.push_back(std::make_unique<BasicConv>(prefix, c_in, c_out, k, stride, pad, rng));
    return *this;
  }
  Tensor<float> forward(const Tensor<float>& x) {
    Tensor<float> h = x;
    for (auto& u : units_) h = u->forward(h);
    return h;
  }
  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    Tensor<float> d = dy;
    for (auto it = units_.rbegin(); it != units_.rend(); ++it) d = (*it)->backward(d, pg);
    return d;
  }
  void set_training(bool t) {
    for (auto& u : units_) u->set_training(t);
  }
  void collect(ParamRefs<float>& out) {
    for (auto& u : units_) u->collect(out);
  }

 private:
  std::vector<std::unique_ptr<BasicConv>> units_;
};

// Parallel branches concatenated channel-wise; an optional leading pool on
// the last branch.
struct Mixed {
  std::vector<Branch> branches;
  std::vector<int> out_channels;
  std::unique_ptr<Pool1d<float>> pool;  // applied before branches.back() when set
  int pool_branch = -1;

  Tensor<float> forward(const Tensor<float>& x) {
    std::vector<Tensor<float>> outs;
    outs.reserve(branches.size());
    for (size_t i = 0; i < branches.size(); ++i) {
      if (static_cast<int>(i) == pool_branch) {
        outs.push_back(branches[i].forward(pool->forward(x)));
      } else {
        outs.push_back(branches[i].forward(x));
      }
    }
    std::vector<const Tensor<float>*> ptrs;
    for (auto& o : outs) ptrs.push_back(&o);
    out_channels.clear();
    for (auto& o : outs) out_channels.push_back(o.channels);
    return concat_channels<float>(ptrs);
  }

  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    auto parts = split_channels(dy, out_channels);
    Tensor<float> dx;
    for (size_t i = 0; i < branches.size(); ++i) {
      Tensor<float> d = branches[i].backward(parts[i], pg);
      if (static_cast<int>(i) == pool_branch) d = pool->backward(d);
      if (dx.m.size() == 0)
        dx = std::move(d);
      else
        dx.m += d.m;
    }
    return dx;
  }

  void set_training(bool t) {
    for (auto& b : branches) b.set_training(t);
  }
  void collect(ParamRefs<float>& out) {
    for (auto& b : branches) b.collect(out);
  }
};

// Reduction block: parallel strided branches plus a bare max pool. The
// stride-2 stages pad so that no input position falls outside every window
// (even lengths need pad 1, odd lengths pad 0).
struct Reduction {
  std::vector<Branch> branches;
  std::vector<int> out_channels;
  Pool1d<float> pool{Pool1d<float>::Kind::Max, 3, 2, 0};

  void set_pool_pad(int pad) { pool = Pool1d<float>(Pool1d<float>::Kind::Max, 3, 2, pad); }

  Tensor<float> forward(const Tensor<float>& x) {
    std::vector<Tensor<float>> outs;
    for (auto& b : branches) outs.push_back(b.forward(x));
    outs.push_back(pool.forward(x));
    std::vector<const Tensor<float>*> ptrs;
    for (auto& o : outs) ptrs.push_back(&o);
    out_channels.clear();
    for (auto& o : outs) out_channels.push_back(o.channels);
    return concat_channels<float>(ptrs);
  }

  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    auto parts = split_channels(dy, out_channels);
    Tensor<float> dx = pool.backward(parts.back());
    for (size_t i = 0; i < branches.size(); ++i) dx.m += branches[i].backward(parts[i], pg).m;
    return dx;
  }

  void set_training(bool t) {
    for (auto& b : branches) b.set_training(t);
  }
  void collect(ParamRefs<float>& out) {
    for (auto& b : branches) b.collect(out);
  }
};

// InceptionE's 3x3 branches fan out into two parallel convs whose outputs are
// concatenated.
struct SplitTail {
  Branch stem;
  Branch tail_a, tail_b;
  int tail_channels = 0;
  Tensor<float> stem_out;

  Tensor<float> forward(const Tensor<float>& x) {
    stem_out = stem.forward(x);
    Tensor<float> a = tail_a.forward(stem_out);
    Tensor<float> b = tail_b.forward(stem_out);
    tail_channels = a.channels;
    return concat_channels<float>({&a, &b});
  }

  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    auto parts = split_channels(dy, {tail_channels, dy.channels - tail_channels});
    Tensor<float> d = tail_a.backward(parts[0], pg);
    d.m += tail_b.backward(parts[1], pg).m;
    return stem.backward(d, pg);
  }

  void set_training(bool t) {
    stem.set_training(t);
    tail_a.set_training(t);
    tail_b.set_training(t);
  }
  void collect(ParamRefs<float>& out) {
    stem.collect(out);
    tail_a.collect(out);
    tail_b.collect(out);
  }
};

struct InceptionE {
  Branch b1;
  SplitTail b3, b3dbl;
  Mixed pool_part;  // single pooled branch
  std::vector<int> out_channels;

  Tensor<float> forward(const Tensor<float>& x) {
    Tensor<float> o1 = b1.forward(x);
    Tensor<float> o2 = b3.forward(x);
    Tensor<float> o3 = b3dbl.forward(x);
    Tensor<float> o4 = pool_part.forward(x);
    out_channels = {o1.channels, o2.channels, o3.channels, o4.channels};
    return concat_channels<float>({&o1, &o2, &o3, &o4});
  }

  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    auto parts = split_channels(dy, out_channels);
    Tensor<float> dx = b1.backward(parts[0], pg);
    dx.m += b3.backward(parts[1], pg).m;
    dx.m += b3dbl.backward(parts[2], pg).m;
    dx.m += pool_part.backward(parts[3], pg).m;
    return dx;
  }

  void set_training(bool t) {
    b1.set_training(t);
    b3.set_training(t);
    b3dbl.set_training(t);
    pool_part.set_training(t);
  }
  void collect(ParamRefs<float>& out) {
    b1.collect(out);
    b3.collect(out);
    b3dbl.collect(out);
    pool_part.collect(out);
  }
};

Mixed make_inception_a(const std::string& p, int in, int pool_features, Rng& rng) {
  Mixed m;
  m.branches.resize(4);
  m.branches[0].add(p + ".b1", in, 64, 1, 1, 0, rng);
  m.branches[1].add(p + ".b5_1", in, 48, 1, 1, 0, rng).add(p + ".b5_2", 48, 64, 5, 1, 2, rng);
  m.branches[2]
      .add(p + ".b3d_1", in, 64, 1, 1, 0, rng)
      .add(p + ".b3d_2", 64, 96, 3, 1, 1, rng)
      .add(p + ".b3d_3", 96, 96, 3, 1, 1, rng);
  m.branches[3].add(p + ".bpool", in, pool_features, 1, 1, 0, rng);
  m.pool = std::make_unique<Pool1d<float>>(Pool1d<float>::Kind::Avg, 3, 1, 1);
  m.pool_branch = 3;
  return m;
}

Reduction make_inception_b(const std::string& p, int in, Rng& rng) {
  Reduction r;
  r.branches.resize(2);
  r.branches[0].add(p + ".b3", in, 384, 3, 2, 1, rng);
  r.branches[1]
      .add(p + ".bd_1", in, 64, 1, 1, 0, rng)
      .add(p + ".bd_2", 64, 96, 3, 1, 1, rng)
      .add(p + ".bd_3", 96, 96, 3, 2, 1, rng);
  r.set_pool_pad(1);
  return r;
}

// 2D (1,7)/(7,1) factorizations collapse to k1/k7.
Mixed make_inception_c(const std::string& p, int in, int c7, Rng& rng) {
  Mixed m;
  m.branches.resize(4);
  m.branches[0].add(p + ".b1", in, 192, 1, 1, 0, rng);
  m.branches[1]
      .add(p + ".b7_1", in, c7, 1, 1, 0, rng)
      .add(p + ".b7_2", c7, c7, 1, 1, 0, rng)
      .add(p + ".b7_3", c7, 192, 7, 1, 3, rng);
  m.branches[2]
      .add(p + ".b7d_1", in, c7, 1, 1, 0, rng)
      .add(p + ".b7d_2", c7, c7, 7, 1, 3, rng)
      .add(p + ".b7d_3", c7, c7, 1, 1, 0, rng)
      .add(p + ".b7d_4", c7, c7, 7, 1, 3, rng)
      .add(p + ".b7d_5", c7, 192, 1, 1, 0, rng);
  m.branches[3].add(p + ".bpool", in, 192, 1, 1, 0, rng);
  m.pool = std::make_unique<Pool1d<float>>(Pool1d<float>::Kind::Avg, 3, 1, 1);
  m.pool_branch = 3;
  return m;
}

Reduction make_inception_d(const std::string& p, int in, Rng& rng) {
  Reduction r;
  r.branches.resize(2);
  r.branches[0].add(p + ".b3_1", in, 192, 1, 1, 0, rng).add(p + ".b3_2", 192, 320, 3, 2, 0, rng);
  r.branches[1]
      .add(p + ".b7_1", in, 192, 1, 1, 0, rng)
      .add(p + ".b7_2", 192, 192, 1, 1, 0, rng)
      .add(p + ".b7_3", 192, 192, 7, 1, 3, rng)
      .add(p + ".b7_4", 192, 192, 3, 2, 0, rng);
  return r;
}

InceptionE make_inception_e(const std::string& p, int in, Rng& rng) {
  InceptionE e;
  e.b1.add(p + ".b1", in, 320, 1, 1, 0, rng);
  e.b3.stem.add(p + ".b3_1", in, 384, 1, 1, 0, rng);
  e.b3.tail_a.add(p + ".b3_2a", 384, 384, 1, 1, 0, rng);
  e.b3.tail_b.add(p + ".b3_2b", 384, 384, 3, 1, 1, rng);
  e.b3dbl.stem.add(p + ".bd_1", in, 448, 1, 1, 0, rng).add(p + ".bd_2", 448, 384, 3, 1, 1, rng);
  e.b3dbl.tail_a.add(p + ".bd_3a", 384, 384, 1, 1, 0, rng);
  e.b3dbl.tail_b.add(p + ".bd_3b", 384, 384, 3, 1, 1, rng);
  e.pool_part.branches.resize(1);
  e.pool_part.branches[0].add(p + ".bpool", in, 192, 1, 1, 0, rng);
  e.pool_part.pool = std::make_unique<Pool1d<float>>(Pool1d<float>::Kind::Avg, 3, 1, 1);
  e.pool_part.pool_branch = 0;
  return e;
}

}  // namespace

struct Inception1D::Impl {
  // Lengths: 512 -> 256 -> 254 -> 254 -> 127 -> 127 -> 125 -> 62 (A) ->
  // 31 (B/C) -> 15 (D/E) -> GAP. Strided stages pad on even inputs so the
  // receptive field covers the whole signal, including the final column.
  Branch stem1;  // conv1a, conv2a, conv2b
  Pool1d<float> pool1{Pool1d<float>::Kind::Max, 3, 2, 1};
  Branch stem2;  // conv3b, conv4a
  Pool1d<float> pool2{Pool1d<float>::Kind::Max, 3, 2, 0};
  Mixed a1, a2, a3;
  Reduction b;
  Mixed c1, c2, c3, c4;
  Reduction d;
  InceptionE e1, e2;
  GlobalAvgPool<float> gap;
  ParamRefs<float> params;

  Impl(int in_channels, Rng& rng) {
    stem1.add("fx.conv1a", in_channels, 32, 3, 2, 1, rng)
        .add("fx.conv2a", 32, 32, 3, 1, 0, rng)
        .add("fx.conv2b", 32, 64, 3, 1, 1, rng);
    stem2.add("fx.conv3b", 64, 80, 1, 1, 0, rng).add("fx.conv4a", 80, 192, 3, 1, 0, rng);
    a1 = make_inception_a("fx.a1", 192, 32, rng);
    a2 = make_inception_a("fx.a2", 256, 64, rng);
    a3 = make_inception_a("fx.a3", 288, 64, rng);
    b = make_inception_b("fx.b", 288, rng);
    c1 = make_inception_c("fx.c1", 768, 128, rng);
    c2 = make_inception_c("fx.c2", 768, 160, rng);
    c3 = make_inception_c("fx.c3", 768, 160, rng);
    c4 = make_inception_c("fx.c4", 768, 192, rng);
    d = make_inception_d("fx.d", 768, rng);
    e1 = make_inception_e("fx.e1", 1280, rng);
    e2 = make_inception_e("fx.e2", 2048, rng);
    collect(params);
  }

  Tensor<float> forward(const Tensor<float>& x) {
    Tensor<float> h = stem1.forward(x);
    h = pool1.forward(h);
    h = stem2.forward(h);
    h = pool2.forward(h);
    h = a1.forward(h);
    h = a2.forward(h);
    h = a3.forward(h);
    h = b.forward(h);
    h = c1.forward(h);
    h = c2.forward(h);
    h = c3.forward(h);
    h = c4.forward(h);
    h = d.forward(h);
    h = e1.forward(h);
    h = e2.forward(h);
    return gap.forward(h);
  }

  Tensor<float> backward(const Tensor<float>& dy, bool pg) {
    Tensor<float> dh = gap.backward(dy);
    dh = e2.backward(dh, pg);
    dh = e1.backward(dh, pg);
    dh = d.backward(dh, pg);
    dh = c4.backward(dh, pg);
    dh = c3.backward(dh, pg);
    dh = c2.backward(dh, pg);
    dh = c1.backward(dh, pg);
    dh = b.backward(dh, pg);
    dh = a3.backward(dh, pg);
    dh = a2.backward(dh, pg);
    dh = a1.backward(dh, pg);
    dh = pool2.backward(dh);
    dh = stem2.backward(dh, pg);
    dh = pool1.backward(dh);
    return stem1.backward(dh, pg);
  }

  void set_training(bool t) {
    stem1.set_training(t);
    stem2.set_training(t);
    a1.set_training(t);
    a2.set_training(t);
    a3.set_training(t);
    b.set_training(t);
    c1.set_training(t);
    c2.set_training(t);
    c3.set_training(t);
    c4.set_training(t);
    d.set_training(t);
    e1.set_training(t);
    e2.set_training(t);
  }

  void collect(ParamRefs<float>& out) {
    stem1.collect(out);
    stem2.collect(out);
    a1.collect(out);
    a2.collect(out);
    a3.collect(out);
    b.collect(out);
    c1.collect(out);
    c2.collect(out);
    c3.collect(out);
    c4.collect(out);
    d.collect(out);
    e1.collect(out);
    e2.collect(out);
  }
};

Inception1D::Inception1D(int in_channels, Rng& rng) : impl_(std::make_unique<Impl>(in_channels, rng)) {}
Inception1D::~Inception1D() = default;

Tensor<float> Inception1D::forward(const Tensor<float>& x) { return impl_->forward(x); }
Tensor<float> Inception1D::backward(const Tensor<float>& dfeatures, bool param_grads) {
  return impl_->backward(dfeatures, param_grads);
}
void Inception1D::set_training(bool t) { impl_->set_training(t); }
ParamRefs<float>& Inception1D::params() { return impl_->params; }

}  // namespace megan::metrics
