#include "megan/metrics.hpp"

#include "megan/adam.hpp"
#include "megan/checkpoint.hpp"
#include "megan/errors.hpp"
#include "megan/gan.hpp"

#include <lapacke.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

using json = nlohmann::ordered_json;

namespace megan::metrics {

using namespace megan::nn;
using megan::Mat;
using megan::Rng;
using megan::Tensor;

// ---------------------------------------------------------------------------
// FeatureExtractor
// ---------------------------------------------------------------------------

namespace {

std::string extractor_config_json(int in_channels, int classes) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "{\"classes\":%d,\"feature_dim\":2048,\"in_channels\":%d}", classes,
                in_channels);
  return buf;
}

}  // namespace

struct FeatureExtractor::Impl {
  int in_channels;
  int classes;
  Inception1D net;
  Dense<float> head;
  ParamRefs<float> params;

  Impl(int in_ch, int cls, Rng rng)
      : in_channels(in_ch), classes(cls), net(in_ch, rng), head("fx.head", Inception1D::kFeatureDim, cls, rng) {
    for (auto* p : net.params()) params.push_back(p);
    head.collect(params);
    net.set_training(false);
  }
};

FeatureExtractor::FeatureExtractor(int in_channels, int classes, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(in_channels, classes, Rng(seed).child(0xfe))) {}
FeatureExtractor::~FeatureExtractor() = default;
FeatureExtractor::FeatureExtractor(FeatureExtractor&&) noexcept = default;

int FeatureExtractor::classes() const { return impl_->classes; }

Eigen::MatrixXf FeatureExtractor::features(const std::vector<Eigen::MatrixXf>& signals) const {
  if (signals.empty()) return Eigen::MatrixXf(kFeatureDim, 0);
  const int n = static_cast<int>(signals[0].rows());
  const int L = static_cast<int>(signals[0].cols());
  if (n != impl_->in_channels) throw std::invalid_argument("features: channel count mismatch");
  const int total = static_cast<int>(signals.size());
  Eigen::MatrixXf out(kFeatureDim, total);
  constexpr int kChunk = 8;  // fixed chunking keeps extraction deterministic
  impl_->net.set_training(false);
  for (int start = 0; start < total; start += kChunk) {
    const int b = std::min(kChunk, total - start);
    Tensor<float> x(b, n, L);
    for (int i = 0; i < b; ++i) {
      if (!signals[start + i].allFinite()) throw std::invalid_argument("features: non-finite input signal");
      x.sample(i) = signals[start + i];
    }
    Tensor<float> f = impl_->net.forward(x);
    out.middleCols(start, b) = f.m;
  }
  return out;
}

Eigen::MatrixXf FeatureExtractor::features_of(const data::Dataset& ds) const {
  std::vector<Eigen::MatrixXf> sig;
  sig.reserve(ds.size());
  for (int i = 0; i < ds.size(); ++i) sig.push_back(ds.record(i).signals);
  return features(sig);
}

FeatureExtractor FeatureExtractor::pretrain(const img::ImageCorpus& corpus, int epochs, std::uint64_t seed,
                                            PretrainReport* report) {
  if (corpus.count() < 10) throw std::invalid_argument("pretrain: corpus too small");
  if (epochs < 1) throw std::invalid_argument("pretrain: epochs must be >= 1");

  FeatureExtractor fx(12, corpus.classes, seed);
  auto& impl = *fx.impl_;

  // Patchify once up front.
  std::vector<Eigen::MatrixXf> patches(corpus.count());
  for (int i = 0; i < corpus.count(); ++i) patches[i] = img::patchify_image(corpus.image(i));

  Rng rng = Rng(seed).child(0x11);
  std::vector<int> order(corpus.count());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const int n_eval = std::max(1, corpus.count() / 10);
  const int n_train = corpus.count() - n_eval;

  nn::Adam<float> opt(impl.params, 3e-4f, 0.9f, 0.999f);
  impl.net.set_training(true);
  const int batch = 16;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> epoch_order(order.begin(), order.begin() + n_train);
    for (size_t i = epoch_order.size(); i > 1; --i) std::swap(epoch_order[i - 1], epoch_order[rng.below(i)]);
    for (int start = 0; start < n_train; start += batch) {
      const int b = std::min(batch, n_train - start);
      Tensor<float> x(b, 12, 512);
      Mat<float> labels = Mat<float>::Zero(corpus.classes, b);
      for (int i = 0; i < b; ++i) {
        const int idx = epoch_order[start + i];
        x.sample(i) = patches[idx];
        labels(corpus.labels[idx], i) = 1.0f;
      }
      megan::zero_grads(impl.params);
      Tensor<float> logits = impl.head.forward(impl.net.forward(x));
      Mat<float> dlogits;
      train::softmax_ce_multi(logits.m, labels, &dlogits);
      Tensor<float> dl(b, corpus.classes, 1);
      dl.m = dlogits / static_cast<float>(b);
      impl.net.backward(impl.head.backward(dl, true), true);
      megan::clip_grad_norm(impl.params, 10.0);
      opt.step();
    }
  }
  impl.net.set_training(false);

  // Held-out accuracy.
  int correct = 0;
  for (int i = n_train; i < corpus.count(); ++i) {
    const int idx = order[i];
    Tensor<float> x(1, 12, 512);
    x.sample(0) = patches[idx];
    Tensor<float> logits = impl.head.forward(impl.net.forward(x));
    int arg = 0;
    logits.m.col(0).maxCoeff(&arg);
    if (arg == corpus.labels[idx]) ++correct;
  }
  if (report) {
    report->epochs = epochs;
    report->corpus_size = corpus.count();
    report->classes = corpus.classes;
    report->eval_accuracy = static_cast<double>(correct) / n_eval;
  }
  return fx;
}

void FeatureExtractor::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.kind = "extractor";
  ckpt.config_json = extractor_config_json(impl_->in_channels, impl_->classes);
  for (const auto* p : impl_->params) ckpt.put(p->name, p->data);
  ckpt.save(path);
}

FeatureExtractor FeatureExtractor::load(const std::string& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.kind != "extractor")
    throw ConfigMismatchError("checkpoint kind '" + ckpt.kind + "' is not an extractor");
  json cfg = json::parse(ckpt.config_json);
  const int in_channels = cfg.at("in_channels").get<int>();
  const int classes = cfg.at("classes").get<int>();
  if (ckpt.config_json != extractor_config_json(in_channels, classes))
    throw ConfigMismatchError("unsupported extractor config: " + ckpt.config_json);
  FeatureExtractor fx(in_channels, classes, 0);
  for (auto* p : fx.impl_->params) from_f32(ckpt.get(p->name), p->data);
  return fx;
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

namespace {

constexpr double kJitter = 1e-6;

double sum_sqrt_clipped_eigenvalues(Eigen::MatrixXd& sym) {
  const auto dim = static_cast<lapack_int>(sym.rows());
  std::vector<double> w(static_cast<size_t>(dim));
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'N', 'U', dim, sym.data(), dim, w.data());
  if (info != 0) throw std::runtime_error("fid: eigensolver failed (info=" + std::to_string(info) + ")");
  double total = 0.0;
  for (double lambda : w) total += std::sqrt(std::max(lambda, 0.0));
  return total;
}

// Tr((Sa Sb)^{1/2}) via eigenvalues of the symmetrized product, clipped at 0.
// Both covariances are (low-rank factor) + jitter*I, so the product acts as
// jitter^2 * I outside the joint factor span: eigensolving only the spanned
// subspace and adding the (D - m)*jitter tail analytically gives the same
// value as the dense decomposition, without losing the tiny eigenvalues to
// roundoff.
double trace_sqrt_product(const GaussianSummary& a, const GaussianSummary& b) {
  const auto dim = a.cov.rows();
  const auto m0 = a.factor.cols() + b.factor.cols();
  if (a.factor.size() == 0 || b.factor.size() == 0 || m0 >= dim) {
    Eigen::MatrixXd prod = a.cov * b.cov;
    Eigen::MatrixXd sym = 0.5 * (prod + prod.transpose());
    return sum_sqrt_clipped_eigenvalues(sym);
  }

  Eigen::MatrixXd w(dim, m0);
  w << a.factor, b.factor;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(w);
  const auto m = qr.rank();
  if (m == 0) return static_cast<double>(dim) * kJitter;
  Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(dim, m);

  auto project = [&](const Eigen::MatrixXd& factor) {
    Eigen::MatrixXd f = basis.transpose() * factor;
    Eigen::MatrixXd s = f * f.transpose();
    s = 0.5 * (s + s.transpose()).eval();
    s.diagonal().array() += kJitter;
    return s;
  };
  Eigen::MatrixXd sa = project(a.factor);
  Eigen::MatrixXd sb = project(b.factor);
  Eigen::MatrixXd prod = sa * sb;
  Eigen::MatrixXd sym = 0.5 * (prod + prod.transpose());
  return sum_sqrt_clipped_eigenvalues(sym) + static_cast<double>(dim - m) * kJitter;
}

bool summary_less(const GaussianSummary& a, const GaussianSummary& b) {
  for (Eigen::Index i = 0; i < a.mean.size(); ++i)
    if (a.mean(i) != b.mean(i)) return a.mean(i) < b.mean(i);
  if (a.factor.size() != b.factor.size()) return a.factor.size() < b.factor.size();
  for (Eigen::Index i = 0; i < a.factor.size(); ++i)
    if (a.factor.data()[i] != b.factor.data()[i]) return a.factor.data()[i] < b.factor.data()[i];
  return false;
}

}  // namespace

GaussianSummary summarize_features(const Eigen::MatrixXf& features) {
  const auto n = features.cols();
  if (n < 2) throw std::invalid_argument("fid: need at least 2 samples per set");
  if (!features.allFinite()) throw std::invalid_argument("fid: non-finite features");
  Eigen::MatrixXd x = features.cast<double>();
  GaussianSummary s;
  s.mean = x.rowwise().mean();
  s.factor = (x.colwise() - s.mean) / std::sqrt(static_cast<double>(n - 1));
  s.cov.noalias() = s.factor * s.factor.transpose();
  s.cov.diagonal().array() += kJitter;  // jitter for rank-deficient sample counts
  return s;
}

double fid_from_summaries(const GaussianSummary& a, const GaussianSummary& b) {
  // The distance is symmetric; evaluate in a canonical argument order so
  // fid(a, b) and fid(b, a) produce identical bits.
  const GaussianSummary& lo = summary_less(b, a) ? b : a;
  const GaussianSummary& hi = summary_less(b, a) ? a : b;
  const double tr_sqrt = trace_sqrt_product(lo, hi);
  const double d2 = (lo.mean - hi.mean).squaredNorm() + lo.cov.trace() + hi.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d2, 0.0);
}

double fid(const Eigen::MatrixXf& features_a, const Eigen::MatrixXf& features_b) {
  return fid_from_summaries(summarize_features(features_a), summarize_features(features_b));
}

// ---------------------------------------------------------------------------
// rFID
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::uint8_t>> bootstrap_conditions(const data::Dataset& ds, int count, Rng& rng) {
  std::vector<std::vector<std::uint8_t>> conds;
  conds.reserve(count);
  for (int i = 0; i < count; ++i) conds.push_back(ds.record(static_cast<int>(rng.below(ds.size()))).labels);
  return conds;
}

}  // namespace

RfidResult rfid(const train::GeneratorHandle& gen, const data::Dataset& test_set,
                const FeatureExtractor& extractor, std::uint64_t seed) {
  auto [half1, half2] = test_set.balanced_halves(seed);
  Rng cond_rng = Rng(seed).child(0xc0);
  auto conds = bootstrap_conditions(test_set, half1.size(), cond_rng);
  auto generated = gen.generate_mixed(conds, Rng(seed).child(0x9e).next_u64());

  Eigen::MatrixXf f_gen = extractor.features(generated);
  Eigen::MatrixXf f1 = extractor.features_of(half1);
  Eigen::MatrixXf f2 = extractor.features_of(half2);

  RfidResult r;
  GaussianSummary s2 = summarize_features(f2);
  r.numerator = fid_from_summaries(summarize_features(f_gen), s2);
  r.denominator = fid_from_summaries(summarize_features(f1), s2);
  if (r.denominator == 0.0) throw std::runtime_error("rfid: degenerate split (zero denominator)");
  r.rfid = r.numerator / r.denominator;
  return r;
}

// ---------------------------------------------------------------------------
// 1-NN two-sample accuracy
// ---------------------------------------------------------------------------

double onnc(const std::vector<Eigen::MatrixXf>& real, const std::vector<Eigen::MatrixXf>& fake) {
  if (real.size() != fake.size() || real.empty())
    throw std::invalid_argument("onnc: sets must be equal-size and non-empty");
  const int n = static_cast<int>(real.size());
  const int total = 2 * n;
  const auto dim = real[0].size();

  Eigen::MatrixXd x(dim, total);
  for (int i = 0; i < n; ++i) {
    x.col(i) = Eigen::Map<const Eigen::MatrixXf>(real[i].data(), dim, 1).cast<double>();
    x.col(n + i) = Eigen::Map<const Eigen::MatrixXf>(fake[i].data(), dim, 1).cast<double>();
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  Eigen::VectorXd sq = gram.diagonal();

  int correct = 0;
  for (int i = 0; i < total; ++i) {
    double best = std::numeric_limits<double>::infinity();
    bool best_is_fake = false;
    for (int j = 0; j < total; ++j) {
      if (j == i) continue;
      const double d2 = sq(i) + sq(j) - 2.0 * gram(i, j);
      const bool j_fake = j >= n;
      if (d2 < best || (d2 == best && j_fake && !best_is_fake)) {
        best = d2;
        best_is_fake = j_fake;
      }
    }
    const bool i_fake = i >= n;
    if (best_is_fake == i_fake) ++correct;
  }
  return static_cast<double>(correct) / total;
}

// ---------------------------------------------------------------------------
// Triplet embedder + consistency distance
// ---------------------------------------------------------------------------

struct TripletEmbedder::Impl {
  Conv1d<float> c1, c2, c3, c4;
  InstanceNorm1d<float> n1{16}, n2{32}, n3{64}, n4{64};
  LeakyReLU<float> a1, a2, a3, a4;
  GlobalAvgPool<float> gap;
  ParamRefs<float> params;

  explicit Impl(Rng rng)
      : c1("te.c1", 1, 16, 4, 2, 1, rng), c2("te.c2", 16, 32, 4, 2, 1, rng),
        c3("te.c3", 32, 64, 4, 2, 1, rng), c4("te.c4", 64, 64, 4, 2, 1, rng) {
    c1.collect(params);
    c2.collect(params);
    c3.collect(params);
    c4.collect(params);
  }

  Tensor<float> forward(const Tensor<float>& x) {
    Tensor<float> h = a1.forward(n1.forward(c1.forward(x)));
    h = a2.forward(n2.forward(c2.forward(h)));
    h = a3.forward(n3.forward(c3.forward(h)));
    h = a4.forward(n4.forward(c4.forward(h)));
    return gap.forward(h);
  }

  void backward(const Tensor<float>& dy) {
    Tensor<float> dh = gap.backward(dy);
    dh = c4.backward(n4.backward(a4.backward(dh)), true);
    dh = c3.backward(n3.backward(a3.backward(dh)), true);
    dh = c2.backward(n2.backward(a2.backward(dh)), true);
    c1.backward(n1.backward(a1.backward(dh)), true);
  }
};

TripletEmbedder::TripletEmbedder(std::uint64_t seed)
    : impl_(std::make_unique<Impl>(Rng(seed).child(0x7e))) {}
TripletEmbedder::~TripletEmbedder() = default;
TripletEmbedder::TripletEmbedder(TripletEmbedder&&) noexcept = default;

void TripletEmbedder::train(const data::Dataset& ds, int steps, std::uint64_t seed) {
  if (ds.size() < 2) throw std::invalid_argument("triplet train: need at least 2 records");
  const int n = ds.views();
  const int L = ds.length();
  const int batch = 16;
  Rng rng = Rng(seed).child(0x3a);
  nn::Adam<float> opt(impl_->params, 1e-3f, 0.9f, 0.999f);
  constexpr double kMargin = 1.0;

  for (int step = 0; step < steps; ++step) {
    // Anchor/positive: two distinct views of one record; negative: a view of
    // a different record.
    Tensor<float> x(3 * batch, 1, L);
    for (int i = 0; i < batch; ++i) {
      const int r1 = static_cast<int>(rng.below(ds.size()));
      int r2 = static_cast<int>(rng.below(ds.size() - 1));
      if (r2 >= r1) ++r2;
      const int va = static_cast<int>(rng.below(n));
      int vp = static_cast<int>(rng.below(n - 1));
      if (vp >= va) ++vp;
      const int vn = static_cast<int>(rng.below(n));
      x.sample(i).row(0) = ds.record(r1).signals.row(va);
      x.sample(batch + i).row(0) = ds.record(r1).signals.row(vp);
      x.sample(2 * batch + i).row(0) = ds.record(r2).signals.row(vn);
    }
    megan::zero_grads(impl_->params);
    Tensor<float> emb = impl_->forward(x);  // (3B, 64, 1)
    Tensor<float> demb(3 * batch, 64, 1);
    for (int i = 0; i < batch; ++i) {
      Eigen::VectorXf ea = emb.m.col(i), ep = emb.m.col(batch + i), en = emb.m.col(2 * batch + i);
      const double d_ap = std::max(1e-12, static_cast<double>((ea - ep).norm()));
      const double d_an = std::max(1e-12, static_cast<double>((ea - en).norm()));
      if (d_ap - d_an + kMargin <= 0.0) continue;
      Eigen::VectorXf g_ap = (ea - ep) / static_cast<float>(d_ap);
      Eigen::VectorXf g_an = (ea - en) / static_cast<float>(d_an);
      demb.m.col(i) += (g_ap - g_an) / static_cast<float>(batch);
      demb.m.col(batch + i) += -g_ap / static_cast<float>(batch);
      demb.m.col(2 * batch + i) += g_an / static_cast<float>(batch);
    }
    impl_->backward(demb);
    megan::clip_grad_norm(impl_->params, 10.0);
    opt.step();
  }
}

Eigen::MatrixXf TripletEmbedder::embed(const Eigen::MatrixXf& views) const {
  const int n = static_cast<int>(views.rows());
  if (n < 2) throw std::invalid_argument("embed: need at least 2 views");
  Tensor<float> x(n, 1, static_cast<int>(views.cols()));
  for (int v = 0; v < n; ++v) x.sample(v).row(0) = views.row(v);
  return impl_->forward(x).m;
}

double consistency_distance(const std::vector<Eigen::MatrixXf>& records, const TripletEmbedder& embedder) {
  if (records.empty()) throw std::invalid_argument("consistency_distance: empty record set");
  double total = 0.0;
  for (const auto& rec : records) {
    Eigen::MatrixXf e = embedder.embed(rec);
    const int n = static_cast<int>(e.cols());
    double sum = 0.0;
    int pairs = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        sum += (e.col(p) - e.col(q)).norm();
        ++pairs;
      }
    total += sum / pairs;
  }
  return total / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Perturbation suite
// ---------------------------------------------------------------------------

namespace {

void perturb_noise(std::vector<Eigen::MatrixXf>& sig, Rng& rng) {
  for (auto& s : sig)
    for (int v = 0; v < s.rows(); ++v)
      for (int t = 0; t < s.cols(); ++t) s(v, t) += static_cast<float>(rng.uniform(0.0, 0.0002));
}

void perturb_erase(std::vector<Eigen::MatrixXf>& sig, Rng& rng) {
  constexpr int kRun = 30;
  for (auto& s : sig) {
    const int L = static_cast<int>(s.cols());
    for (int v = 0; v < s.rows(); ++v) {
      // Need both breakpoints inside the record: start in [1, L - kRun - 1].
      const int start = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L - kRun - 1)));
      const float lo = s(v, start - 1);
      const float hi = s(v, start + kRun);
      for (int j = 0; j < kRun; ++j)
        s(v, start + j) = lo + (hi - lo) * static_cast<float>(j + 1) / static_cast<float>(kRun + 1);
    }
  }
}

void perturb_blur(std::vector<Eigen::MatrixXf>& sig) {
  for (auto& s : sig) {
    Eigen::MatrixXf out(s.rows(), s.cols());
    const int vmax = static_cast<int>(s.rows()) - 1;
    const int tmax = static_cast<int>(s.cols()) - 1;
    for (int v = 0; v <= vmax; ++v) {
      const int v1 = std::min(v + 1, vmax);
      for (int t = 0; t <= tmax; ++t) {
        const int t1 = std::min(t + 1, tmax);
        out(v, t) = 0.25f * (s(v, t) + s(v, t1) + s(v1, t) + s(v1, t1));
      }
    }
    s = std::move(out);
  }
}

}  // namespace

PerturbationCurves perturbation_suite(const data::Dataset& test_set, const FeatureExtractor& extractor,
                                      const PerturbOptions& opt) {
  if (opt.steps < 1) throw std::invalid_argument("perturbation_suite: steps must be >= 1");
  auto [half1, half2] = test_set.balanced_halves(opt.seed);

  auto take = [&](const data::Dataset& ds) {
    std::vector<Eigen::MatrixXf> sig;
    const int m = std::min(opt.max_samples_per_half, ds.size());
    sig.reserve(m);
    for (int i = 0; i < m; ++i) sig.push_back(ds.record(i).signals);
    return sig;
  };
  std::vector<Eigen::MatrixXf> base = take(half1);
  std::vector<Eigen::MatrixXf> ref = take(half2);

  GaussianSummary s_ref = summarize_features(extractor.features(ref));
  GaussianSummary s_base = summarize_features(extractor.features(base));
  const double denom = fid_from_summaries(s_base, s_ref);
  if (denom == 0.0) throw std::runtime_error("perturbation_suite: degenerate split (zero denominator)");

  PerturbationCurves curves;
  auto run_track = [&](int kind, std::uint64_t tag) {
    std::vector<double> curve;
    curve.push_back(fid_from_summaries(s_base, s_ref) / denom);  // step 0, exactly 1
    std::vector<Eigen::MatrixXf> sig = base;
    Rng rng = Rng(opt.seed).child(tag);
    for (int step = 1; step <= opt.steps; ++step) {
      if (kind == 0) perturb_noise(sig, rng);
      if (kind == 1) perturb_erase(sig, rng);
      if (kind == 2) perturb_blur(sig);
      curve.push_back(fid_from_summaries(summarize_features(extractor.features(sig)), s_ref) / denom);
    }
    return curve;
  };
  curves.noise = run_track(0, 0xa1);
  curves.erase = run_track(1, 0xa2);
  curves.blur = run_track(2, 0xa3);
  return curves;
}

// ---------------------------------------------------------------------------
// Augmentation benefit
// ---------------------------------------------------------------------------

double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("pr_auc: size mismatch or empty");
  const int n_pos = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw std::invalid_argument("pr_auc: no positive labels");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  double ap = 0.0;
  int tp = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / n_pos;
}

namespace {

// Fixed small conv classifier used by the augmentation study.
struct SmallClassifier {
  Conv1d<float> c1, c2, c3;
  InstanceNorm1d<float> n1{32}, n2{64}, n3{64};
  LeakyReLU<float> a1, a2, a3;
  GlobalAvgPool<float> gap;
  Dense<float> head;
  ParamRefs<float> params;

  SmallClassifier(int views, int k, Rng rng)
      : c1("ac.c1", views, 32, 4, 2, 1, rng), c2("ac.c2", 32, 64, 4, 2, 1, rng),
        c3("ac.c3", 64, 64, 4, 2, 1, rng), head("ac.head", 64, k, rng) {
    c1.collect(params);
    c2.collect(params);
    c3.collect(params);
    head.collect(params);
  }

  Tensor<float> forward(const Tensor<float>& x) {
    Tensor<float> h = a1.forward(n1.forward(c1.forward(x)));
    h = a2.forward(n2.forward(c2.forward(h)));
    h = a3.forward(n3.forward(c3.forward(h)));
    return head.forward(gap.forward(h));
  }

  void backward(const Tensor<float>& dlogits) {
    Tensor<float> dh = gap.backward(head.backward(dlogits, true));
    dh = c3.backward(n3.backward(a3.backward(dh)), true);
    dh = c2.backward(n2.backward(a2.backward(dh)), true);
    c1.backward(n1.backward(a1.backward(dh)), true);
  }
};

struct LabeledSet {
  std::vector<Eigen::MatrixXf> signals;
  std::vector<std::vector<std::uint8_t>> labels;
};

// Multi-label BCE training, fixed budget.
void train_classifier(SmallClassifier& cls, const LabeledSet& set, int k, std::uint64_t seed) {
  const int steps = 1200;
  const int batch = 32;
  Rng rng = Rng(seed).child(0xcc);
  nn::Adam<float> opt(cls.params, 1e-3f, 0.9f, 0.999f);
  const int L = static_cast<int>(set.signals[0].cols());
  const int views = static_cast<int>(set.signals[0].rows());
  for (int step = 0; step < steps; ++step) {
    Tensor<float> x(batch, views, L);
    Mat<float> labels = Mat<float>::Zero(k, batch);
    for (int i = 0; i < batch; ++i) {
      const auto idx = static_cast<size_t>(rng.below(set.signals.size()));
      x.sample(i) = set.signals[idx];
      for (int j = 0; j < k; ++j) labels(j, i) = static_cast<float>(set.labels[idx][j]);
    }
    megan::zero_grads(cls.params);
    Tensor<float> logits = cls.forward(x);
    Mat<float> dlogits;
    train::bce_with_logits(logits.m, labels, &dlogits);
    Tensor<float> dl(batch, k, 1);
    dl.m = dlogits / static_cast<float>(batch);
    cls.backward(dl);
    megan::clip_grad_norm(cls.params, 10.0);
    opt.step();
  }
}

std::map<std::string, double> score_classifier(SmallClassifier& cls, const data::Dataset& test_set,
                                               const std::vector<std::string>& names,
                                               const std::vector<bool>& usable) {
  const int k = static_cast<int>(names.size());
  Eigen::MatrixXf scores(k, test_set.size());
  for (int i = 0; i < test_set.size(); ++i) {
    Tensor<float> x(1, test_set.views(), test_set.length());
    x.sample(0) = test_set.record(i).signals;
    scores.col(i) = cls.forward(x).m.col(0);
  }
  std::map<std::string, double> out;
  for (int j = 0; j < k; ++j) {
    if (!usable[j]) continue;
    std::vector<double> s(test_set.size());
    std::vector<int> y(test_set.size());
    for (int i = 0; i < test_set.size(); ++i) {
      s[i] = scores(j, i);
      y[i] = test_set.record(i).labels[j];
    }
    if (std::count(y.begin(), y.end(), 1) == 0) continue;  // undefined on this test set
    out[names[j]] = pr_auc(s, y);
  }
  return out;
}

}  // namespace

AugmentationResult augmentation_eval(const data::Dataset& train_set, const data::Dataset& test_set,
                                     const train::GeneratorHandle& gen, std::uint64_t seed) {
  const int k = train_set.diseases();
  const auto& names = train_set.label_names();

  LabeledSet base;
  for (int i = 0; i < train_set.size(); ++i) {
    base.signals.push_back(train_set.record(i).signals);
    base.labels.push_back(train_set.record(i).labels);
  }

  AugmentationResult result;
  std::vector<bool> usable(k, true);
  std::vector<int> class_count(k, 0);
  for (const auto& l : base.labels)
    for (int j = 0; j < k; ++j) class_count[j] += l[j];
  for (int j = 0; j < k; ++j) {
    if (class_count[j] == 0) {
      usable[j] = false;
      result.skipped.push_back(names[j]);
    }
  }

  // Augmented copy: double each conditioned class with synthesized samples.
  LabeledSet augmented = base;
  std::uint64_t gen_seed = Rng(seed).child(0x51).next_u64();
  for (int j = 0; j < k; ++j) {
    if (!usable[j]) continue;
    std::vector<std::uint8_t> cond(static_cast<size_t>(k), 0);
    cond[j] = 1;
    auto samples = gen.generate(class_count[j], cond.data(), gen_seed + j);
    for (auto& s : samples) {
      augmented.signals.push_back(std::move(s));
      augmented.labels.push_back(cond);
    }
  }

  SmallClassifier baseline(train_set.views(), k, Rng(seed).child(0x61));
  train_classifier(baseline, base, k, seed);
  result.pr_auc_baseline = score_classifier(baseline, test_set, names, usable);

  SmallClassifier boosted(train_set.views(), k, Rng(seed).child(0x61));  // same init
  train_classifier(boosted, augmented, k, seed);
  result.pr_auc_augmented = score_classifier(boosted, test_set, names, usable);
  return result;
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

std::string MetricReport::to_json() const {
  json j;
  j["rfid"] = rfid;
  j["fid_numerator"] = fid_numerator;
  j["fid_denominator"] = fid_denominator;
  j["onnc_accuracy"] = onnc_accuracy;
  j["consistency_distance"] = consistency_distance;
  j["consistency_distance_real"] = consistency_distance_real;
  if (pr_auc.has_value())
    j["pr_auc"] = *pr_auc;
  else
    j["pr_auc"] = nullptr;
  return j.dump(2);
}

MetricReport evaluate_generator(const train::GeneratorHandle& gen, const data::Dataset& eval_set,
                                const FeatureExtractor& extractor, const EvalOptions& opt) {
  if (gen.diseases() != eval_set.diseases())
    throw ConfigMismatchError("evaluate: generator condition count differs from dataset k");
  MetricReport report;

  RfidResult r = rfid(gen, eval_set, extractor, Rng(opt.seed).child(0x01).next_u64());
  report.rfid = r.rfid;
  report.fid_numerator = r.numerator;
  report.fid_denominator = r.denominator;

  // 1NNC on a real subset vs. freshly generated set of equal size.
  Rng pick_rng = Rng(opt.seed).child(0x02);
  const int n_onnc = std::min(opt.onnc_samples, eval_set.size());
  std::vector<int> order(eval_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[pick_rng.below(i)]);
  std::vector<Eigen::MatrixXf> real_subset;
  for (int i = 0; i < n_onnc; ++i) real_subset.push_back(eval_set.record(order[i]).signals);
  auto conds = bootstrap_conditions(eval_set, n_onnc, pick_rng);
  auto fake_subset = gen.generate_mixed(conds, Rng(opt.seed).child(0x03).next_u64());
  report.onnc_accuracy = onnc(real_subset, fake_subset);

  // Consistency: embedder trained on the real data, applied to both sets.
  TripletEmbedder embedder(Rng(opt.seed).child(0x04).next_u64());
  embedder.train(eval_set, opt.embedder_steps, Rng(opt.seed).child(0x05).next_u64());
  const int n_cons = std::min(opt.consistency_samples, eval_set.size());
  std::vector<Eigen::MatrixXf> real_cons;
  for (int i = 0; i < n_cons; ++i) real_cons.push_back(eval_set.record(order[i]).signals);
  auto fake_cons = gen.generate_mixed(bootstrap_conditions(eval_set, n_cons, pick_rng),
                                      Rng(opt.seed).child(0x06).next_u64());
  report.consistency_distance = consistency_distance(fake_cons, embedder);
  report.consistency_distance_real = consistency_distance(real_cons, embedder);

  if (opt.with_augmentation) {
    auto [tr, te] = eval_set.split(0.8, Rng(opt.seed).child(0x07).next_u64());
    auto aug = augmentation_eval(tr, te, gen, Rng(opt.seed).child(0x08).next_u64());
    report.pr_auc = aug.pr_auc_augmented;
  }
  return report;
}

}  // namespace megan::metrics
