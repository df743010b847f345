#include <doctest.h>

#include "megan/dataset.hpp"
#include "megan/errors.hpp"
#include "megan/images.hpp"
#include "megan/metrics.hpp"

#include <cmath>
#include <filesystem>

using namespace megan;
using namespace megan::metrics;
namespace fs = std::filesystem;

TEST_CASE("patchify") {
  SUBCASE("constant image maps to a constant 12x512 matrix") {
    img::Image im(46, 46);
    for (auto& v : im.data) v = 0.37;
    auto p = img::patchify_image(im);
    CHECK(p.rows() == 12);
    CHECK(p.cols() == 512);
    CHECK((p.array() - 0.37f).abs().maxCoeff() < 1e-6f);
  }

  SUBCASE("marker pixel at (0,0) lands only in column 0") {
    img::Image base(46, 46);
    for (auto& v : base.data) v = 0.5;
    img::Image marked = base;
    marked.at(0, 0, 1) = 1.0;
    auto p0 = img::patchify_full(base);
    auto p1 = img::patchify_full(marked);
    for (int col = 0; col < p0.cols(); ++col) {
      const bool differs = ((p0.col(col) - p1.col(col)).cwiseAbs().maxCoeff() > 0);
      CHECK(differs == (col == 0));
    }
  }

  SUBCASE("unpatchify restores the resized pixels bitwise") {
    Rng rng(3);
    img::Image im(46, 46);
    for (auto& v : im.data) v = rng.uniform();
    auto patches = img::patchify_full(im);
    img::Image back = img::unpatchify(patches);
    for (int y = 0; y < 46; ++y)
      for (int x = 0; x < 46; ++x)
        for (int c = 0; c < 3; ++c)
          CHECK(static_cast<float>(im.at(y, x, c)) == static_cast<float>(back.at(y, x, c)));
  }

  SUBCASE("non-46x46 inputs are resized first") {
    img::Image im(64, 80);
    for (auto& v : im.data) v = 0.25;
    auto p = img::patchify_image(im);
    CHECK(p.rows() == 12);
    CHECK(p.cols() == 512);
    CHECK((p.array() - 0.25f).abs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("fid") {
  constexpr int D = FeatureExtractor::kFeatureDim;

  SUBCASE("identical sets give fid 0 within 1e-6") {
    Rng rng(7);
    Eigen::MatrixXf a(D, 8);
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < D; ++i) a(i, j) = static_cast<float>(rng.normal());
    CHECK(fid(a, a) < 1e-6);
  }

  SUBCASE("embedded 1-D Gaussian closed form: mu=(0,3), sigma=(1,2) -> 10") {
    // Four samples with exact sample stats: {-1,1} * sqrt(3)/... gives
    // mean / unbiased-std exactly (0, 1) and (3, 2).
    Eigen::MatrixXf a = Eigen::MatrixXf::Zero(D, 4);
    Eigen::MatrixXf b = Eigen::MatrixXf::Zero(D, 4);
    const double s1 = std::sqrt(3.0) / 2.0;       // std 1 with unbiased estimator
    const double s2 = std::sqrt(3.0);             // std 2
    for (int j = 0; j < 4; ++j) {
      a(0, j) = static_cast<float>((j % 2 == 0 ? -1.0 : 1.0) * s1);
      b(0, j) = static_cast<float>(3.0 + (j % 2 == 0 ? -1.0 : 1.0) * s2);
    }
    CHECK(fid(a, b) == doctest::Approx(10.0).epsilon(1e-4));
  }

  SUBCASE("symmetry within 1e-8") {
    Rng rng(9);
    Eigen::MatrixXf a(D, 6), b(D, 6);
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < D; ++i) {
        a(i, j) = static_cast<float>(rng.normal());
        b(i, j) = static_cast<float>(rng.normal() + 0.1);
      }
    CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-8);
  }

  SUBCASE("invariance under a common orthogonal rotation") {
    Rng rng(11);
    Eigen::MatrixXf a(D, 5), b(D, 5);
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < D; ++i) {
        a(i, j) = static_cast<float>(rng.normal());
        b(i, j) = static_cast<float>(0.8 * rng.normal() + 0.3);
      }
    // Block-diagonal Givens rotation (cheap, exactly orthogonal).
    Eigen::MatrixXf a_rot = a, b_rot = b;
    const float c = std::cos(0.7f), s = std::sin(0.7f);
    for (int i = 0; i < D; i += 2) {
      a_rot.row(i) = c * a.row(i) - s * a.row(i + 1);
      a_rot.row(i + 1) = s * a.row(i) + c * a.row(i + 1);
      b_rot.row(i) = c * b.row(i) - s * b.row(i + 1);
      b_rot.row(i + 1) = s * b.row(i) + c * b.row(i + 1);
    }
    CHECK(fid(a_rot, b_rot) == doctest::Approx(fid(a, b)).epsilon(1e-6));
  }

  SUBCASE("small or non-finite sets are rejected") {
    Eigen::MatrixXf one(D, 1);
    CHECK_THROWS_AS(summarize_features(one), std::invalid_argument);
    Eigen::MatrixXf bad = Eigen::MatrixXf::Zero(D, 3);
    bad(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(summarize_features(bad), std::invalid_argument);
  }
}

TEST_CASE("onnc") {
  auto record = [](double base) {
    Eigen::MatrixXf m(2, 8);
    for (int v = 0; v < 2; ++v)
      for (int t = 0; t < 8; ++t) m(v, t) = static_cast<float>(base + 0.01 * v + 0.001 * t);
    return m;
  };

  SUBCASE("clearly separated sets give accuracy 1") {
    std::vector<Eigen::MatrixXf> real, fake;
    for (int i = 0; i < 8; ++i) {
      real.push_back(record(i * 0.05));
      fake.push_back(record(i * 0.05 + 10.0));
    }
    CHECK(onnc(real, fake) == doctest::Approx(1.0));
  }

  SUBCASE("N=1 per set: each sample's neighbor is the other set -> accuracy 0") {
    std::vector<Eigen::MatrixXf> real{record(0.0)}, fake{record(1.0)};
    CHECK(onnc(real, fake) == 0.0);
  }

  SUBCASE("duplicate samples across sets tie-break toward fake") {
    // real = {A, B}, fake = {A, C} with C closest to the duplicated A: C sees
    // both copies at equal distance and the tie rule calls it fake (correct).
    // A_real's nearest is its strict-zero-distance twin (wrong), A_fake's is
    // the real twin (wrong), and B's nearest is C (wrong): accuracy 1/4,
    // reached only through the deterministic tie rule.
    std::vector<Eigen::MatrixXf> real{record(0.0), record(5.0)};
    std::vector<Eigen::MatrixXf> fake{record(0.0), record(2.0)};
    CHECK(onnc(real, fake) == doctest::Approx(0.25));
  }

  SUBCASE("size mismatch rejected") {
    std::vector<Eigen::MatrixXf> real{record(0.0)};
    std::vector<Eigen::MatrixXf> fake;
    CHECK_THROWS_AS(onnc(real, fake), std::invalid_argument);
  }
}

TEST_CASE("pr_auc hand example") {
  // scores sorted: 0.9(+), 0.8(-), 0.7(+), 0.6(-) -> AP = (1/1 + 2/3)/2.
  std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
  std::vector<int> labels{1, 0, 1, 0};
  CHECK(pr_auc(scores, labels) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(pr_auc(scores, {0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("feature extractor") {
  SUBCASE("random-init extractor: 2048 features, deterministic, full receptive field") {
    FeatureExtractor fx(12, 4, 21);
    Rng rng(5);
    Eigen::MatrixXf sig(12, 512);
    for (int v = 0; v < 12; ++v)
      for (int t = 0; t < 512; ++t) sig(v, t) = static_cast<float>(rng.uniform());
    auto f1 = fx.features({sig});
    auto f2 = fx.features({sig});
    REQUIRE(f1.rows() == 2048);
    REQUIRE(f1.cols() == 1);
    CHECK((f1.array() == f2.array()).all());

    Eigen::MatrixXf poked = sig;
    poked(3, 511) += 0.5f;
    auto f3 = fx.features({poked});
    CHECK((f1 - f3).cwiseAbs().maxCoeff() > 0.0f);
  }

  SUBCASE("save / load round trip gives identical features") {
    FeatureExtractor fx(12, 4, 33);
    auto path = (fs::temp_directory_path() / "megan_test_fx.megan").string();
    fx.save(path);
    auto fx2 = FeatureExtractor::load(path);
    Rng rng(6);
    Eigen::MatrixXf sig(12, 512);
    for (int v = 0; v < 12; ++v)
      for (int t = 0; t < 512; ++t) sig(v, t) = static_cast<float>(rng.uniform());
    CHECK((fx.features({sig}).array() == fx2.features({sig}).array()).all());
  }

  SUBCASE("pretraining is deterministic and serializable") {
    auto corpus = img::synth_image_corpus(48, 4, 13);
    PretrainReport rep1, rep2;
    auto fx1 = FeatureExtractor::pretrain(corpus, 1, 99, &rep1);
    auto fx2 = FeatureExtractor::pretrain(corpus, 1, 99, &rep2);
    CHECK(rep1.eval_accuracy == rep2.eval_accuracy);
    Eigen::MatrixXf sig = img::patchify_image(corpus.image(0));
    CHECK((fx1.features({sig}).array() == fx2.features({sig}).array()).all());
  }
}

TEST_CASE("image corpus io and structure") {
  auto corpus = img::synth_image_corpus(16, 8, 5);
  CHECK(corpus.count() == 16);
  int per_class[8] = {0};
  for (int l : corpus.labels) per_class[l]++;
  for (int c = 0; c < 8; ++c) CHECK(per_class[c] == 2);

  auto dir = (fs::temp_directory_path() / "megan_test_corpus").string();
  fs::remove_all(dir);
  corpus.save(dir);
  auto loaded = img::ImageCorpus::load(dir);
  CHECK(loaded.labels == corpus.labels);
  CHECK(loaded.pixels == corpus.pixels);
  CHECK_THROWS_AS(img::ImageCorpus::load(dir + "_missing"), CorruptionError);
}

TEST_CASE("triplet embedder") {
  auto ds = data::synth_toy_dataset(12, 3, {0.0, 0.0, 0.0});

  SUBCASE("identical views embed identically (distance 0)") {
    TripletEmbedder emb(3);
    Eigen::MatrixXf rec(12, 512);
    Rng rng(8);
    Eigen::VectorXf one(512);
    for (int t = 0; t < 512; ++t) one(t) = static_cast<float>(rng.uniform());
    for (int v = 0; v < 12; ++v) rec.row(v) = one.transpose();
    CHECK(consistency_distance({rec}, emb) == doctest::Approx(0.0).epsilon(1e-10));
  }

  SUBCASE("short training run completes and changes embeddings") {
    TripletEmbedder emb(3);
    auto before = emb.embed(ds.record(0).signals);
    emb.train(ds, 10, 5);
    auto after = emb.embed(ds.record(0).signals);
    CHECK((before - after).cwiseAbs().maxCoeff() > 0.0f);
  }
}

TEST_CASE("perturbation suite at smoke scale starts at exactly 1") {
  auto ds = data::synth_toy_dataset(24, 19, {0.0, 0.0, 0.0});
  FeatureExtractor fx(12, 4, 3);
  PerturbOptions opt;
  opt.steps = 2;
  opt.max_samples_per_half = 8;
  opt.seed = 7;
  auto curves = perturbation_suite(ds, fx, opt);
  REQUIRE(curves.noise.size() == 3);
  CHECK(curves.noise[0] == 1.0);
  CHECK(curves.erase[0] == 1.0);
  CHECK(curves.blur[0] == 1.0);
  for (auto& c : {curves.noise, curves.erase, curves.blur})
    for (double v : c) CHECK(std::isfinite(v));
}
