#include <doctest.h>

#include "megan/dataset.hpp"
#include "megan/errors.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

using namespace megan;
using namespace megan::data;
namespace fs = std::filesystem;

namespace {
constexpr double kPi = 3.14159265358979323846;

fs::path temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("megan_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("viewpoint encoding") {
  SUBCASE("(pi/2, pi/2) -> (0, cos pi/4)") {
    auto enc = encode_viewpoints({{kPi / 2, kPi / 2}});
    CHECK(enc(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(enc(0, 1) == doctest::Approx(std::cos(kPi / 4)).epsilon(1e-12));
  }
  SUBCASE("(0, 0) -> (1, 1)") {
    auto enc = encode_viewpoints({{0.0, 0.0}});
    CHECK(enc(0, 0) == 1.0);
    CHECK(enc(0, 1) == 1.0);
  }
  SUBCASE("all 12 default pairs stay in (-1, 1]") {
    const auto& enc = ViewpointTable::standard12().encoding();
    REQUIRE(enc.rows() == 12);
    for (int p = 0; p < 12; ++p)
      for (int j = 0; j < 2; ++j) {
        CHECK(enc(p, j) > -1.0);
        CHECK(enc(p, j) <= 1.0);
      }
    // First pair per the published table.
    CHECK(enc(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(enc(0, 1) == doctest::Approx(std::cos(kPi / 4)).epsilon(1e-12));
  }
  SUBCASE("out-of-range angles are rejected") {
    CHECK_THROWS_AS(encode_viewpoints({{-0.1, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(encode_viewpoints({{3.2, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(encode_viewpoints({{0.5, -0.1}}), std::invalid_argument);
    CHECK_THROWS_AS(encode_viewpoints({{0.5, 2 * kPi}}), std::invalid_argument);
  }
  SUBCASE("negative azimuth canonicalizes mod 2*pi") {
    ViewpointTable t({{kPi / 2, -kPi / 2}});
    CHECK(t.angles()[0].phi == doctest::Approx(3 * kPi / 2).epsilon(1e-12));
    CHECK(t.encoding()(0, 1) == doctest::Approx(std::cos(3 * kPi / 4)).epsilon(1e-12));
  }
}

TEST_CASE("preprocessing") {
  SUBCASE("1000 Hz length 1024 resamples to 512 at 500 Hz") {
    Eigen::MatrixXd raw(2, 1024);
    for (int t = 0; t < 1024; ++t) {
      raw(0, t) = std::sin(2 * kPi * 7 * t / 1024.0);
      raw(1, t) = std::cos(2 * kPi * 3 * t / 1024.0);
    }
    auto sig = preprocess_signals(raw, 1000.0);
    CHECK(sig.rows() == 2);
    CHECK(sig.cols() == 512);
    CHECK(sig.minCoeff() == 0.0f);
    CHECK(sig.maxCoeff() == 1.0f);
  }

  SUBCASE("linear ramp pads with the final value; tail scales to 1") {
    Eigen::MatrixXd raw(1, 400);
    for (int t = 0; t < 400; ++t) raw(0, t) = 10.0 * t / 399.0;
    auto sig = preprocess_signals(raw, 500.0);
    REQUIRE(sig.cols() == 512);
    CHECK(sig(0, 0) == 0.0f);
    CHECK(sig(0, 511) == 1.0f);
    CHECK(sig(0, 440) == 1.0f);  // padded region
    CHECK(sig.minCoeff() == 0.0f);
    CHECK(sig.maxCoeff() == 1.0f);
  }

  SUBCASE("preprocessed records are fixed points (bitwise idempotence)") {
    Rng rng(21);
    auto parts = synth_toy_record(rng, {false, false, false}, ViewpointTable::standard12(), "t");
    const Eigen::MatrixXf& once = parts.record.signals;
    auto twice = preprocess_signals(once.cast<double>(), 500.0);
    REQUIRE(twice.rows() == once.rows());
    CHECK((twice.array() == once.array()).all());
  }

  SUBCASE("constant record is rejected") {
    Eigen::MatrixXd raw = Eigen::MatrixXd::Constant(3, 512, 0.25);
    CHECK_THROWS_WITH_AS(preprocess_signals(raw, 500.0), "degenerate amplitude", std::runtime_error);
  }
}

TEST_CASE("dataset split") {
  auto make = [](int count, int ones) {
    Dataset ds(2, 512, {"a", "b", "c"});
    for (int i = 0; i < count; ++i) {
      MultiViewRecord r;
      r.signals = Eigen::MatrixXf::Constant(2, 512, 0.5f);
      r.signals(0, 0) = static_cast<float>(i) / count;  // make records distinct
      r.labels = {static_cast<std::uint8_t>(i < ones ? 1 : 0), 0, 0};
      r.id = "r" + std::to_string(i);
      ds.add(std::move(r));
    }
    return ds;
  };

  SUBCASE("10 records, fraction 0.8 -> 8/2") {
    auto ds = make(10, 0);
    auto [tr, te] = ds.split(0.8, 99);
    CHECK(tr.size() == 8);
    CHECK(te.size() == 2);
  }

  SUBCASE("same seed gives identical splits") {
    auto ds = make(20, 10);
    auto [tr1, te1] = ds.split(0.8, 4242);
    auto [tr2, te2] = ds.split(0.8, 4242);
    REQUIRE(tr1.size() == tr2.size());
    for (int i = 0; i < tr1.size(); ++i) CHECK(tr1.record(i).id == tr2.record(i).id);
  }

  SUBCASE("label proportions preserved within one record") {
    auto ds = make(100, 50);
    auto [tr, te] = ds.split(0.8, 7);
    auto count_ones = [](const Dataset& d) {
      int n = 0;
      for (int i = 0; i < d.size(); ++i) n += d.record(i).labels[0];
      return n;
    };
    CHECK(std::abs(count_ones(tr) - 40) <= 1);
    CHECK(std::abs(count_ones(te) - 10) <= 1);
    CHECK(tr.size() + te.size() == 100);
  }

  SUBCASE("empty dataset / bad fraction rejected") {
    Dataset empty(2, 512, {"a"});
    CHECK_THROWS_AS(empty.split(0.8, 1), std::invalid_argument);
    auto ds = make(4, 0);
    CHECK_THROWS_AS(ds.split(1.0, 1), std::invalid_argument);
  }

  SUBCASE("balanced halves have identical label counts") {
    auto ds = make(101, 51);  // odd sizes force drops
    auto [h1, h2] = ds.balanced_halves(3);
    CHECK(h1.size() == h2.size());
    std::map<std::string, int> c1, c2;
    for (int i = 0; i < h1.size(); ++i) c1[std::to_string(h1.record(i).labels[0])]++;
    for (int i = 0; i < h2.size(); ++i) c2[std::to_string(h2.record(i).labels[0])]++;
    CHECK(c1 == c2);
  }
}

TEST_CASE("toy dataset") {
  const auto& table = ViewpointTable::standard12();

  SUBCASE("zero mix gives all-zero labels and smooth records") {
    auto ds = synth_toy_dataset(3, 5, {0.0, 0.0, 0.0});
    CHECK(ds.size() == 3);
    for (int i = 0; i < ds.size(); ++i) {
      for (auto b : ds.record(i).labels) CHECK(b == 0);
      CHECK(ds.record(i).signals.minCoeff() >= 0.0f);
      CHECK(ds.record(i).signals.maxCoeff() <= 1.0f);
    }
  }

  SUBCASE("raw projections have rank <= 3") {
    Rng rng(31);
    auto parts = synth_toy_record(rng, {false, false, false}, table, "t");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(parts.raw_projection);
    const auto& sv = svd.singularValues();
    REQUIRE(sv.size() >= 4);
    CHECK(sv(3) / sv(0) < 1e-12);
  }

  SUBCASE("identical viewpoints produce identical signals") {
    ViewpointTable dup({{kPi / 2, kPi / 2}, {kPi / 2, kPi / 2}, {kPi / 3, kPi / 2}});
    Rng rng(33);
    auto parts = synth_toy_record(rng, {false, false, false}, dup, "t");
    CHECK((parts.raw_projection.row(0) - parts.raw_projection.row(1)).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("notch deformation is confined to the window") {
    Rng rng_a(77), rng_b(77);
    auto healthy = synth_toy_record(rng_a, {false, false, false}, table, "h");
    auto notched = synth_toy_record(rng_b, {true, false, false}, table, "n");
    Eigen::MatrixXd diff = (notched.raw_projection - healthy.raw_projection).cwiseAbs();
    const auto [w0, w1] = toy_notch_window();
    double outside = 0.0, inside = 0.0;
    for (int t = 0; t < diff.cols(); ++t) {
      const double col_max = diff.col(t).maxCoeff();
      if (t >= w0 && t < w1)
        inside = std::max(inside, col_max);
      else
        outside = std::max(outside, col_max);
    }
    CHECK(outside < 1e-6);
    CHECK(inside > 1e-2);
  }

  SUBCASE("disease mix controls label frequencies roughly") {
    auto ds = synth_toy_dataset(400, 11, {0.5, 0.0, 1.0});
    int c0 = 0, c1 = 0, c2 = 0;
    for (int i = 0; i < ds.size(); ++i) {
      c0 += ds.record(i).labels[0];
      c1 += ds.record(i).labels[1];
      c2 += ds.record(i).labels[2];
    }
    CHECK(c0 > 120);
    CHECK(c0 < 280);
    CHECK(c1 == 0);
    CHECK(c2 == 400);
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(synth_toy_dataset(0, 1, {0.0, 0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(synth_toy_dataset(1, 1, {0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(synth_toy_dataset(1, 1, {0.0, 0.0, 1.5}), std::invalid_argument);
  }
}

TEST_CASE("dataset io") {
  auto dir = temp_dir("io");
  auto ds = synth_toy_dataset(5, 17, {0.3, 0.3, 0.3});
  ds.save(dir.string());

  SUBCASE("round trip is bitwise exact") {
    auto loaded = Dataset::load(dir.string());
    REQUIRE(loaded.size() == ds.size());
    for (int i = 0; i < ds.size(); ++i) {
      CHECK(loaded.record(i).id == ds.record(i).id);
      CHECK(loaded.record(i).labels == ds.record(i).labels);
      CHECK((loaded.record(i).signals.array() == ds.record(i).signals.array()).all());
    }
  }

  SUBCASE("truncated binary is a corruption error") {
    auto bytes = fs::file_size(dir / "signals.f32le");
    fs::resize_file(dir / "signals.f32le", bytes - 64);
    CHECK_THROWS_AS(Dataset::load(dir.string()), CorruptionError);
  }

  SUBCASE("manifest count mismatch is a corruption error") {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = text.find("\"count\": 5");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 10, "\"count\": 3");
    std::ofstream out(dir / "manifest.json");
    out << text;
    out.close();
    CHECK_THROWS_AS(Dataset::load(dir.string()), CorruptionError);
  }

  SUBCASE("missing directory is a corruption error") {
    CHECK_THROWS_AS(Dataset::load((dir / "nope").string()), CorruptionError);
  }
}
