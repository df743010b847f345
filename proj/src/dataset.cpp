#include "megan/dataset.hpp"

#include "megan/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace megan::data {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

double canonical_phi(double phi) {
  double p = std::fmod(phi, kTwoPi);
  if (p < 0.0) p += kTwoPi;
  return p;
}

}  // namespace

Eigen::MatrixXd encode_viewpoints(const std::vector<Viewpoint>& angles) {
  Eigen::MatrixXd enc(static_cast<int>(angles.size()), 2);
  // cos values land in [-1, 1]; -1 (reachable only at theta == pi) is clamped
  // up by one ulp to keep every entry inside (-1, 1].
  const double floor = std::nextafter(-1.0, 0.0);
  for (size_t p = 0; p < angles.size(); ++p) {
    const auto& a = angles[p];
    if (!(a.theta >= 0.0 && a.theta <= kPi))
      throw std::invalid_argument("viewpoint theta out of [0, pi]");
    if (!(a.phi >= 0.0 && a.phi < kTwoPi))
      throw std::invalid_argument("viewpoint phi out of [0, 2*pi)");
    enc(static_cast<int>(p), 0) = std::max(std::cos(a.theta), floor);
    enc(static_cast<int>(p), 1) = std::max(std::cos(a.phi / 2.0), floor);
  }
  return enc;
}

ViewpointTable::ViewpointTable(std::vector<Viewpoint> angles) : angles_(std::move(angles)) {
  for (auto& a : angles_) a.phi = canonical_phi(a.phi);
  encoding_ = encode_viewpoints(angles_);
  directions_.resize(size(), 3);
  for (int p = 0; p < size(); ++p) {
    const auto& a = angles_[p];
    directions_(p, 0) = std::sin(a.theta) * std::cos(a.phi);
    directions_(p, 1) = std::sin(a.theta) * std::sin(a.phi);
    directions_(p, 2) = std::cos(a.theta);
  }
}

const ViewpointTable& ViewpointTable::standard12() {
  static const ViewpointTable table{{
      {kPi / 2.0, kPi / 2.0},
      {5.0 * kPi / 6.0, kPi / 2.0},
      {5.0 * kPi / 6.0, -kPi / 2.0},
      {kPi / 3.0, -kPi / 2.0},
      {kPi / 3.0, kPi / 2.0},
      {kPi, kPi / 2.0},
      {kPi / 2.0, -kPi / 18.0},
      {kPi / 2.0, kPi / 18.0},
      {19.0 * kPi / 36.0, kPi / 12.0},
      {11.0 * kPi / 20.0, kPi / 6.0},
      {8.0 * kPi / 15.0, kPi / 3.0},
      {8.0 * kPi / 15.0, kPi / 2.0},
  }};
  return table;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

namespace {

double median5(double a, double b, double c, double d, double e) {
  std::array<double, 5> w{a, b, c, d, e};
  std::nth_element(w.begin(), w.begin() + 2, w.end());
  return w[2];
}

// One pass of a 5-sample moving median with edge replication.
void median5_pass(const Eigen::VectorXd& in, Eigen::VectorXd& out) {
  const int n = static_cast<int>(in.size());
  auto at = [&](int i) { return in(std::clamp(i, 0, n - 1)); };
  for (int i = 0; i < n; ++i) out(i) = median5(at(i - 2), at(i - 1), at(i), at(i + 1), at(i + 2));
}

// Iterates the median filter to its fixed point ("root" signal). Roots are
// preserved by the affine scaling steps that follow, which is what makes the
// whole preprocessing pipeline idempotent.
void median5_to_root(Eigen::VectorXd& x) {
  Eigen::VectorXd next(x.size());
  for (int iter = 0; iter < 64; ++iter) {
    median5_pass(x, next);
    if ((next.array() == x.array()).all()) return;
    x.swap(next);
  }
}

Eigen::MatrixXd resample_to_rate(const Eigen::MatrixXd& raw, double raw_rate_hz) {
  if (raw_rate_hz == kRateHz) return raw;
  const auto l_in = static_cast<int>(raw.cols());
  const int l_out = std::max<int>(2, static_cast<int>(std::llround(l_in * kRateHz / raw_rate_hz)));
  Eigen::MatrixXd out(raw.rows(), l_out);
  const double step = raw_rate_hz / kRateHz;
  for (int j = 0; j < l_out; ++j) {
    const double src = std::min(j * step, static_cast<double>(l_in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, l_in - 1);
    const double w = src - i0;
    out.col(j) = (1.0 - w) * raw.col(i0) + w * raw.col(i1);
  }
  return out;
}

}  // namespace

Eigen::MatrixXf preprocess_signals(const Eigen::MatrixXd& raw, double raw_rate_hz) {
  if (raw.rows() < 1 || raw.cols() < 2) throw std::invalid_argument("preprocess: need at least 2 samples");
  if (!(raw_rate_hz > 0.0)) throw std::invalid_argument("preprocess: rate must be positive");

  Eigen::MatrixXd x = resample_to_rate(raw, raw_rate_hz);

  // Pad by repeating the final sample (avoids a step at the pad boundary).
  if (x.cols() < kLength) {
    const auto old = static_cast<int>(x.cols());
    x.conservativeResize(Eigen::NoChange, kLength);
    for (int j = old; j < kLength; ++j) x.col(j) = x.col(old - 1);
  } else if (x.cols() > kLength) {
    x = x.leftCols(kLength).eval();
  }

  // Denoise: median-root smoothing, then per-view baseline (DC) removal.
  for (int v = 0; v < x.rows(); ++v) {
    Eigen::VectorXd row = x.row(v).transpose();
    median5_to_root(row);
    x.row(v) = row.transpose();
  }
  for (int v = 0; v < x.rows(); ++v) x.row(v).array() -= x.row(v).mean();

  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  if (hi == lo) throw std::runtime_error("degenerate amplitude");
  return ((x.array() - lo) / (hi - lo)).cast<float>();
}

// ---------------------------------------------------------------------------
// Dataset container + on-disk format
// ---------------------------------------------------------------------------

void Dataset::add(MultiViewRecord rec) {
  if (rec.signals.rows() != n_ || rec.signals.cols() != length_)
    throw std::invalid_argument("Dataset::add: signal shape mismatch");
  if (static_cast<int>(rec.labels.size()) != diseases())
    throw std::invalid_argument("Dataset::add: label length mismatch");
  records_.push_back(std::move(rec));
  split_tags_.emplace_back("all");
}

void Dataset::save(const std::string& dir) const {
  fs::create_directories(dir);
  const std::uint64_t per_record = static_cast<std::uint64_t>(n_) * length_;

  json manifest;
  manifest["version"] = 1;
  manifest["n"] = n_;
  manifest["L"] = length_;
  manifest["k"] = diseases();
  manifest["count"] = size();
  manifest["label_names"] = label_names_;
  json recs = json::array();
  for (int i = 0; i < size(); ++i) {
    json r;
    r["id"] = records_[i].id;
    r["labels"] = records_[i].labels;
    r["offset"] = per_record * static_cast<std::uint64_t>(i);  // float counts
    r["split"] = split_tags_[i];
    recs.push_back(std::move(r));
  }
  manifest["records"] = std::move(recs);

  {
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("cannot write manifest.json under " + dir);
    mf << manifest.dump(2) << "\n";
  }
  std::ofstream sf(fs::path(dir) / "signals.f32le", std::ios::binary);
  if (!sf) throw std::runtime_error("cannot write signals.f32le under " + dir);
  std::vector<float> row_major(per_record);
  for (const auto& rec : records_) {
    // row-major [view][sample]
    for (int v = 0; v < n_; ++v)
      for (int t = 0; t < length_; ++t) row_major[static_cast<size_t>(v) * length_ + t] = rec.signals(v, t);
    sf.write(reinterpret_cast<const char*>(row_major.data()),
             static_cast<std::streamsize>(row_major.size() * sizeof(float)));
  }
  if (!sf) throw std::runtime_error("short write to signals.f32le");
}

Dataset Dataset::load(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw CorruptionError("missing manifest.json under " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("unparseable manifest.json: ") + e.what());
  }

  const int version = manifest.at("version").get<int>();
  if (version != 1) throw CorruptionError("unsupported manifest version " + std::to_string(version));
  const int n = manifest.at("n").get<int>();
  const int length = manifest.at("L").get<int>();
  const int k = manifest.at("k").get<int>();
  auto label_names = manifest.at("label_names").get<std::vector<std::string>>();
  if (static_cast<int>(label_names.size()) != k) throw CorruptionError("label_names length != k");
  const auto count = manifest.at("count").get<std::uint64_t>();
  const auto& recs = manifest.at("records");
  if (recs.size() != count)
    throw CorruptionError("manifest count " + std::to_string(count) + " but " +
                          std::to_string(recs.size()) + " records present");

  std::ifstream sf(fs::path(dir) / "signals.f32le", std::ios::binary | std::ios::ate);
  if (!sf) throw CorruptionError("missing signals.f32le under " + dir);
  const auto file_bytes = static_cast<std::uint64_t>(sf.tellg());
  sf.seekg(0);

  const std::uint64_t per_record = static_cast<std::uint64_t>(n) * length;
  Dataset ds(n, length, label_names);
  std::set<std::string> seen_ids;
  std::uint64_t prev_offset = 0;
  bool first = true;
  std::vector<float> buf(per_record);
  for (const auto& r : recs) {
    MultiViewRecord rec;
    rec.id = r.at("id").get<std::string>();
    if (!seen_ids.insert(rec.id).second) throw CorruptionError("duplicate record id " + rec.id);
    rec.labels = r.at("labels").get<std::vector<std::uint8_t>>();
    if (static_cast<int>(rec.labels.size()) != k) throw CorruptionError("record label length != k");
    for (auto b : rec.labels)
      if (b > 1) throw CorruptionError("labels must be 0/1");
    const auto offset = r.at("offset").get<std::uint64_t>();
    if (!first && offset <= prev_offset) throw CorruptionError("offsets not strictly increasing");
    first = false;
    prev_offset = offset;
    if ((offset + per_record) * sizeof(float) > file_bytes)
      throw CorruptionError("signals.f32le truncated: record " + rec.id + " out of range");

    sf.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
    sf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(per_record * sizeof(float)));
    if (!sf) throw CorruptionError("read failure in signals.f32le");
    rec.signals.resize(n, length);
    for (int v = 0; v < n; ++v)
      for (int t = 0; t < length; ++t) rec.signals(v, t) = buf[static_cast<size_t>(v) * length + t];

    const std::string split = r.value("split", "all");
    ds.add(std::move(rec));
    ds.set_split_tag(ds.size() - 1, split);
  }
  return ds;
}

namespace {

std::map<std::string, std::vector<int>> group_by_labels(const Dataset& ds) {
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < ds.size(); ++i) {
    std::string key;
    for (auto b : ds.record(i).labels) key.push_back(b ? '1' : '0');
    groups[key].push_back(i);
  }
  return groups;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

Dataset subset(const Dataset& ds, std::vector<int> indices, const std::string& tag) {
  std::sort(indices.begin(), indices.end());
  Dataset out(ds.views(), ds.length(), ds.label_names());
  for (int i : indices) {
    out.add(ds.record(i));
    out.set_split_tag(out.size() - 1, tag);
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> Dataset::split(double train_fraction, std::uint64_t seed) const {
  if (size() == 0) throw std::invalid_argument("split: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split: fraction must be in (0, 1)");

  Rng rng(seed);
  std::vector<int> train_idx, test_idx;
  for (auto& [key, idx] : group_by_labels(*this)) {
    auto shuffled = idx;
    shuffle_indices(shuffled, rng);
    const auto n_train = static_cast<size_t>(std::llround(train_fraction * shuffled.size()));
    for (size_t i = 0; i < shuffled.size(); ++i)
      (i < n_train ? train_idx : test_idx).push_back(shuffled[i]);
  }
  return {subset(*this, train_idx, "train"), subset(*this, test_idx, "test")};
}

std::pair<Dataset, Dataset> Dataset::balanced_halves(std::uint64_t seed) const {
  if (size() < 2) throw std::invalid_argument("balanced_halves: need at least 2 records");
  Rng rng(seed);
  std::vector<int> a_idx, b_idx;
  for (auto& [key, idx] : group_by_labels(*this)) {
    auto shuffled = idx;
    shuffle_indices(shuffled, rng);
    const size_t pairs = shuffled.size() / 2;  // odd leftover dropped
    for (size_t i = 0; i < pairs; ++i) {
      a_idx.push_back(shuffled[2 * i]);
      b_idx.push_back(shuffled[2 * i + 1]);
    }
  }
  if (a_idx.empty()) throw std::invalid_argument("balanced_halves: no label group has 2+ records");
  return {subset(*this, a_idx, "half1"), subset(*this, b_idx, "half2")};
}

// ---------------------------------------------------------------------------
// Toy dipole data
// ---------------------------------------------------------------------------

namespace {

struct Wave {
  double amp, center_u, sigma_u;
  Eigen::Vector3d dir;
};

Eigen::Vector3d unit(double x, double y, double z) { return Eigen::Vector3d(x, y, z).normalized(); }

double clipped_normal(Rng& rng, double lim = 2.5) { return std::clamp(rng.normal(), -lim, lim); }

// Raised-cosine bump, exactly zero outside [center-half, center+half].
double hann_bump(int t, int center, int half) {
  const int d = t - center;
  if (d <= -half || d >= half) return 0.0;
  const double c = std::cos(kPi * d / (2.0 * half));
  return c * c;
}

}  // namespace

ToyParts synth_toy_record(Rng& rng, const std::array<bool, kToyDiseases>& diseases,
                          const ViewpointTable& table, std::string id) {
  const int L = kLength;

  // Base P/QRS/T waves. The main-peak timing is fixed so condition
  // manifestations stay in a known window; everything else jitters.
  Wave waves[3] = {
      {0.22, 0.18, 0.030, unit(0.25, 0.85, 0.47)},
      {1.00, 0.42, 0.018, unit(0.10, 0.97, 0.22)},
      {0.45, 0.72, 0.055, unit(0.55, 0.75, 0.37)},
  };
  waves[0].amp *= 1.0 + 0.12 * clipped_normal(rng);
  waves[1].amp *= 1.0 + 0.10 * clipped_normal(rng);
  waves[2].amp *= 1.0 + 0.12 * clipped_normal(rng);
  waves[0].center_u += 0.012 * clipped_normal(rng);
  waves[2].center_u += 0.012 * clipped_normal(rng);
  waves[0].sigma_u *= 1.0 + 0.10 * clipped_normal(rng);
  waves[1].sigma_u *= 1.0 + 0.08 * clipped_normal(rng);
  waves[2].sigma_u *= 1.0 + 0.10 * clipped_normal(rng);
  for (auto& w : waves)
    w.dir = (w.dir + 0.05 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal())).normalized();

  if (diseases[2]) {  // widened secondary lobe
    waves[2].sigma_u *= 1.9;
    waves[2].amp *= 0.8;
  }

  // Smooth low-frequency wobble per latent axis (keeps rank at 3).
  double wob_amp[3][2], wob_freq[3][2], wob_phase[3][2];
  for (int a = 0; a < 3; ++a)
    for (int j = 0; j < 2; ++j) {
      wob_amp[a][j] = rng.uniform(0.004, 0.02);
      wob_freq[a][j] = static_cast<double>(rng.below(3) + 1);
      wob_phase[a][j] = rng.uniform(0.0, kTwoPi);
    }

  ToyParts parts;
  parts.trajectory.resize(3, L);
  for (int t = 0; t < L; ++t) {
    const double u = static_cast<double>(t) / (L - 1);
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    for (const auto& w : waves) {
      const double g = w.amp * std::exp(-0.5 * std::pow((u - w.center_u) / w.sigma_u, 2.0));
      r += g * w.dir;
    }
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < 2; ++j) r(a) += wob_amp[a][j] * std::sin(kTwoPi * wob_freq[a][j] * u + wob_phase[a][j]);
    parts.trajectory.col(t) = r;
  }

  if (diseases[0]) {
    // Biphasic notch on the main peak's trailing edge (rsR'-like). The two
    // half-width-9 bumps cancel in sum, so the record mean is untouched and
    // the deformation support stays inside toy_notch_window().
    const double a = 0.32 * waves[1].amp;
    for (int t = toy_notch_window().first; t < toy_notch_window().second; ++t) {
      const double d = a * (hann_bump(t, 228, 9) - hann_bump(t, 238, 9));
      if (d != 0.0) parts.trajectory.col(t) += d * waves[1].dir;
    }
  }

  if (diseases[1]) {  // loop rotation about the vertical axis (axis deviation)
    const double ang = 0.45;
    Eigen::Matrix3d rot;
    rot << std::cos(ang), -std::sin(ang), 0.0, std::sin(ang), std::cos(ang), 0.0, 0.0, 0.0, 1.0;
    parts.trajectory = (rot * parts.trajectory).eval();
  }

  parts.raw_projection = table.directions() * parts.trajectory;  // n x L

  std::vector<std::uint8_t> labels(kToyDiseases);
  for (int j = 0; j < kToyDiseases; ++j) labels[j] = diseases[j] ? 1 : 0;
  parts.record = preprocess_record(parts.raw_projection, kRateHz, std::move(id), std::move(labels));
  return parts;
}

Dataset synth_toy_dataset(int count, std::uint64_t seed, const std::vector<double>& disease_mix,
                          const ViewpointTable& table) {
  if (count < 1) throw std::invalid_argument("synth_toy_dataset: count must be >= 1");
  if (disease_mix.size() != kToyDiseases)
    throw std::invalid_argument("synth_toy_dataset: disease_mix must have 3 entries");
  for (double p : disease_mix)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synth_toy_dataset: probabilities must be in [0,1]");

  Dataset ds(table.size(), kLength, {"notch", "axis_deviation", "wide_t"});
  Rng master(seed);
  for (int r = 0; r < count; ++r) {
    Rng rec_rng = master.child(static_cast<std::uint64_t>(r));
    std::array<bool, kToyDiseases> diseases{};
    for (int j = 0; j < kToyDiseases; ++j) diseases[j] = rec_rng.uniform() < disease_mix[j];
    char id[32];
    std::snprintf(id, sizeof(id), "toy-%06d", r);
    ds.add(synth_toy_record(rec_rng, diseases, table, id).record);
  }
  return ds;
}

}  // namespace megan::data
