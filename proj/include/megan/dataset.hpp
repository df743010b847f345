#pragma once

#include "megan/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace megan::data {

// Canonical signal geometry: 12 views, 512 samples per cardiac cycle at 500 Hz.
constexpr int kViews = 12;
constexpr int kLength = 512;
constexpr double kRateHz = 500.0;

/// One cardiac cycle: an n x L signal matrix (views by samples) plus a
/// multi-hot disease label vector. After preprocessing all samples lie in
/// [0, 1]; an all-zero label vector means "no modeled condition".
struct MultiViewRecord {
  Eigen::MatrixXf signals;          // n x L
  std::vector<std::uint8_t> labels; // length k, entries 0/1
  std::string id;
};

struct Viewpoint {
  double theta = 0.0;  // polar angle, radians
  double phi = 0.0;    // azimuthal angle, radians
};

/// Encodes viewpoint angles as (cos theta, cos(phi/2)) rows. Requires
/// theta in [0, pi], phi in [0, 2*pi); values are clamped into (-1, 1] so the
/// encoding stays inside the view discriminator's tanh codomain even at
/// theta == pi. Throws std::invalid_argument on out-of-range angles.
Eigen::MatrixXd encode_viewpoints(const std::vector<Viewpoint>& angles);

/// Per-view angles plus their encoding. Construction canonicalizes phi into
/// [0, 2*pi) (the cos(phi/2) encoding distinguishes phi from phi + 2*pi, so a
/// single canonical representative is required).
class ViewpointTable {
 public:
  explicit ViewpointTable(std::vector<Viewpoint> angles);

  /// The 12 standard viewpoints, starting (pi/2, pi/2).
  static const ViewpointTable& standard12();

  int size() const { return static_cast<int>(angles_.size()); }
  const std::vector<Viewpoint>& angles() const { return angles_; }
  const Eigen::MatrixXd& encoding() const { return encoding_; }    // n x 2
  const Eigen::MatrixXd& directions() const { return directions_; } // n x 3 unit vectors

 private:
  std::vector<Viewpoint> angles_;
  Eigen::MatrixXd encoding_;
  Eigen::MatrixXd directions_;
};

/// Resamples to 500 Hz (linear interpolation), pads to length 512 by
/// repeating the final sample (truncates if longer), denoises (median-root
/// smoothing plus per-view baseline removal), then min-max scales the whole
/// record to [0, 1]. Throws std::runtime_error("degenerate amplitude") if the
/// denoised record has zero range. The pipeline is idempotent: feeding a
/// preprocessed record back through reproduces it bit-exactly.
Eigen::MatrixXf preprocess_signals(const Eigen::MatrixXd& raw, double raw_rate_hz);

inline MultiViewRecord preprocess_record(const Eigen::MatrixXd& raw, double raw_rate_hz,
                                         std::string id, std::vector<std::uint8_t> labels) {
  return MultiViewRecord{preprocess_signals(raw, raw_rate_hz), std::move(labels), std::move(id)};
}

/// In-memory dataset with the on-disk manifest metadata.
class Dataset {
 public:
  Dataset(int n, int length, std::vector<std::string> label_names)
      : n_(n), length_(length), label_names_(std::move(label_names)) {}

  int views() const { return n_; }
  int length() const { return length_; }
  int diseases() const { return static_cast<int>(label_names_.size()); }
  const std::vector<std::string>& label_names() const { return label_names_; }

  int size() const { return static_cast<int>(records_.size()); }
  const MultiViewRecord& record(int i) const { return records_.at(i); }
  const std::vector<MultiViewRecord>& records() const { return records_; }
  void add(MultiViewRecord rec);

  const std::string& split_tag(int i) const { return split_tags_.at(i); }
  void set_split_tag(int i, std::string tag) { split_tags_.at(i) = std::move(tag); }

  /// Directory layout: manifest.json + signals.f32le (little-endian float32,
  /// row-major [record][view][sample]; manifest offsets are in float counts).
  void save(const std::string& dir) const;
  static Dataset load(const std::string& dir);

  /// Deterministic stratified split; per-label-combination proportions are
  /// preserved within one record. Throws on an empty dataset or fraction
  /// outside (0, 1).
  std::pair<Dataset, Dataset> split(double train_fraction, std::uint64_t seed) const;

  /// Splits into two halves with identical per-label-combination counts
  /// (odd leftovers are dropped), as required by the rFID denominator.
  std::pair<Dataset, Dataset> balanced_halves(std::uint64_t seed) const;

 private:
  int n_;
  int length_;
  std::vector<std::string> label_names_;
  std::vector<MultiViewRecord> records_;
  std::vector<std::string> split_tags_;
};

// ---------------------------------------------------------------------------
// Synthetic dipole-projection toy data.
//
// Each record is built from a latent 3-D loop trajectory (a sum of three
// Gaussian bumps with fixed directions, mimicking P/QRS/T timing, plus a
// smooth low-frequency wobble). View p is the inner product of the
// trajectory with the unit direction of (theta_p, phi_p), so the stacked raw
// views always have rank <= 3. All per-record randomness lives in the
// trajectory parameters; views carry no independent noise.
//
// Conditions: label 0 adds a biphasic notch right after the main peak
// (support inside toy_notch_window()); label 1 rotates the loop about the
// vertical axis; label 2 widens the secondary (T) lobe.
// ---------------------------------------------------------------------------

constexpr int kToyDiseases = 3;
constexpr int kToyQrsPeak = 215;  // sample index of the main-peak center

/// Half-open sample window [first, last) containing the entire notch support.
constexpr std::pair<int, int> toy_notch_window() { return {208, 248}; }

/// Intermediate products of one toy record, exposed for verification.
struct ToyParts {
  Eigen::Matrix<double, 3, Eigen::Dynamic> trajectory;  // 3 x L latent loop
  Eigen::MatrixXd raw_projection;                       // n x L, exact linear functionals
  MultiViewRecord record;                               // preprocessed
};

ToyParts synth_toy_record(Rng& rng, const std::array<bool, kToyDiseases>& diseases,
                          const ViewpointTable& table, std::string id);

/// disease_mix holds independent per-condition probabilities in [0, 1].
Dataset synth_toy_dataset(int count, std::uint64_t seed, const std::vector<double>& disease_mix,
                          const ViewpointTable& table = ViewpointTable::standard12());

}  // namespace megan::data
