#pragma once

#include "megan/dataset.hpp"
#include "megan/images.hpp"
#include "megan/inception1d.hpp"
#include "megan/training.hpp"

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace megan::metrics {

// ---------------------------------------------------------------------------
// Feature extractor: the 1D Inception trunk plus a classifier head used only
// during pretraining. Feature extraction runs in eval mode and is
// deterministic.
// ---------------------------------------------------------------------------

struct PretrainReport {
  int epochs = 0;
  int corpus_size = 0;
  int classes = 0;
  double eval_accuracy = 0.0;
};

class FeatureExtractor {
 public:
  static constexpr int kFeatureDim = Inception1D::kFeatureDim;

  /// Randomly initialized extractor (useful for smoke tests).
  FeatureExtractor(int in_channels, int classes, std::uint64_t seed);
  ~FeatureExtractor();
  FeatureExtractor(FeatureExtractor&&) noexcept;

  /// Trains the trunk as a patchified-image classifier. Deterministic in
  /// (corpus, epochs, seed).
  static FeatureExtractor pretrain(const img::ImageCorpus& corpus, int epochs, std::uint64_t seed,
                                   PretrainReport* report = nullptr);

  /// signals: each n x 512 -> column-per-sample feature matrix (2048 x N).
  Eigen::MatrixXf features(const std::vector<Eigen::MatrixXf>& signals) const;
  Eigen::MatrixXf features_of(const data::Dataset& ds) const;

  void save(const std::string& path) const;
  static FeatureExtractor load(const std::string& path);

  int classes() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;     // symmetric, jittered with 1e-6 * I
  Eigen::MatrixXd factor;  // centered samples / sqrt(N-1); cov = factor*factor^T + jitter*I
};

GaussianSummary summarize_features(const Eigen::MatrixXf& features);

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square root
/// trace comes from the eigenvalues of the symmetrized product, clipped at 0.
double fid_from_summaries(const GaussianSummary& a, const GaussianSummary& b);
double fid(const Eigen::MatrixXf& features_a, const Eigen::MatrixXf& features_b);

struct RfidResult {
  double rfid = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
};

/// Eq.-9-style relative FID: FID(gen, {X}_2) / FID({X}_1, {X}_2) where the
/// halves are balanced per label combination and the generator conditions are
/// bootstrapped from the dataset's label distribution.
RfidResult rfid(const train::GeneratorHandle& gen, const data::Dataset& test_set,
                const FeatureExtractor& extractor, std::uint64_t seed);

// ---------------------------------------------------------------------------
// 1-NN two-sample accuracy on flattened raw signals (leave-one-out).
// Distance ties across sets break toward "fake".
// ---------------------------------------------------------------------------
double onnc(const std::vector<Eigen::MatrixXf>& real, const std::vector<Eigen::MatrixXf>& fake);

// ---------------------------------------------------------------------------
// Multi-view consistency: a small per-view conv embedder trained with triplet
// margin loss (margin 1.0) to pull views of one record together; the metric
// is the mean pairwise embedding distance within a record.
// ---------------------------------------------------------------------------

class TripletEmbedder {
 public:
  explicit TripletEmbedder(std::uint64_t seed);
  ~TripletEmbedder();
  TripletEmbedder(TripletEmbedder&&) noexcept;

  void train(const data::Dataset& ds, int steps, std::uint64_t seed);

  /// views: n x L -> 64 x n embedding matrix.
  Eigen::MatrixXf embed(const Eigen::MatrixXf& views) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

double consistency_distance(const std::vector<Eigen::MatrixXf>& records, const TripletEmbedder& embedder);

// ---------------------------------------------------------------------------
// Perturbation sensitivity (three cumulative tracks; rfid after each step).
// ---------------------------------------------------------------------------

struct PerturbationCurves {
  std::vector<double> noise;  // steps + 1 values, index 0 = unperturbed
  std::vector<double> erase;
  std::vector<double> blur;
};

struct PerturbOptions {
  int steps = 20;
  int max_samples_per_half = 256;
  std::uint64_t seed = 1;
};

PerturbationCurves perturbation_suite(const data::Dataset& test_set, const FeatureExtractor& extractor,
                                      const PerturbOptions& opt);

// ---------------------------------------------------------------------------
// Augmentation benefit: a fixed small conv classifier trained on the original
// vs. generator-augmented training set; per-disease PR-AUC on the test set.
// ---------------------------------------------------------------------------

struct AugmentationResult {
  std::map<std::string, double> pr_auc_baseline;
  std::map<std::string, double> pr_auc_augmented;
  std::vector<std::string> skipped;  // diseases absent from the training set
};

AugmentationResult augmentation_eval(const data::Dataset& train_set, const data::Dataset& test_set,
                                     const train::GeneratorHandle& gen, std::uint64_t seed);

/// Area under the precision-recall curve (step-wise average precision).
double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Combined evaluation report
// ---------------------------------------------------------------------------

struct MetricReport {
  double rfid = 0.0;
  double fid_numerator = 0.0;
  double fid_denominator = 0.0;
  double onnc_accuracy = 0.0;
  double consistency_distance = 0.0;
  double consistency_distance_real = 0.0;
  std::optional<std::map<std::string, double>> pr_auc;  // per disease, augmentation run only

  std::string to_json() const;
};

struct EvalOptions {
  std::uint64_t seed = 1;
  int onnc_samples = 500;
  int embedder_steps = 2000;
  int consistency_samples = 256;
  bool with_augmentation = false;
};

MetricReport evaluate_generator(const train::GeneratorHandle& gen, const data::Dataset& eval_set,
                                const FeatureExtractor& extractor, const EvalOptions& opt);

}  // namespace megan::metrics
