#pragma once

#include "megan/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace megan::train {

struct TrainConfig {
  int batch = 16;
  int iterations = 5000;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lsgan_a = 1.0;  // real target
  double lsgan_b = 0.0;  // fake target
  std::uint64_t seed = 1;
  bool no_disease = false;       // constant zero condition, auxiliary classifier dropped
  int checkpoint_interval = 1000;
  bool clip_grads = true;        // global-norm-10 NaN guard; disable for fidelity runs
  double clip_norm = 10.0;

  void validate() const;
  std::string json() const;
  static TrainConfig from_json(const std::string& text);
};

struct LossReport {
  long step = 0;
  double d_loss = 0.0, g_adv = 0.0, g_aux = 0.0, v_loss = 0.0, g_view = 0.0;
  bool finite() const;
};

/// One resumable three-player training session over a fixed dataset.
/// The update order per step is: major discriminator, view discriminator
/// (fresh shared P and crop offset), then the generator on the summed
/// adversarial + view objectives.
class Trainer {
 public:
  Trainer(const data::Dataset& train_set, const TrainConfig& cfg);
  ~Trainer();
  Trainer(Trainer&&) noexcept;

  LossReport step();
  long step_index() const;

  void save_state(const std::string& path) const;
  void load_state(const std::string& path);
  void save_generator(const std::string& path) const;

  /// Copies of current parameter tensors, for freeze-contract tests.
  /// net is one of 'g', 'd', 'v'.
  std::vector<std::pair<std::string, Eigen::MatrixXf>> parameter_snapshot(char net) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct TrainOutcome {
  std::string generator_checkpoint;
  std::string state_checkpoint;
  std::vector<LossReport> losses;
};

/// Runs the full loop, writing loss.csv plus interval and final checkpoints
/// under out_dir. resume_from (optional) must point at a train_state
/// checkpoint written with a matching config.
TrainOutcome train(const data::Dataset& train_set, const TrainConfig& cfg, const std::string& out_dir,
                   const std::string& resume_from = "");

/// Inference-side generator. Accepts both "generator" and "train_state"
/// checkpoints; runs in eval mode.
class GeneratorHandle {
 public:
  explicit GeneratorHandle(const std::string& checkpoint_path);
  ~GeneratorHandle();
  GeneratorHandle(GeneratorHandle&&) noexcept;

  int views() const;
  int length() const;
  int diseases() const;

  /// Samples `count` records. cond == nullptr selects the all-zero condition;
  /// otherwise cond must hold `diseases()` 0/1 entries shared by all samples.
  /// Deterministic in (checkpoint, cond, seed).
  std::vector<Eigen::MatrixXf> generate(int count, const std::uint8_t* cond, std::uint64_t seed) const;

  /// Per-sample conditions (count x diseases()).
  std::vector<Eigen::MatrixXf> generate_mixed(const std::vector<std::vector<std::uint8_t>>& conds,
                                              std::uint64_t seed) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace megan::train
