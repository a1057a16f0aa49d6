#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/net.hpp"

namespace d2d {

enum class Strategy { direct, iterative };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct EpochRecord;

struct TrainConfig {
  Strategy strategy = Strategy::iterative;
  int target_lead = 1;  // direct strategy, in observation steps
  int k_max = 16;       // iterative strategy
  // Empty means the doubling schedule [1, 2, 4, ..., k_max].
  std::vector<int> curriculum_stages;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs_per_stage = 200;
  int patience = 10;
  double grad_clip_norm = 5.0;
  // Per-example step losses above this are truncated during the first epoch
  // of every stage.
  double first_epoch_loss_cap = 50.0;
  // 0 uses every validation window; otherwise an evenly spaced subset.
  std::size_t max_validation_windows = 0;
  std::uint64_t seed = 1;
  // Progress hook invoked after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;

  std::vector<int> stages() const;
  // Empty when valid; otherwise one message per violated rule.
  std::vector<std::string> violations() const;
};

// [1, 2, 4, ..., k_max]; k_max is appended when it is not a power of two.
std::vector<int> doubling_schedule(int k_max);

struct EpochRecord {
  int stage = 0;  // K of the stage (target lead for direct training)
  int epoch = 0;
  double train_loss = 0.0;
  std::size_t n_truncated = 0;
  double validation_score = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct StageRecord {
  int stage = 0;
  int best_epoch = 0;  // 0 means the warm start was never improved upon
  std::vector<double> validation_by_lead;  // leads 1..stage (1 entry for direct)
  double seconds = 0.0;                    // wall clock; not part of equality
};

struct TrainReport {
  Strategy strategy = Strategy::iterative;
  std::vector<EpochRecord> epochs;
  std::vector<StageRecord> stages;
  std::string selected_checkpoint;
  double loss_cap = 0.0;

  // Compares everything except wall-clock timings.
  bool same_results(const TrainReport& other) const;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// Windows over the observed series. Each window holds L consecutive observed
// states as Gaussians (mean = observation, stddev = noise_stddev[j], floored)
// stored as M identical components; outcomes are the next `horizon` observed
// state vectors.
std::vector<TrainingExample> build_training_windows(
    const ObservationSeries& series, const NetConfig& cfg, int horizon);

// Initial window (Gaussian entries) ending at observation index `origin`.
DistributionWindow gaussian_window(const ObservationSeries& series,
                                   std::size_t origin, const NetConfig& cfg);

struct TrainingData {
  Normaliser norm;
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
};

TrainingData prepare_training_data(const Dataset& data, const NetConfig& cfg,
                                   int horizon);

// Keeps a single outcome per example: the one at `lead`.
std::vector<TrainingExample> direct_examples(
    std::span<const TrainingExample> examples, int lead);

TrainResult train_direct(const TrainingData& data, const TrainConfig& cfg,
                         const NetConfig& netcfg);
TrainResult train_iterative(const TrainingData& data, const TrainConfig& cfg,
                            const NetConfig& netcfg);
TrainResult train(const TrainingData& data, const TrainConfig& cfg,
                  const NetConfig& netcfg);

// Adaptive-moment optimiser over a flat parameter vector.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n, double learning_rate, double beta1, double beta2,
                double epsilon);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  Eigen::VectorXd m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Scales grad in place so its Euclidean norm is at most max_norm; returns the
// norm before clipping.
double clip_gradient(Eigen::VectorXd& grad, double max_norm);

// Replaces exactly-zero raw bandwidths by 1e-3.
void reseed_zero_bandwidths(ModelParams& params);

inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_bytes(const ModelParams& params);
ModelParams checkpoint_from_bytes(const std::string& bytes);

}  // namespace d2d
