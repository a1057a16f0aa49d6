#include "d2d/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "d2d/error.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {

std::vector<TrainingExample> validation_subset(
    std::span<const TrainingExample> all, std::size_t max_windows) {
  if (max_windows == 0 || max_windows >= all.size()) {
    return {all.begin(), all.end()};
  }
  std::vector<TrainingExample> out;
  out.reserve(max_windows);
  for (std::size_t i = 0; i < max_windows; ++i) {
    out.push_back(all[i * all.size() / max_windows]);
  }
  return out;
}

// Mean over the validation windows of the variable-summed score at each lead
// 1..steps.
std::vector<double> validation_by_lead(const ModelParams& params,
                                       std::span<const TrainingExample> val,
                                       int steps) {
  LossOptions opts;
  opts.compute_gradient = false;
  return loss_and_gradient(params, val, steps, opts).per_lead;
}

struct StageOutcome {
  ModelParams best;
  StageRecord record;
};

// Optimises the K-step objective on `examples`, early-stopping on the
// validation score at lead K.
StageOutcome run_stage(const ModelParams& start,
                       std::span<const TrainingExample> examples,
                       std::span<const TrainingExample> val, int steps,
                       int stage_index, const TrainConfig& cfg,
                       std::vector<EpochRecord>& epochs) {
  const auto clock_start = std::chrono::steady_clock::now();
  ModelParams params = start;
  AdamOptimizer adam(params.size(), cfg.learning_rate, cfg.beta1, cfg.beta2,
                     cfg.epsilon);
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stage_index)));

  StageOutcome out{params, {}};
  out.record.stage = steps;
  double best_val = validation_by_lead(params, val, steps).back();
  if (!std::isfinite(best_val)) best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainingExample> batch;
  for (int epoch = 1; epoch <= cfg.max_epochs_per_stage; ++epoch) {
    // Fisher-Yates with an explicit generator for a portable order.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          std::uniform_int_distribution<std::uint64_t>(0, i - 1)(rng));
      std::swap(order[i - 1], order[j]);
    }
    LossOptions opts;
    if (epoch == 1) opts.step_loss_cap = cfg.first_epoch_loss_cap;

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::size_t truncated = 0;
    std::size_t failed = 0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(examples[order[i]]);
      ++n_batches;
      LossResult res;
      try {
        res = loss_and_gradient(params, batch, steps, opts);
      } catch (const NumericalFailureError&) {
        ++failed;
        continue;
      }
      if (!std::isfinite(res.loss) || !res.grad.allFinite()) {
        ++failed;
        continue;
      }
      clip_gradient(res.grad, cfg.grad_clip_norm);
      adam.step(params.values, res.grad);
      reseed_zero_bandwidths(params);
      loss_sum += res.loss * static_cast<double>(batch.size());
      loss_count += batch.size();
      truncated += res.n_truncated;
    }
    if (failed == n_batches) {
      throw TrainingFailureError("non-finite loss for a full epoch at stage K=" +
                                 std::to_string(steps));
    }

    double val_score = std::numeric_limits<double>::infinity();
    try {
      val_score = validation_by_lead(params, val, steps).back();
    } catch (const NumericalFailureError&) {
    }
    epochs.push_back({steps, epoch, loss_sum / static_cast<double>(loss_count),
                      truncated, val_score});
    if (cfg.on_epoch) cfg.on_epoch(epochs.back());
    if (val_score < best_val) {
      best_val = val_score;
      out.best = params;
      out.record.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  out.record.validation_by_lead = validation_by_lead(out.best, val, steps);
  out.record.seconds = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - clock_start)
                           .count();
  return out;
}

void check_config(const TrainConfig& cfg) {
  const auto v = cfg.violations();
  if (!v.empty()) throw DomainError("training", v.front());
}

}  // namespace

const char* to_string(Strategy s) {
  return s == Strategy::direct ? "direct" : "iterative";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "direct") return Strategy::direct;
  if (s == "iterative") return Strategy::iterative;
  throw DomainError("training", "unknown strategy '" + s + "'");
}

std::vector<int> doubling_schedule(int k_max) {
  if (k_max < 1) throw DomainError("training", "K_max must be >= 1");
  std::vector<int> out;
  for (int k = 1; k < k_max; k *= 2) out.push_back(k);
  out.push_back(k_max);
  return out;
}

std::vector<int> TrainConfig::stages() const {
  return curriculum_stages.empty() ? doubling_schedule(k_max) : curriculum_stages;
}

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (target_lead < 1) out.push_back("train.target_lead: must be >= 1");
  if (k_max < 1) out.push_back("train.k_max: must be >= 1");
  if (!curriculum_stages.empty()) {
    if (curriculum_stages.front() != 1) {
      out.push_back("train.curriculum_stages: stages must start at 1");
    }
    for (std::size_t i = 1; i < curriculum_stages.size(); ++i) {
      if (curriculum_stages[i] <= curriculum_stages[i - 1]) {
        out.push_back("train.curriculum_stages: stages not increasing");
        break;
      }
    }
    if (curriculum_stages.back() != k_max) {
      out.push_back("train.curriculum_stages: last stage must equal k_max");
    }
  }
  if (batch_size < 1) out.push_back("train.batch_size: must be >= 1");
  if (!(learning_rate >= 0.0)) out.push_back("train.learning_rate: must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) out.push_back("train.beta1: must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) out.push_back("train.beta2: must lie in (0, 1)");
  if (!(epsilon > 0.0)) out.push_back("train.epsilon: must be > 0");
  if (max_epochs_per_stage < 1) out.push_back("train.max_epochs_per_stage: must be >= 1");
  if (patience < 1) out.push_back("train.patience: must be >= 1");
  if (!(grad_clip_norm > 0.0)) out.push_back("train.grad_clip_norm: must be > 0");
  if (!(first_epoch_loss_cap > 0.0)) out.push_back("train.first_epoch_loss_cap: must be > 0");
  return out;
}

bool TrainReport::same_results(const TrainReport& other) const {
  if (strategy != other.strategy || epochs != other.epochs ||
      selected_checkpoint != other.selected_checkpoint || loss_cap != other.loss_cap ||
      stages.size() != other.stages.size()) {
    return false;
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].stage != other.stages[i].stage ||
        stages[i].best_epoch != other.stages[i].best_epoch ||
        stages[i].validation_by_lead != other.stages[i].validation_by_lead) {
      return false;
    }
  }
  return true;
}

DistributionWindow gaussian_window(const ObservationSeries& series,
                                   std::size_t origin, const NetConfig& cfg) {
  const auto L = static_cast<std::size_t>(cfg.window_len);
  if (origin + 1 < L || origin >= series.size()) {
    throw DomainError("training", "window origin out of range");
  }
  DistributionWindow w;
  w.reserve(L);
  for (std::size_t t = origin + 1 - L; t <= origin; ++t) {
    MarginalSet set;
    set.reserve(kStateDim);
    for (std::size_t j = 0; j < kStateDim; ++j) {
      set.push_back(GaussianMixture::gaussian(series.observations[t][j],
                                              series.noise_stddev[j],
                                              cfg.n_components));
    }
    w.push_back(std::move(set));
  }
  return w;
}

std::vector<TrainingExample> build_training_windows(
    const ObservationSeries& series, const NetConfig& cfg, int horizon) {
  if (horizon < 1) throw DomainError("training", "horizon must be >= 1");
  if (cfg.d != static_cast<int>(kStateDim)) {
    throw DomainError("training", "observation series are three-dimensional");
  }
  const auto L = static_cast<std::size_t>(cfg.window_len);
  const auto K = static_cast<std::size_t>(horizon);
  if (series.size() < L + K) {
    throw DomainError("training", "series too short for window_len + horizon");
  }
  const std::size_t n = series.size() - L - K + 1;
  std::vector<TrainingExample> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    TrainingExample ex;
    ex.window = gaussian_window(series, s + L - 1, cfg);
    ex.outcomes.assign(series.observations.begin() + static_cast<std::ptrdiff_t>(s + L),
                       series.observations.begin() + static_cast<std::ptrdiff_t>(s + L + K));
    out.push_back(std::move(ex));
  }
  return out;
}

TrainingData prepare_training_data(const Dataset& data, const NetConfig& cfg,
                                   int horizon) {
  TrainingData out;
  const ObservationSeries train = data.train();
  out.norm = Normaliser::from_observations(train.observations, cfg.n_centres);
  out.train = build_training_windows(train, cfg, horizon);
  out.validation = build_training_windows(data.validation(), cfg, horizon);
  return out;
}

std::vector<TrainingExample> direct_examples(
    std::span<const TrainingExample> examples, int lead) {
  if (lead < 1) throw DomainError("training", "lead must be >= 1");
  std::vector<TrainingExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.outcomes.size()) < lead) {
      throw DomainError("training", "example has no outcome at the requested lead");
    }
    out.push_back({ex.window, {ex.outcomes[static_cast<std::size_t>(lead - 1)]}});
  }
  return out;
}

TrainResult train_direct(const TrainingData& data, const TrainConfig& cfg,
                         const NetConfig& netcfg) {
  check_config(cfg);
  const auto train_set = direct_examples(data.train, cfg.target_lead);
  const auto val_set = validation_subset(
      direct_examples(data.validation, cfg.target_lead), cfg.max_validation_windows);
  TrainResult out{init_params(netcfg, data.norm), {}};
  out.report.strategy = Strategy::direct;
  out.report.loss_cap = cfg.first_epoch_loss_cap;
  auto stage = run_stage(out.params, train_set, val_set, 1, 0, cfg, out.report.epochs);
  // Direct training has a single "stage" whose epochs are labelled with K=1.
  stage.record.stage = cfg.target_lead;
  out.params = std::move(stage.best);
  out.report.stages.push_back(std::move(stage.record));
  out.report.selected_checkpoint =
      "direct-lead" + std::to_string(cfg.target_lead) + "-epoch" +
      std::to_string(out.report.stages.back().best_epoch);
  return out;
}

TrainResult train_iterative(const TrainingData& data, const TrainConfig& cfg,
                            const NetConfig& netcfg) {
  check_config(cfg);
  const std::vector<int> stages = cfg.stages();
  const auto val_set = validation_subset(data.validation, cfg.max_validation_windows);
  TrainResult out{init_params(netcfg, data.norm), {}};
  out.report.strategy = Strategy::iterative;
  out.report.loss_cap = cfg.first_epoch_loss_cap;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    auto stage = run_stage(out.params, data.train, val_set, stages[s],
                           static_cast<int>(s), cfg, out.report.epochs);
    out.params = std::move(stage.best);
    out.report.stages.push_back(std::move(stage.record));
  }
  out.report.selected_checkpoint =
      "iterative-K" + std::to_string(stages.back()) + "-epoch" +
      std::to_string(out.report.stages.back().best_epoch);
  return out;
}

TrainResult train(const TrainingData& data, const TrainConfig& cfg,
                  const NetConfig& netcfg) {
  return cfg.strategy == Strategy::direct ? train_direct(data, cfg, netcfg)
                                          : train_iterative(data, cfg, netcfg);
}

AdamOptimizer::AdamOptimizer(std::size_t n, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
      lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon) {}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double clip_gradient(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
  return norm;
}

void reseed_zero_bandwidths(ModelParams& params) {
  const ParamLayout lay = params.layout();
  for (int j = 0; j < params.config.d; ++j) {
    double& raw = params.values[static_cast<Eigen::Index>(lay.raw_bandwidth + j)];
    if (raw == 0.0) raw = 1e-3;
  }
}

}  // namespace d2d
