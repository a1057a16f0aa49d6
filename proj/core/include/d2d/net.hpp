#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/gmm.hpp"

namespace d2d {

struct NetConfig {
  int d = 3;
  int window_len = 5;
  int n_centres = 50;
  int n_components = 5;
  int hidden_size = 64;
  std::uint64_t seed = 1;

  int input_size() const { return d * n_centres; }
  // Throws DomainError unless every field is positive.
  void validate() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Frozen data-derived constants: per-variable affine normalisation and the
// embedding centres (in normalised units).
struct Normaliser {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<std::vector<double>> centres;

  // mean 0, scale 1, centres uniform on [-2, 2].
  static Normaliser identity(int d, int n_centres);
  // Empirical mean/stddev of the observations; centres uniform between the
  // normalised minimum and maximum of each variable.
  static Normaliser from_observations(std::span<const StateVec> obs,
                                      int n_centres);

  friend bool operator==(const Normaliser&, const Normaliser&) = default;
};

// Offsets of every trainable tensor inside ModelParams::values. Matrices are
// stored column-major.
struct ParamLayout {
  explicit ParamLayout(const NetConfig& cfg);

  std::size_t w_input = 0;   // 4H x (d * n_c)
  std::size_t w_hidden = 0;  // 4H x H
  std::size_t b_gates = 0;   // 4H, gate order: input, forget, cell, output
  std::vector<std::size_t> head_w;  // per variable: 3M x H
  std::vector<std::size_t> head_b;  // per variable: 3M; rows [raw weight | mean | raw log-stddev]
  std::size_t raw_bandwidth = 0;    // d; effective bandwidth is |raw|
  std::size_t total = 0;
};

struct ModelParams {
  NetConfig config;
  Normaliser norm;
  Eigen::VectorXd values;

  ParamLayout layout() const { return ParamLayout(config); }
  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  double bandwidth(int j) const;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config == b.config && a.norm == b.norm &&
           a.values.size() == b.values.size() && a.values == b.values;
  }
};

// Same layout as ModelParams::values.
using Gradient = Eigen::VectorXd;

// 4 (H (d n_c) + H^2 + H) + d (3M H + 3M) + d.
std::size_t parameter_count(const NetConfig& cfg);

ModelParams init_params(const NetConfig& cfg);
ModelParams init_params(const NetConfig& cfg, Normaliser norm);

// L marginal sets, oldest first.
using DistributionWindow = std::vector<MarginalSet>;

struct TrainingExample {
  DistributionWindow window;
  std::vector<StateVec> outcomes;  // observed state at lead 1, 2, ...
};

// One model application: embeds the window, runs the recurrent cell over it
// and decodes one mixture per variable (state units).
MarginalSet forward(const ModelParams& params, const DistributionWindow& window);

// K recursive applications; each output becomes the newest window entry for
// the next step.
std::vector<MarginalSet> rollout(const ModelParams& params,
                                 const DistributionWindow& window, int steps);

// Batched rollout; result[item][step].
std::vector<std::vector<MarginalSet>> rollout_batch(
    const ModelParams& params, std::span<const DistributionWindow> windows,
    int steps);

struct LossOptions {
  // Per-example, per-step loss (summed over variables) above this value is
  // replaced by the cap and contributes no gradient.
  double step_loss_cap = std::numeric_limits<double>::infinity();
  bool compute_gradient = true;
};

struct LossResult {
  double loss = 0.0;
  Gradient grad;
  std::size_t n_truncated = 0;
  // Mean over the batch of the variable-summed score at each lead.
  std::vector<double> per_lead;
};

// loss = -(1/N) sum_i sum_{k<=K} sum_j ln p_{k,j}^{(i)}(x_{k,j}^{(i)}) in state
// units, with the exact gradient with respect to ModelParams::values.
LossResult loss_and_gradient(const ModelParams& params,
                             std::span<const TrainingExample> batch, int steps,
                             const LossOptions& opts = {});

// Per item, per lead, per variable negative log density of the outcomes
// under the recursive forecast: result[item][(k - 1) * d + j].
std::vector<std::vector<double>> rollout_scores(
    const ModelParams& params, std::span<const TrainingExample> batch,
    int steps);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::size_t worst_index = 0;
};

// Central-difference comparison of `analytic` against `objective` at every
// coordinate of x. Coordinates with |analytic| + |numeric| <= 1e-8 are
// excluded from the maximum.
GradientCheck compare_gradient(
    const std::function<long double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double fd_step);

// The loss of loss_and_gradient (no step cap) evaluated independently in
// extended precision; check_gradient differentiates this numerically.
long double reference_loss(const ModelParams& params,
                           std::span<const TrainingExample> batch, int steps);

GradientCheck check_gradient(const ModelParams& params,
                             std::span<const TrainingExample> batch, int steps,
                             double fd_step = 1e-5);

}  // namespace d2d
