#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/gmm.hpp"

namespace d2d {

// Negative log densities are capped here (density floor e^-700).
inline constexpr double kScoreFloor = 700.0;

struct LogScore {
  double value = 0.0;  // nats
  bool floored = false;
};

// Kernel dressing: equal-weight Gaussian kernels with one shared stddev.
class DressedDensity {
 public:
  DressedDensity(std::vector<double> centres, double stddev);

  double log_density(double y) const;
  std::span<const double> centres() const { return centres_; }
  double stddev() const { return stddev_; }

 private:
  std::vector<double> centres_;
  double stddev_;
};

LogScore score_from_log_density(double log_density);
LogScore log_score(const GaussianMixture& density, double outcome);
LogScore log_score(const DressedDensity& density, double outcome);

// 40 log-spaced values on [1e-3, 10] (normalised units).
std::vector<double> dressing_grid();

// Dressing stddev from dressing_grid() * scale minimising the mean log score
// of `validation` under kernels centred at `history`.
DressedDensity fit_dressing(std::span<const double> history,
                            std::span<const double> validation, double scale);

// Per-variable climatology; the scale of each variable is its stddev in
// `history` (1 when history has a single point).
std::array<DressedDensity, kStateDim> fit_climatology(
    std::span<const StateVec> history, std::span<const StateVec> validation);

// Scores indexed by (forecast, lead, variable); leads are 1..n_leads.
class ScoreTable {
 public:
  ScoreTable() = default;
  ScoreTable(std::vector<std::size_t> forecast_ids, int n_leads, int d);

  void set(std::size_t i, int lead, int j, LogScore s);
  double at(std::size_t i, int lead, int j) const;
  bool floored(std::size_t i, int lead, int j) const;
  // Sum over variables.
  double summed(std::size_t i, int lead) const;

  std::size_t n_forecasts() const { return ids_.size(); }
  int n_leads() const { return n_leads_; }
  int dim() const { return d_; }
  std::span<const std::size_t> forecast_ids() const { return ids_; }
  std::size_t n_floored() const;
  std::size_t n_floored(int lead, int j) const;

 private:
  std::size_t index(std::size_t i, int lead, int j) const;
  std::vector<std::size_t> ids_;
  int n_leads_ = 0;
  int d_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> floored_;
};

// outcomes[i][k - 1] is the observed state at lead k for forecast i.
ScoreTable score_forecasts(std::span<const std::size_t> ids,
                           const std::vector<std::vector<MarginalSet>>& forecasts,
                           const std::vector<std::vector<StateVec>>& outcomes);

ScoreTable score_climatology(const std::array<DressedDensity, kStateDim>& clim,
                             std::span<const std::size_t> ids,
                             const std::vector<std::vector<StateVec>>& outcomes);

struct PerfectModelResult {
  ScoreTable scores;
  // Tuned dressing stddev per lead (index k - 1) and variable.
  std::vector<std::array<double, kStateDim>> dressing_stddev;
};

struct PerfectModelSetup {
  std::size_t n_members = 128;
  int lead_max = 1;
  std::uint64_t seed = 1;
  StateVec scale{1.0, 1.0, 1.0};  // normalised unit for the dressing grid
};

// Ensembles of n_members initial states drawn from N(observation,
// noise_stddev^2) at each origin, propagated under the true dynamics and
// kernel-dressed per lead and variable. Dressing stddevs are tuned on the
// validation origins, then the test origins are scored.
PerfectModelResult perfect_model_benchmark(
    const ObservationSeries& test, std::span<const std::size_t> test_origins,
    const ObservationSeries& validation, std::span<const std::size_t> val_origins,
    const LorenzParams& params, const PerfectModelSetup& setup);

struct BootstrapInterval {
  double low = 0.0;
  double mean = 0.0;
  double high = 0.0;
};

// Percentile bootstrap of the mean.
BootstrapInterval bootstrap_interval(std::span<const double> scores,
                                     std::size_t n_resamples, double level,
                                     std::uint64_t seed);

// Column-wise bootstrap of the mean sharing one resampled index set per
// replicate across all columns. rows = forecasts.
std::vector<BootstrapInterval> bootstrap_columns(const Eigen::MatrixXd& values,
                                                 std::size_t n_resamples,
                                                 double level, std::uint64_t seed);

struct SkillPoint {
  int lead = 0;
  // Index 0 is the sum over variables; 1..d the individual variables.
  std::vector<BootstrapInterval> by_variable;
  std::vector<std::size_t> n_floored;
};

struct SkillCurve {
  std::vector<SkillPoint> points;
};

// Per lead, mean over forecasts of (model score - climatology score).
SkillCurve skill_curve(const ScoreTable& model, const ScoreTable& climatology,
                       std::size_t n_resamples = 1000, double level = 0.95,
                       std::uint64_t seed = 1);

void write_score_table(std::ostream& out, const ScoreTable& table);
// Columns: lead,variable,mean,low,high,n_floored; variable is sum|x|y|z.
void write_skill_curve(std::ostream& out, const SkillCurve& curve);

}  // namespace d2d
