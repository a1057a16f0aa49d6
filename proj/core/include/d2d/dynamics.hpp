#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "d2d/gmm.hpp"

namespace d2d {

inline constexpr std::size_t kStateDim = 3;

using StateVec = std::array<double, kStateDim>;

struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double dt_sim = 0.01;
  double dt_obs = 0.05;

  // Number of RK4 substeps per observation interval; throws DomainError when
  // dt_obs is not an integer multiple of dt_sim.
  int substeps() const;
};

// dx/dt = sigma (y - x), dy/dt = x (rho - z) - y, dz/dt = x y - beta z.
StateVec lorenz_rhs(const StateVec& s, const LorenzParams& p);

// Classical fourth-order Runge-Kutta step of size p.dt_sim (or `dt`).
StateVec rk4_step(const StateVec& s, const LorenzParams& p);
StateVec rk4_step(const StateVec& s, const LorenzParams& p, double dt);

// Advances one observation interval (substeps() RK4 steps).
StateVec advance_observation_step(const StateVec& s, const LorenzParams& p);

// States at observation times only; length n_obs_steps + 1 including s0.
std::vector<StateVec> simulate_trajectory(const StateVec& s0,
                                          std::size_t n_obs_steps,
                                          const LorenzParams& p);

inline constexpr std::size_t kSpinupSteps = 1000;
inline constexpr std::size_t kReferenceRunSteps = 100000;

// Per-variable stddev of a noise-free run of kReferenceRunSteps observation
// steps, started from a fixed point and spun up for kSpinupSteps.
StateVec empirical_state_stddev(const LorenzParams& p);

struct ObservationSeries {
  std::vector<double> times;
  std::vector<StateVec> observations;
  double noise_level = 0.0;
  StateVec noise_stddev{};
  std::optional<std::vector<StateVec>> truth;

  std::size_t size() const { return observations.size(); }
  // Contiguous sub-series [begin, end); times are kept as-is.
  ObservationSeries slice(std::size_t begin, std::size_t end) const;
};

// Truth run of n observation times after spin-up from a seeded random start
// near the attractor, plus i.i.d. N(0, (noise_level * empirical_std[j])^2)
// noise on each variable.
ObservationSeries make_observation_series(std::size_t n, double noise_level,
                                          std::uint64_t seed,
                                          const LorenzParams& p);

// Boundaries of three contiguous segments: [0, train_end) train,
// [train_end, val_end) validation, [val_end, test_end) test.
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t test_end = 0;
};

struct Dataset {
  ObservationSeries series;
  SplitBounds splits;
  std::uint64_t seed = 0;
  LorenzParams params;

  ObservationSeries train() const { return series.slice(0, splits.train_end); }
  ObservationSeries validation() const {
    return series.slice(splits.train_end, splits.val_end);
  }
  ObservationSeries test() const {
    return series.slice(splits.val_end, splits.test_end);
  }
};

Dataset make_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                     double noise_level, std::uint64_t seed,
                     const LorenzParams& p);

// Gaussian KDE with Silverman's rule-of-thumb bandwidth, floored at the
// largest grid spacing so that a degenerate sample still renders as a bump.
std::vector<double> kde_on_grid(std::span<const double> samples,
                                std::span<const double> grid);

// Reference evolution of one marginal: samples n_members initial states
// (independently per variable from `init`), propagates each member under the
// true dynamics and returns, for lead 0..horizon_steps, the KDE of the chosen
// variable on `grid`. Row-major [horizon_steps + 1][grid.size()].
std::vector<std::vector<double>> reference_pdf_evolution(
    const MarginalSet& init, std::size_t horizon_steps, std::size_t n_members,
    std::span<const double> grid, std::uint64_t seed, const LorenzParams& p,
    std::size_t variable = 0);

}  // namespace d2d
