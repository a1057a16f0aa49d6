#include "d2d/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d2d/error.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {

bool all_finite(const StateVec& s) {
  return std::isfinite(s[0]) && std::isfinite(s[1]) && std::isfinite(s[2]);
}

StateVec axpy(const StateVec& s, double a, const StateVec& k) {
  return {s[0] + a * k[0], s[1] + a * k[1], s[2] + a * k[2]};
}

}  // namespace

int LorenzParams::substeps() const {
  if (!(dt_sim > 0.0) || !(dt_obs > 0.0)) {
    throw DomainError("dynamics", "time steps must be positive");
  }
  const double ratio = dt_obs / dt_sim;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded) {
    throw DomainError("dynamics", "dt_obs not a multiple of dt_sim");
  }
  return static_cast<int>(rounded);
}

StateVec lorenz_rhs(const StateVec& s, const LorenzParams& p) {
  return {p.sigma * (s[1] - s[0]), s[0] * (p.rho - s[2]) - s[1],
          s[0] * s[1] - p.beta * s[2]};
}

StateVec rk4_step(const StateVec& s, const LorenzParams& p) {
  return rk4_step(s, p, p.dt_sim);
}

StateVec rk4_step(const StateVec& s, const LorenzParams& p, double dt) {
  const StateVec k1 = lorenz_rhs(s, p);
  const StateVec k2 = lorenz_rhs(axpy(s, 0.5 * dt, k1), p);
  const StateVec k3 = lorenz_rhs(axpy(s, 0.5 * dt, k2), p);
  const StateVec k4 = lorenz_rhs(axpy(s, dt, k3), p);
  StateVec out;
  for (std::size_t i = 0; i < kStateDim; ++i) {
    out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  if (!all_finite(out) || !all_finite(k4)) {
    throw IntegrationBlowupError("non-finite state in RK4 step");
  }
  return out;
}

StateVec advance_observation_step(const StateVec& s, const LorenzParams& p) {
  const int n = p.substeps();
  StateVec x = s;
  for (int i = 0; i < n; ++i) x = rk4_step(x, p);
  return x;
}

std::vector<StateVec> simulate_trajectory(const StateVec& s0,
                                          std::size_t n_obs_steps,
                                          const LorenzParams& p) {
  if (!all_finite(s0)) throw DomainError("dynamics", "non-finite initial state");
  std::vector<StateVec> out;
  out.reserve(n_obs_steps + 1);
  out.push_back(s0);
  for (std::size_t k = 0; k < n_obs_steps; ++k) {
    out.push_back(advance_observation_step(out.back(), p));
  }
  return out;
}

StateVec empirical_state_stddev(const LorenzParams& p) {
  StateVec s{1.0, 1.0, 1.0};
  for (std::size_t k = 0; k < kSpinupSteps; ++k) {
    s = advance_observation_step(s, p);
  }
  StateVec mean{}, m2{};
  for (std::size_t k = 0; k < kReferenceRunSteps; ++k) {
    s = advance_observation_step(s, p);
    const double n = static_cast<double>(k + 1);
    for (std::size_t j = 0; j < kStateDim; ++j) {
      const double delta = s[j] - mean[j];
      mean[j] += delta / n;
      m2[j] += delta * (s[j] - mean[j]);
    }
  }
  StateVec out;
  for (std::size_t j = 0; j < kStateDim; ++j) {
    out[j] = std::sqrt(m2[j] / static_cast<double>(kReferenceRunSteps - 1));
  }
  return out;
}

ObservationSeries ObservationSeries::slice(std::size_t begin,
                                           std::size_t end) const {
  if (begin > end || end > size()) {
    throw DomainError("dynamics", "slice out of range");
  }
  ObservationSeries out;
  out.times.assign(times.begin() + begin, times.begin() + end);
  out.observations.assign(observations.begin() + begin,
                          observations.begin() + end);
  out.noise_level = noise_level;
  out.noise_stddev = noise_stddev;
  if (truth) {
    out.truth.emplace(truth->begin() + begin, truth->begin() + end);
  }
  return out;
}

ObservationSeries make_observation_series(std::size_t n, double noise_level,
                                          std::uint64_t seed,
                                          const LorenzParams& p) {
  if (n == 0) throw DomainError("dynamics", "series length must be >= 1");
  if (!(noise_level >= 0.0)) {
    throw DomainError("dynamics", "noise level must be non-negative");
  }
  Rng start_rng(mix_seed(seed, 0));
  StateVec s{1.0 + standard_normal(start_rng), 1.0 + standard_normal(start_rng),
             1.0 + standard_normal(start_rng)};
  for (std::size_t k = 0; k < kSpinupSteps; ++k) {
    s = advance_observation_step(s, p);
  }

  ObservationSeries out;
  out.noise_level = noise_level;
  const StateVec spread = empirical_state_stddev(p);
  for (std::size_t j = 0; j < kStateDim; ++j) {
    out.noise_stddev[j] = noise_level * spread[j];
  }

  std::vector<StateVec> truth = simulate_trajectory(s, n - 1, p);
  Rng noise_rng(mix_seed(seed, 1));
  out.times.resize(n);
  out.observations.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.times[k] = static_cast<double>(k) * p.dt_obs;
    for (std::size_t j = 0; j < kStateDim; ++j) {
      const double eps = standard_normal(noise_rng);
      out.observations[k][j] = truth[k][j] + out.noise_stddev[j] * eps;
    }
  }
  out.truth = std::move(truth);
  return out;
}

Dataset make_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                     double noise_level, std::uint64_t seed,
                     const LorenzParams& p) {
  Dataset d;
  d.series =
      make_observation_series(n_train + n_val + n_test, noise_level, seed, p);
  d.splits = {n_train, n_train + n_val, n_train + n_val + n_test};
  d.seed = seed;
  d.params = p;
  return d;
}

std::vector<double> kde_on_grid(std::span<const double> samples,
                                std::span<const double> grid) {
  if (samples.empty() || grid.empty()) {
    throw DomainError("dynamics", "KDE needs samples and a grid");
  }
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  const double sd = samples.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  double h = 0.9 * spread * std::pow(n, -0.2);

  double max_gap = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    max_gap = std::max(max_gap, grid[i] - grid[i - 1]);
  }
  if (max_gap == 0.0) max_gap = kSigmaMin;
  h = std::max(h, max_gap);

  const double norm = 1.0 / (n * h * std::sqrt(2.0 * 3.14159265358979323846));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double x : sorted) {
      const double z = (grid[g] - x) / h;
      if (std::abs(z) < 40.0) acc += std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

std::vector<std::vector<double>> reference_pdf_evolution(
    const MarginalSet& init, std::size_t horizon_steps, std::size_t n_members,
    std::span<const double> grid, std::uint64_t seed, const LorenzParams& p,
    std::size_t variable) {
  if (init.size() != kStateDim) {
    throw DomainError("dynamics", "initial condition needs 3 marginals");
  }
  if (n_members < 100) throw DomainError("dynamics", "need >= 100 members");
  if (variable >= kStateDim) throw DomainError("dynamics", "bad variable index");

  std::vector<StateVec> members(n_members);
  for (std::size_t j = 0; j < kStateDim; ++j) {
    const auto draws = sample_mixture(init[j], n_members, mix_seed(seed, j));
    for (std::size_t m = 0; m < n_members; ++m) members[m][j] = draws[m];
  }

  std::vector<std::vector<double>> rows;
  rows.reserve(horizon_steps + 1);
  std::vector<double> values(n_members);
  for (std::size_t k = 0;; ++k) {
    for (std::size_t m = 0; m < n_members; ++m) values[m] = members[m][variable];
    rows.push_back(kde_on_grid(values, grid));
    if (k == horizon_steps) break;
    for (auto& m : members) m = advance_observation_step(m, p);
  }
  return rows;
}

}  // namespace d2d
