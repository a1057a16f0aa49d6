#pragma once

// Helpers and independent reference implementations shared by the tests.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/gmm.hpp"
#include "d2d/net.hpp"
#include "d2d/training.hpp"

namespace d2d::test {

inline double normal_pdf(double y, double mu, double sd) {
  const double z = (y - mu) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Plain weighted sum of component densities.
inline double naive_density(const std::vector<std::array<double, 3>>& comps, double y) {
  double p = 0.0;
  for (const auto& c : comps) p += c[0] * normal_pdf(y, c[1], c[2]);
  return p;
}

inline GaussianMixture make_mixture(const std::vector<std::array<double, 3>>& comps) {
  std::vector<GaussianComponent> v;
  for (const auto& c : comps) v.push_back({c[0], c[1], c[2]});
  return GaussianMixture(v);
}

inline GaussianMixture random_mixture(std::mt19937_64& rng, int max_components = 5,
                                      double mean_range = 5.0) {
  std::uniform_int_distribution<int> count(1, max_components);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int m = count(rng);
  std::vector<double> w(m);
  double total = 0.0;
  for (auto& x : w) total += (x = 0.05 + u(rng));
  std::vector<GaussianComponent> comps;
  for (int i = 0; i < m; ++i) {
    comps.push_back({w[i] / total, mean_range * (2 * u(rng) - 1), 0.05 + 2.0 * u(rng)});
  }
  return GaussianMixture(comps);
}

// Classical RK4 written from the Butcher tableau, generic over the stage count.
inline StateVec tableau_rk4(const StateVec& s, const LorenzParams& p, double h) {
  constexpr double a[4][4] = {{0, 0, 0, 0}, {0.5, 0, 0, 0}, {0, 0.5, 0, 0}, {0, 0, 1, 0}};
  constexpr double b[4] = {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6};
  auto f = [&](const StateVec& v) {
    return StateVec{p.sigma * (v[1] - v[0]), v[0] * (p.rho - v[2]) - v[1],
                    v[0] * v[1] - p.beta * v[2]};
  };
  std::array<StateVec, 4> k{};
  for (int i = 0; i < 4; ++i) {
    StateVec y = s;
    for (int j = 0; j < i; ++j) {
      for (int d = 0; d < 3; ++d) y[d] += h * a[i][j] * k[j][d];
    }
    k[i] = f(y);
  }
  StateVec out = s;
  for (int i = 0; i < 4; ++i) {
    for (int d = 0; d < 3; ++d) out[d] += h * b[i] * k[i][d];
  }
  return out;
}

inline NetConfig tiny_config(int window_len = 2, std::uint64_t seed = 3) {
  NetConfig c;
  c.window_len = window_len;
  c.n_centres = 5;
  c.n_components = 2;
  c.hidden_size = 4;
  c.seed = seed;
  return c;
}

// Short synthetic dataset used by training and forecasting tests.
inline Dataset small_dataset(std::size_t n = 300, double noise = 0.04, std::uint64_t seed = 5) {
  return make_dataset(n, n, n, noise, seed, LorenzParams{});
}

// Windows with non-trivial input spreads, built from a small dataset.
inline std::vector<TrainingExample> tiny_batch(const NetConfig& cfg, int horizon,
                                               std::size_t count, std::uint64_t seed = 9) {
  const Dataset data = small_dataset(200, 0.05, seed);
  auto all = build_training_windows(data.train(), cfg, horizon);
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(all[(i * 37) % all.size()]);
  return out;
}

}  // namespace d2d::test
