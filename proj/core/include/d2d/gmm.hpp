#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace d2d {

// Lower bound applied to every component stddev when a mixture is built.
inline constexpr double kSigmaMin = 1e-4;

struct GaussianComponent {
  double weight = 1.0;
  double mean = 0.0;
  double stddev = 1.0;

  friend bool operator==(const GaussianComponent&,
                         const GaussianComponent&) = default;
};

// One-dimensional Gaussian mixture. Immutable once built.
//
// Construction validates the components: weights must be finite, non-negative
// and sum to 1 within 1e-6 (they are then renormalised exactly), means finite,
// stddevs finite and non-negative. Stddevs below `sigma_floor` are raised to
// it; a stddev that is still zero afterwards is rejected.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<GaussianComponent> components,
                  double sigma_floor = kSigmaMin);

  // A single Gaussian stored as `copies` identical components of weight
  // 1/copies.
  static GaussianMixture gaussian(double mean, double stddev, int copies = 1,
                                  double sigma_floor = kSigmaMin);

  std::span<const GaussianComponent> components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  const GaussianComponent& operator[](std::size_t i) const {
    return components_[i];
  }

  double mean() const;
  double variance() const;

  friend bool operator==(const GaussianMixture&,
                         const GaussianMixture&) = default;

 private:
  std::vector<GaussianComponent> components_;
};

// Evaluation points and bandwidth for a Gaussian RBF kernel mean embedding.
class KernelConfig {
 public:
  KernelConfig(std::vector<double> centres, double bandwidth);

  // n uniformly spaced centres on [lo, hi].
  static KernelConfig uniform(double lo, double hi, std::size_t n,
                              double bandwidth);

  std::span<const double> centres() const { return centres_; }
  double bandwidth() const { return bandwidth_; }

 private:
  std::vector<double> centres_;
  double bandwidth_;
};

using EmbeddingVector = std::vector<double>;

// ln sum_i w_i N(y | mu_i, sigma_i^2), max-shifted log-sum-exp.
double mixture_log_density(const GaussianMixture& mix, double y);

double mixture_density(const GaussianMixture& mix, double y);

std::vector<double> mixture_pdf_grid(const GaussianMixture& mix,
                                     std::span<const double> grid);

std::vector<double> sample_mixture(const GaussianMixture& mix, std::size_t n,
                                   std::uint64_t seed);

// Closed-form embedding of N(mean, stddev^2) under k(x, c) =
// exp(-(x - c)^2 / (2 l^2)), evaluated at `centre`:
//   sqrt(l^2 / (l^2 + s^2)) * exp(-(mean - c)^2 / (2 (l^2 + s^2))).
double embed_gaussian(double mean, double stddev, double centre,
                      double bandwidth);

// Weighted sum of component embeddings at every centre.
EmbeddingVector embed_mixture(const GaussianMixture& mix,
                              const KernelConfig& kernel);

// w * a + (1 - w) * b as one mixture (components concatenated and scaled).
GaussianMixture blend(const GaussianMixture& a, const GaussianMixture& b,
                      double w);

}  // namespace d2d

namespace d2d {

// One predictive marginal per state variable at a single lead time.
using MarginalSet = std::vector<GaussianMixture>;

}  // namespace d2d
