#include "d2d/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "d2d/error.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // ln sqrt(2 pi)

double log_normal_pdf(double y, double mean, double stddev) {
  const double z = (y - mean) / stddev;
  return -0.5 * z * z - std::log(stddev) - kLogSqrt2Pi;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components,
                                 double sigma_floor)
    : components_(std::move(components)) {
  if (components_.empty()) {
    throw InvalidMixtureError("mixture needs at least one component");
  }
  if (!(sigma_floor >= 0.0)) {
    throw InvalidMixtureError("sigma floor must be non-negative");
  }
  double total = 0.0;
  for (const auto& c : components_) {
    if (!std::isfinite(c.weight) || c.weight < 0.0) {
      throw InvalidMixtureError("component weight must be finite and >= 0");
    }
    if (!std::isfinite(c.mean)) {
      throw InvalidMixtureError("component mean must be finite");
    }
    if (!std::isfinite(c.stddev) || c.stddev < 0.0) {
      throw InvalidMixtureError("component stddev must be finite and >= 0");
    }
    total += c.weight;
  }
  if (!(total > 0.0)) {
    throw InvalidMixtureError("all mixture weights are zero");
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw InvalidMixtureError("mixture weights sum to " +
                              std::to_string(total) + ", expected 1");
  }
  for (auto& c : components_) {
    c.weight /= total;
    c.stddev = std::max(c.stddev, sigma_floor);
    if (!(c.stddev > 0.0)) {
      throw InvalidMixtureError("component stddev must be positive");
    }
  }
}

GaussianMixture GaussianMixture::gaussian(double mean, double stddev,
                                          int copies, double sigma_floor) {
  if (copies < 1) throw InvalidMixtureError("copies must be >= 1");
  std::vector<GaussianComponent> comps(
      static_cast<std::size_t>(copies),
      GaussianComponent{1.0 / copies, mean, stddev});
  return GaussianMixture(std::move(comps), sigma_floor);
}

double GaussianMixture::mean() const {
  double m = 0.0;
  for (const auto& c : components_) m += c.weight * c.mean;
  return m;
}

double GaussianMixture::variance() const {
  double second = 0.0;
  for (const auto& c : components_) {
    second += c.weight * (c.stddev * c.stddev + c.mean * c.mean);
  }
  const double m = mean();
  return second - m * m;
}

KernelConfig::KernelConfig(std::vector<double> centres, double bandwidth)
    : centres_(std::move(centres)), bandwidth_(bandwidth) {
  if (centres_.empty()) throw DomainError("gmm", "kernel needs centres");
  for (std::size_t i = 1; i < centres_.size(); ++i) {
    if (!(centres_[i] > centres_[i - 1])) {
      throw DomainError("gmm", "kernel centres must be strictly increasing");
    }
  }
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_)) {
    throw DomainError("gmm", "kernel bandwidth must be positive");
  }
}

KernelConfig KernelConfig::uniform(double lo, double hi, std::size_t n,
                                   double bandwidth) {
  if (n == 0) throw DomainError("gmm", "need at least one centre");
  std::vector<double> c(n);
  if (n == 1) {
    c[0] = 0.5 * (lo + hi);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = lo + (hi - lo) * static_cast<double>(i) /
                      static_cast<double>(n - 1);
    }
  }
  return KernelConfig(std::move(c), bandwidth);
}

double mixture_log_density(const GaussianMixture& mix, double y) {
  if (!std::isfinite(y)) {
    throw DomainError("gmm", "log density evaluated at non-finite point");
  }
  double peak = -std::numeric_limits<double>::infinity();
  // Stack buffer covers typical mixture sizes without allocating.
  constexpr std::size_t kInline = 16;
  double inline_terms[kInline];
  std::vector<double> heap_terms;
  double* terms = inline_terms;
  if (mix.size() > kInline) {
    heap_terms.resize(mix.size());
    terms = heap_terms.data();
  }
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const auto& c = mix[i];
    terms[i] = c.weight > 0.0
                   ? std::log(c.weight) + log_normal_pdf(y, c.mean, c.stddev)
                   : -std::numeric_limits<double>::infinity();
    peak = std::max(peak, terms[i]);
  }
  if (!std::isfinite(peak)) {
    if (peak == -std::numeric_limits<double>::infinity()) return peak;
    throw InvalidMixtureError("non-finite log density term");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) sum += std::exp(terms[i] - peak);
  return peak + std::log(sum);
}

double mixture_density(const GaussianMixture& mix, double y) {
  return std::exp(mixture_log_density(mix, y));
}

std::vector<double> mixture_pdf_grid(const GaussianMixture& mix,
                                     std::span<const double> grid) {
  if (grid.empty()) throw DomainError("gmm", "empty evaluation grid");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw DomainError("gmm", "evaluation grid must be strictly increasing");
    }
  }
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out[i] = mixture_density(mix, grid[i]);
  }
  return out;
}

std::vector<double> sample_mixture(const GaussianMixture& mix, std::size_t n,
                                   std::uint64_t seed) {
  if (n == 0) throw DomainError("gmm", "sample count must be >= 1");
  std::vector<double> cumulative(mix.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    acc += mix[i].weight;
    cumulative[i] = acc;
  }
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) {
    const double u = uniform01(rng) * acc;
    std::size_t k = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) -
        cumulative.begin());
    k = std::min(k, mix.size() - 1);
    // upper_bound can land on a zero-weight tail; step back to the last
    // component that actually carries mass.
    while (mix[k].weight == 0.0 && k > 0) --k;
    x = mix[k].mean + mix[k].stddev * standard_normal(rng);
  }
  return out;
}

double embed_gaussian(double mean, double stddev, double centre,
                      double bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw DomainError("gmm", "embedding bandwidth must be positive");
  }
  if (!(stddev >= 0.0)) {
    throw DomainError("gmm", "embedding stddev must be non-negative");
  }
  const double l2 = bandwidth * bandwidth;
  const double v = l2 + stddev * stddev;
  const double diff = mean - centre;
  return std::sqrt(l2 / v) * std::exp(-diff * diff / (2.0 * v));
}

EmbeddingVector embed_mixture(const GaussianMixture& mix,
                              const KernelConfig& kernel) {
  const auto centres = kernel.centres();
  EmbeddingVector out(centres.size(), 0.0);
  for (const auto& c : mix.components()) {
    for (std::size_t j = 0; j < centres.size(); ++j) {
      out[j] += c.weight *
                embed_gaussian(c.mean, c.stddev, centres[j], kernel.bandwidth());
    }
  }
  return out;
}

GaussianMixture blend(const GaussianMixture& a, const GaussianMixture& b,
                      double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw DomainError("gmm", "blend weight not in [0,1]");
  std::vector<GaussianComponent> comps;
  comps.reserve(a.size() + b.size());
  for (auto c : a.components()) {
    c.weight *= w;
    comps.push_back(c);
  }
  for (auto c : b.components()) {
    c.weight *= 1.0 - w;
    comps.push_back(c);
  }
  return GaussianMixture(std::move(comps), 0.0);
}

}  // namespace d2d
