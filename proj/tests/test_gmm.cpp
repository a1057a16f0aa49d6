#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "d2d/error.hpp"
#include "d2d/gmm.hpp"
#include "support.hpp"

using namespace d2d;
using d2d::test::make_mixture;
using d2d::test::naive_density;

namespace {

const std::vector<std::array<double, 3>> kTwoComp = {{0.3, -1.0, 0.5}, {0.7, 2.0, 1.0}};

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

std::vector<double> span_grid(const GaussianMixture& m, std::size_t n) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& c : m.components()) {
    lo = std::min(lo, c.mean - 8 * c.stddev);
    hi = std::max(hi, c.mean + 8 * c.stddev);
  }
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
  return g;
}

// Monte Carlo estimate of E[exp(-(X - c)^2 / (2 l^2))] with its standard error.
std::pair<double, double> mc_embedding(const GaussianMixture& mix, double c, double l,
                                       std::size_t n, std::uint64_t seed) {
  const auto xs = sample_mixture(mix, n, seed);
  double s = 0.0, s2 = 0.0;
  for (double x : xs) {
    const double k = std::exp(-(x - c) * (x - c) / (2 * l * l));
    s += k;
    s2 += k * k;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  return {mean, std::sqrt(var / n)};
}

}  // namespace

TEST(MixtureLogDensity, StandardNormalAtMean) {
  EXPECT_NEAR(mixture_log_density(make_mixture({{1.0, 0.0, 1.0}}), 0.0), -0.918939, 1e-6);
}

TEST(MixtureLogDensity, IdenticalComponentsCollapse) {
  EXPECT_NEAR(mixture_log_density(make_mixture({{0.5, 0, 1}, {0.5, 0, 1}}), 0.0), -0.918939,
              1e-6);
}

TEST(MixtureLogDensity, TwoComponentAgainstDirectSum) {
  const double oracle = std::log(naive_density(kTwoComp, 0.0));
  EXPECT_NEAR(oracle, -2.6566, 1e-4);
  EXPECT_NEAR(mixture_log_density(make_mixture(kTwoComp), 0.0), oracle, 1e-12);
}

TEST(MixtureLogDensity, NonFiniteOutcomeIsDomainError) {
  const auto m = make_mixture(kTwoComp);
  EXPECT_THROW(mixture_log_density(m, NAN), DomainError);
  EXPECT_THROW(mixture_log_density(m, INFINITY), DomainError);
}

TEST(MixtureLogDensity, FarTailStaysFinite) {
  const auto m = make_mixture({{0.5, 0, 0.01}, {0.5, 1, 0.01}});
  const double v = mixture_log_density(m, 1000.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, -1e9);
}

TEST(MixtureLogDensity, MatchesNaiveSumOnRandomMixtures) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> y(-12, 12);
  for (int t = 0; t < 2000; ++t) {
    const auto m = d2d::test::random_mixture(rng);
    std::vector<std::array<double, 3>> comps;
    for (const auto& c : m.components()) comps.push_back({c.weight, c.mean, c.stddev});
    const double yy = y(rng);
    const double naive = naive_density(comps, yy);
    if (naive > 1e-280) {
      EXPECT_NEAR(std::exp(mixture_log_density(m, yy)) / naive, 1.0, 1e-10);
    }
  }
}

TEST(GaussianMixture, RejectsInvalidComponents) {
  EXPECT_THROW(GaussianMixture({}), InvalidMixtureError);
  EXPECT_THROW(make_mixture({{0.0, 0, 1}, {0.0, 1, 1}}), InvalidMixtureError);
  EXPECT_THROW(make_mixture({{-0.1, 0, 1}, {1.1, 1, 1}}), InvalidMixtureError);
  EXPECT_THROW(make_mixture({{0.5, 0, 1}, {0.4, 1, 1}}), InvalidMixtureError);
  EXPECT_THROW(make_mixture({{1.0, NAN, 1}}), InvalidMixtureError);
  EXPECT_THROW(make_mixture({{1.0, 0, -1}}), InvalidMixtureError);
  EXPECT_THROW(GaussianMixture({{1.0, 0.0, 0.0}}, 0.0), InvalidMixtureError);
}

TEST(GaussianMixture, RenormalisesNearUnitWeightsAndFloorsStddev) {
  const auto m = make_mixture({{0.5 + 4e-7, 0, 1}, {0.5, 1, 0.0}});
  double total = 0.0;
  for (const auto& c : m.components()) total += c.weight;
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(m[1].stddev, kSigmaMin);
}

TEST(GaussianMixture, MomentsMatchFormulas) {
  const auto m = make_mixture(kTwoComp);
  const double mean = 0.3 * -1 + 0.7 * 2;
  EXPECT_NEAR(m.mean(), mean, 1e-14);
  EXPECT_NEAR(m.variance(), 0.3 * (0.25 + 1) + 0.7 * (1 + 4) - mean * mean, 1e-12);
}

TEST(MixturePdfGrid, Examples) {
  const auto n = make_mixture({{1, 0, 1}});
  EXPECT_NEAR(mixture_pdf_grid(n, std::vector<double>{0.0})[0], 0.398942, 1e-6);
  const auto sym = mixture_pdf_grid(n, std::vector<double>{-1.0, 1.0});
  EXPECT_DOUBLE_EQ(sym[0], sym[1]);
  const double oracle = naive_density(kTwoComp, 0.0);
  EXPECT_NEAR(oracle, 0.070189, 1e-6);
  EXPECT_NEAR(mixture_pdf_grid(make_mixture(kTwoComp), std::vector<double>{0.0})[0], oracle,
              1e-15);
}

TEST(MixturePdfGrid, RejectsBadGrids) {
  const auto n = make_mixture({{1, 0, 1}});
  EXPECT_THROW(mixture_pdf_grid(n, std::vector<double>{}), DomainError);
  EXPECT_THROW(mixture_pdf_grid(n, std::vector<double>{0.0, 0.0}), DomainError);
  EXPECT_THROW(mixture_pdf_grid(n, std::vector<double>{1.0, 0.0}), DomainError);
}

TEST(MixturePdfGrid, IntegratesToOne) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto m = d2d::test::random_mixture(rng);
    const auto g = span_grid(m, 100000);
    const auto p = mixture_pdf_grid(m, g);
    for (double v : p) ASSERT_GE(v, 0.0);
    EXPECT_NEAR(trapezoid(g, p), 1.0, 1e-4);
  }
}

TEST(SampleMixture, DegenerateWidth) {
  const auto xs = sample_mixture(make_mixture({{1, 3, 1e-12}}), 5, 1);
  ASSERT_EQ(xs.size(), 5u);
  for (double x : xs) EXPECT_NEAR(x, 3.0, 1e-2);
}

TEST(SampleMixture, ZeroWeightComponentNeverDrawn) {
  const auto xs = sample_mixture(make_mixture({{0, 0, 1}, {1, 7, 1}}), 1000000, 2);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  EXPECT_NEAR(mean, 7.0, 0.01);
}

TEST(SampleMixture, BimodalMoments) {
  const auto xs = sample_mixture(make_mixture({{0.5, -2, 1}, {0.5, 2, 1}}), 1000000, 3);
  double s = 0, s2 = 0;
  for (double x : xs) {
    s += x;
    s2 += x * x;
  }
  const double mean = s / xs.size();
  const double var = s2 / xs.size() - mean * mean;
  // Var = sum w (sigma^2 + mu^2) - mean^2 = 5.
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 5.0, 0.05);
}

TEST(SampleMixture, DeterministicGivenSeed) {
  const auto m = make_mixture(kTwoComp);
  EXPECT_EQ(sample_mixture(m, 1000, 42), sample_mixture(m, 1000, 42));
  EXPECT_NE(sample_mixture(m, 1000, 42), sample_mixture(m, 1000, 43));
}

TEST(EmbedGaussian, Examples) {
  EXPECT_DOUBLE_EQ(embed_gaussian(0.3, 0.0, 0.3, 0.7), 1.0);
  EXPECT_NEAR(embed_gaussian(0.0, 1.5, 0.0, 1.5), 1.0 / std::sqrt(2.0), 1e-15);
  // Quoted to six digits as 0.404657; the closed form gives 0.4046556.
  EXPECT_NEAR(embed_gaussian(1.0, 2.0, 0.0, 1.0), 0.404657, 2e-6);
  EXPECT_NEAR(embed_gaussian(1.0, 2.0, 0.0, 1.0), std::sqrt(0.2) * std::exp(-0.1), 1e-15);
}

TEST(EmbedGaussian, AgreesWithMonteCarloOracle) {
  const auto [mc, se] = mc_embedding(make_mixture({{1, 1, 2}}), 0.0, 1.0, 10000000, 7);
  EXPECT_NEAR(embed_gaussian(1.0, 2.0, 0.0, 1.0), mc, 3 * se);
}

TEST(EmbedGaussian, RejectsNonPositiveBandwidth) {
  EXPECT_THROW(embed_gaussian(0, 1, 0, 0.0), DomainError);
  EXPECT_THROW(embed_gaussian(0, 1, 0, -1.0), DomainError);
  EXPECT_THROW(embed_gaussian(0, -1, 0, 1.0), DomainError);
}

TEST(EmbedMixture, SingleComponentMatchesEmbedGaussian) {
  const KernelConfig k = KernelConfig::uniform(-3, 3, 7, 0.8);
  const auto e = embed_mixture(make_mixture({{1, 0.4, 1.3}}), k);
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_EQ(e[i], embed_gaussian(0.4, 1.3, k.centres()[i], 0.8));
  }
  const auto dup = embed_mixture(make_mixture({{0.5, 0.4, 1.3}, {0.5, 0.4, 1.3}}), k);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(dup[i], e[i], 1e-15);
}

TEST(EmbedMixture, TwoComponentAgainstMonteCarlo) {
  const auto m = make_mixture(kTwoComp);
  const KernelConfig k({-2.0, 0.0, 2.0}, 1.0);
  const auto e = embed_mixture(m, k);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto [mc, se] = mc_embedding(m, k.centres()[i], 1.0, 10000000, 100 + i);
    EXPECT_NEAR(e[i], mc, 3 * se) << "centre " << k.centres()[i];
  }
}

TEST(EmbedMixture, BoundsAndLinearity) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 300; ++t) {
    const auto a = d2d::test::random_mixture(rng);
    const auto b = d2d::test::random_mixture(rng);
    const double w = u(rng);
    const KernelConfig k = KernelConfig::uniform(-6, 6, 13, 0.1 + 2 * u(rng));
    const auto ea = embed_mixture(a, k);
    const auto eb = embed_mixture(b, k);
    const auto ec = embed_mixture(blend(a, b, w), k);
    for (std::size_t i = 0; i < ea.size(); ++i) {
      EXPECT_GE(ea[i], 0.0);
      EXPECT_LE(ea[i], 1.0);
      EXPECT_NEAR(ec[i], w * ea[i] + (1 - w) * eb[i], 1e-12);
    }
  }
}

TEST(KernelConfig, Validation) {
  EXPECT_THROW(KernelConfig({0.0, 0.0}, 1.0), DomainError);
  EXPECT_THROW(KernelConfig({1.0, 0.0}, 1.0), DomainError);
  EXPECT_THROW(KernelConfig({0.0, 1.0}, 0.0), DomainError);
  const auto k = KernelConfig::uniform(-1, 1, 5, 1.0);
  EXPECT_DOUBLE_EQ(k.centres().front(), -1.0);
  EXPECT_DOUBLE_EQ(k.centres().back(), 1.0);
}
