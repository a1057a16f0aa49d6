#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "d2d/error.hpp"
#include "d2d/net.hpp"
#include "d2d/training.hpp"
#include "support.hpp"

using namespace d2d;
using d2d::test::normal_pdf;
using d2d::test::tiny_batch;
using d2d::test::tiny_config;

namespace {

ModelParams tiny_params(const NetConfig& cfg, std::uint64_t perturb_seed = 0) {
  const Dataset data = d2d::test::small_dataset(200, 0.05, 9);
  ModelParams p = init_params(cfg, Normaliser::from_observations(data.train().observations,
                                                                  cfg.n_centres));
  if (perturb_seed != 0) {
    std::mt19937_64 rng(perturb_seed);
    std::normal_distribution<double> n(0.0, 0.2);
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] += n(rng);
  }
  return p;
}

DistributionWindow random_window(std::mt19937_64& rng, int L) {
  DistributionWindow w;
  for (int h = 0; h < L; ++h) {
    w.push_back({d2d::test::random_mixture(rng, 5, 15.0), d2d::test::random_mixture(rng, 5, 15.0),
                 d2d::test::random_mixture(rng, 5, 15.0)});
  }
  return w;
}

void expect_valid(const MarginalSet& m) {
  ASSERT_EQ(m.size(), 3u);
  for (const auto& mix : m) {
    double total = 0.0;
    for (const auto& c : mix.components()) {
      EXPECT_GT(c.stddev, 0.0);
      EXPECT_TRUE(std::isfinite(c.mean));
      EXPECT_GE(c.weight, 0.0);
      total += c.weight;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

}  // namespace

TEST(ParameterCount, AffineMapArithmetic) {
  for (int H : {8, 16}) {
    NetConfig c;
    c.hidden_size = H;
    const std::size_t d = 3, nc = 50, M = 5;
    const std::size_t expected = 4 * (H * (d * nc) + H * H + H) + d * (3 * M * H + 3 * M) + d;
    EXPECT_EQ(parameter_count(c), expected);
    EXPECT_EQ(init_params(c).size(), expected);
  }
}

TEST(InitParams, DeterministicGivenSeed) {
  NetConfig c;
  c.hidden_size = 16;
  EXPECT_EQ(init_params(c), init_params(c));
  NetConfig other = c;
  other.seed = 2;
  EXPECT_NE(init_params(c).values, init_params(other).values);
  const ModelParams p = init_params(c);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(p.bandwidth(j), 0.5);
}

TEST(InitParams, InitialStddevsAreModerate) {
  NetConfig c;
  const Dataset data = d2d::test::small_dataset(400, 0.04, 2);
  const ModelParams p =
      init_params(c, Normaliser::from_observations(data.train().observations, c.n_centres));
  const auto windows = build_training_windows(data.validation(), c, 1);
  for (std::size_t i = 0; i < windows.size(); i += 17) {
    const MarginalSet out = forward(p, windows[i].window);
    for (int j = 0; j < 3; ++j) {
      for (const auto& comp : out[j].components()) {
        const double normalised = comp.stddev / p.norm.scale[j];
        EXPECT_GE(normalised, 0.05);
        EXPECT_LE(normalised, 5.0);
      }
    }
  }
}

TEST(Forward, OutputsValidForRandomParams) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  const NetConfig cfg = tiny_config(3);
  ModelParams p = tiny_params(cfg);
  for (int t = 0; t < 1000; ++t) {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values[i] = u(rng);
    expect_valid(forward(p, random_window(rng, cfg.window_len)));
  }
}

TEST(Forward, ComponentOrderDoesNotMatter) {
  // Weights are multiples of 1/16 so that renormalisation is exact in any order.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto dyadic_mixture = [&]() {
    std::vector<GaussianComponent> comps;
    int left = 16;
    while (left > 0) {
      const int units = comps.size() == 4 ? left : 1 + static_cast<int>(u(rng) * left);
      comps.push_back({units / 16.0, 15.0 * (2 * u(rng) - 1), 0.05 + 2.0 * u(rng)});
      left -= units;
    }
    return comps;
  };
  const NetConfig cfg = tiny_config(3);
  const ModelParams p = tiny_params(cfg, 6);
  for (int t = 0; t < 50; ++t) {
    DistributionWindow w, shuffled;
    for (int h = 0; h < cfg.window_len; ++h) {
      MarginalSet a, b;
      for (int j = 0; j < 3; ++j) {
        auto comps = dyadic_mixture();
        a.emplace_back(comps);
        std::shuffle(comps.begin(), comps.end(), rng);
        b.emplace_back(comps);
      }
      w.push_back(a);
      shuffled.push_back(b);
    }
    EXPECT_EQ(forward(p, w), forward(p, shuffled));
  }
}

TEST(Forward, NonFiniteParameterReportsStep) {
  const NetConfig cfg = tiny_config();
  ModelParams p = tiny_params(cfg);
  p.values[p.layout().w_input] = NAN;
  const auto batch = tiny_batch(cfg, 1, 1);
  try {
    (void)forward(p, batch[0].window);
    FAIL() << "expected a numerical failure";
  } catch (const NumericalFailureError& e) {
    EXPECT_EQ(e.step(), 1);
    EXPECT_EQ(e.module(), "net");
  }
}

TEST(Loss, SingleDominantComponentReducesToGaussian) {
  const NetConfig cfg = tiny_config();
  ModelParams p = tiny_params(cfg, 8);
  const ParamLayout lay = p.layout();
  const int M = cfg.n_components;
  for (int j = 0; j < 3; ++j) {
    // Raw weight bias of component 1 pushes its softmax weight to exactly 0.
    p.values[lay.head_b[j] + 1] = -2000.0;
    for (int h = 0; h < cfg.hidden_size; ++h) p.values[lay.head_w[j] + h * 3 * M + 1] = 0.0;
  }
  const auto batch = tiny_batch(cfg, 1, 1);
  const MarginalSet out = forward(p, batch[0].window);
  double expected = 0.0;
  for (int j = 0; j < 3; ++j) {
    ASSERT_EQ(out[j][1].weight, 0.0);
    expected -= std::log(normal_pdf(batch[0].outcomes[0][j], out[j][0].mean, out[j][0].stddev));
  }
  EXPECT_NEAR(loss_and_gradient(p, batch, 1).loss, expected, 1e-10);
}

TEST(Loss, DuplicatingAnItemKeepsTheMean) {
  const NetConfig cfg = tiny_config();
  const ModelParams p = tiny_params(cfg, 3);
  auto batch = tiny_batch(cfg, 2, 1);
  const double one = loss_and_gradient(p, batch, 2).loss;
  batch.push_back(batch[0]);
  EXPECT_NEAR(loss_and_gradient(p, batch, 2).loss, one, 1e-12 * std::abs(one));
}

TEST(Loss, TwoStepsEqualManualRecursion) {
  const NetConfig cfg = tiny_config(3);
  const ModelParams p = tiny_params(cfg, 5);
  const auto batch = tiny_batch(cfg, 2, 1);
  const auto& ex = batch[0];
  const MarginalSet first = forward(p, ex.window);
  DistributionWindow next(ex.window.begin() + 1, ex.window.end());
  next.push_back(first);
  const MarginalSet second = forward(p, next);
  double manual = 0.0;
  for (int j = 0; j < 3; ++j) {
    manual -= mixture_log_density(first[j], ex.outcomes[0][j]);
    manual -= mixture_log_density(second[j], ex.outcomes[1][j]);
  }
  EXPECT_NEAR(loss_and_gradient(p, batch, 2).loss, manual, 1e-12 * std::abs(manual));
}

TEST(Loss, ExtendedPrecisionReferenceAgrees) {
  const NetConfig cfg = tiny_config(3);
  for (int K = 1; K <= 4; ++K) {
    const ModelParams p = tiny_params(cfg, 40 + K);
    const auto batch = tiny_batch(cfg, K, 7);
    const double loss = loss_and_gradient(p, batch, K).loss;
    EXPECT_NEAR(static_cast<double>(reference_loss(p, batch, K)), loss, 1e-12 * std::abs(loss));
  }
}

TEST(Loss, IndependentAccumulationOfScores) {
  const NetConfig cfg = tiny_config(3);
  const ModelParams p = tiny_params(cfg, 12);
  const int K = 4;
  const auto batch = tiny_batch(cfg, K, 10);
  double total = 0.0;
  for (const auto& ex : batch) {
    const auto path = rollout(p, ex.window, K);
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < 3; ++j) total -= mixture_log_density(path[k][j], ex.outcomes[k][j]);
    }
  }
  const double expected = total / static_cast<double>(batch.size());
  EXPECT_NEAR(loss_and_gradient(p, batch, K).loss, expected, 1e-12 * std::abs(expected));
  const auto scores = rollout_scores(p, batch, K);
  double from_scores = 0.0;
  for (const auto& row : scores) {
    for (double v : row) from_scores += v;
  }
  EXPECT_NEAR(from_scores / batch.size(), expected, 1e-12 * std::abs(expected));
}

TEST(Loss, TooFewOutcomesIsDomainError) {
  const NetConfig cfg = tiny_config();
  const ModelParams p = tiny_params(cfg);
  const auto batch = tiny_batch(cfg, 1, 2);
  EXPECT_THROW(loss_and_gradient(p, batch, 2), DomainError);
}

TEST(Loss, PureAndDeterministic) {
  const NetConfig cfg = tiny_config(3);
  const ModelParams p = tiny_params(cfg, 2);
  const auto batch = tiny_batch(cfg, 3, 150);
  const LossResult a = loss_and_gradient(p, batch, 3);
  const LossResult b = loss_and_gradient(p, batch, 3);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(Loss, StepCapTruncatesAndDropsGradient) {
  const NetConfig cfg = tiny_config();
  const ModelParams p = tiny_params(cfg, 2);
  const auto batch = tiny_batch(cfg, 1, 4);
  LossOptions opts;
  opts.step_loss_cap = -1e9;
  const LossResult r = loss_and_gradient(p, batch, 1, opts);
  EXPECT_EQ(r.n_truncated, batch.size());
  EXPECT_DOUBLE_EQ(r.loss, -1e9);
  EXPECT_EQ(r.grad.norm(), 0.0);
}

TEST(CompareGradient, QuadraticToyIsExact) {
  Eigen::VectorXd a(5), b(5), x(5);
  a << 1.0, -2.0, 0.5, 3.0, 0.0;
  b << 0.1, 0.2, -0.3, 0.0, 0.0;
  x << 0.7, -1.1, 2.0, 0.4, 9.0;
  auto f = [&](const Eigen::VectorXd& v) {
    return (a.array() * v.array().square() + b.array() * v.array()).sum();
  };
  const Eigen::VectorXd g = (2.0 * a.array() * x.array() + b.array()).matrix();
  const GradientCheck c = compare_gradient(f, x, g, 1e-3);
  EXPECT_LT(c.max_relative_error, 1e-9);
  EXPECT_EQ(c.excluded, 1u);  // the last coordinate does not enter f
  EXPECT_EQ(c.checked, 4u);
}

class GradientCheckTiny : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheckTiny, MatchesCentralDifferences) {
  const int K = GetParam();
  const NetConfig cfg = tiny_config(2);
  const ModelParams p = tiny_params(cfg, 31);
  const auto batch = tiny_batch(cfg, K, 3);
  const GradientCheck c = check_gradient(p, batch, K);
  EXPECT_GT(c.checked, p.size() / 2);
  EXPECT_LT(c.max_relative_error, 1e-4) << "worst index " << c.worst_index;
}

INSTANTIATE_TEST_SUITE_P(Leads, GradientCheckTiny, ::testing::Values(1, 2, 3));

TEST(Normaliser, FromObservations) {
  const Dataset data = d2d::test::small_dataset(500, 0.01, 3);
  const auto& obs = data.train().observations;
  const Normaliser n = Normaliser::from_observations(obs, 7);
  for (int j = 0; j < 3; ++j) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : obs) {
      lo = std::min(lo, (s[j] - n.mean[j]) / n.scale[j]);
      hi = std::max(hi, (s[j] - n.mean[j]) / n.scale[j]);
    }
    ASSERT_EQ(n.centres[j].size(), 7u);
    EXPECT_NEAR(n.centres[j].front(), lo, 1e-12);
    EXPECT_NEAR(n.centres[j].back(), hi, 1e-12);
  }
}
