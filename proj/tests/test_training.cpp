#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "d2d/error.hpp"
#include "d2d/io.hpp"
#include "d2d/training.hpp"
#include "support.hpp"

using namespace d2d;

namespace {

NetConfig small_net() {
  NetConfig c;
  c.window_len = 3;
  c.n_centres = 10;
  c.n_components = 2;
  c.hidden_size = 8;
  c.seed = 4;
  return c;
}

TrainConfig quick_train(Strategy s) {
  TrainConfig t;
  t.strategy = s;
  t.max_epochs_per_stage = 4;
  t.patience = 10;
  t.batch_size = 32;
  t.seed = 6;
  return t;
}

TrainingData toy_data(const NetConfig& net, int horizon) {
  // 200 training windows.
  const Dataset d = make_dataset(200 + net.window_len + horizon - 1, 120, 50, 0.04, 12,
                                 LorenzParams{});
  return prepare_training_data(d, net, horizon);
}

}  // namespace

TEST(TrainingWindows, Counting) {
  const NetConfig net = small_net();
  const auto s = make_observation_series(net.window_len + 6, 0.01, 1, LorenzParams{});
  EXPECT_EQ(build_training_windows(s, net, 6).size(), 1u);
  EXPECT_EQ(build_training_windows(s, net, 5).size(), 2u);
  EXPECT_THROW(build_training_windows(s, net, 7), DomainError);
}

TEST(TrainingWindows, GaussianEntriesAsIdenticalComponents) {
  NetConfig net = small_net();
  net.n_components = 4;
  const auto s = make_observation_series(40, 0.02, 2, LorenzParams{});
  const auto w = build_training_windows(s, net, 3);
  const auto& ex = w[5];
  ASSERT_EQ(ex.window.size(), static_cast<std::size_t>(net.window_len));
  ASSERT_EQ(ex.outcomes.size(), 3u);
  for (int h = 0; h < net.window_len; ++h) {
    for (int j = 0; j < 3; ++j) {
      const auto& mix = ex.window[h][j];
      ASSERT_EQ(mix.size(), 4u);
      for (const auto& c : mix.components()) {
        EXPECT_EQ(c, mix[0]);
        EXPECT_DOUBLE_EQ(c.weight, 0.25);
        EXPECT_EQ(c.mean, s.observations[5 + h][j]);
        EXPECT_EQ(c.stddev, s.noise_stddev[j]);
      }
    }
  }
  EXPECT_EQ(ex.outcomes[0], s.observations[5 + net.window_len]);
}

TEST(TrainingWindows, ZeroNoiseUsesFloor) {
  const NetConfig net = small_net();
  const auto s = make_observation_series(20, 0.0, 3, LorenzParams{});
  const auto w = build_training_windows(s, net, 1);
  for (const auto& set : w[0].window) {
    for (const auto& mix : set) EXPECT_EQ(mix[0].stddev, kSigmaMin);
  }
}

TEST(Schedule, Doubling) {
  EXPECT_EQ(doubling_schedule(16), (std::vector<int>{1, 2, 4, 8, 16}));
  EXPECT_EQ(doubling_schedule(1), (std::vector<int>{1}));
  EXPECT_EQ(doubling_schedule(20), (std::vector<int>{1, 2, 4, 8, 16, 20}));
  TrainConfig t;
  t.k_max = 16;
  EXPECT_EQ(t.stages(), doubling_schedule(16));
}

TEST(TrainConfig, Violations) {
  TrainConfig t;
  EXPECT_TRUE(t.violations().empty());
  t.k_max = 4;
  t.curriculum_stages = {1, 4, 2};
  const auto v = t.violations();
  ASSERT_FALSE(v.empty());
  EXPECT_NE(std::find_if(v.begin(), v.end(),
                         [](const std::string& s) {
                           return s.find("stages not increasing") != std::string::npos;
                         }),
            v.end());
  TrainConfig u;
  u.beta1 = 1.0;
  u.grad_clip_norm = 0.0;
  EXPECT_EQ(u.violations().size(), 2u);
}

TEST(Optimiser, ClipBoundsTheNorm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 10);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd g(50);
    for (auto& v : g) v = n(rng);
    const double before = g.norm();
    const double reported = clip_gradient(g, 5.0);
    EXPECT_EQ(reported, before);
    EXPECT_LE(g.norm(), 5.0 + 1e-12);
  }
  Eigen::VectorXd small = Eigen::VectorXd::Constant(3, 0.1);
  const Eigen::VectorXd copy = small;
  clip_gradient(small, 5.0);
  EXPECT_EQ(small, copy);
}

TEST(Optimiser, AdamFirstStepsMatchHandComputation) {
  AdamOptimizer opt(2, 0.1, 0.9, 0.999, 1e-8);
  Eigen::VectorXd x(2), g(2);
  x << 1.0, -1.0;
  g << 2.0, -0.5;
  opt.step(x, g);
  // Bias-corrected first step moves each coordinate by lr * g / (|g| + eps').
  EXPECT_NEAR(x[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_NEAR(x[1], -1.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  // Second step with the same gradient, moments written out explicitly.
  opt.step(x, g);
  for (int i = 0; i < 2; ++i) {
    const double m = (0.1 * g[i] + 0.9 * 0.1 * g[i]);
    const double v = (0.001 * g[i] * g[i] + 0.999 * 0.001 * g[i] * g[i]);
    const double mhat = m / (1 - 0.81);
    const double vhat = v / (1 - 0.999 * 0.999);
    const double first = (i == 0 ? 1.0 : -1.0) - 0.1 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(x[i], first - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-12);
  }
}

TEST(Optimiser, ReseedZeroBandwidth) {
  ModelParams p = init_params(small_net());
  p.values[p.layout().raw_bandwidth + 1] = 0.0;
  reseed_zero_bandwidths(p);
  EXPECT_EQ(p.values[p.layout().raw_bandwidth + 1], 1e-3);
  EXPECT_EQ(p.values[p.layout().raw_bandwidth], 0.5);
}

TEST(TrainDirect, LossDecreases) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 1);
  ASSERT_EQ(data.train.size(), 200u);
  const TrainConfig cfg = quick_train(Strategy::direct);
  const auto examples = direct_examples(data.train, 1);
  const double initial = loss_and_gradient(init_params(net, data.norm), examples, 1).loss;
  const TrainResult r = train_direct(data, cfg, net);
  EXPECT_LT(loss_and_gradient(r.params, examples, 1).loss, initial);
  for (const auto& e : r.report.epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
  for (int j = 0; j < 3; ++j) EXPECT_GT(r.params.bandwidth(j), 0.0);
}

TEST(TrainDirect, ZeroLearningRateLeavesParamsUnchanged) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 2);
  TrainConfig cfg = quick_train(Strategy::direct);
  cfg.learning_rate = 0.0;
  cfg.target_lead = 2;
  const TrainResult r = train_direct(data, cfg, net);
  EXPECT_EQ(r.params.values, init_params(net, data.norm).values);
}

TEST(TrainDirect, ReproducibleGivenSeed) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 1);
  const TrainConfig cfg = quick_train(Strategy::direct);
  const TrainResult a = train_direct(data, cfg, net);
  const TrainResult b = train_direct(data, cfg, net);
  EXPECT_EQ(a.params, b.params);
  EXPECT_TRUE(a.report.same_results(b.report));
}

TEST(TrainIterative, SingleStageEqualsDirectLeadOne) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 1);
  TrainConfig it = quick_train(Strategy::iterative);
  it.k_max = 1;
  it.curriculum_stages = {1};
  const TrainResult a = train_iterative(data, it, net);
  const TrainResult b = train_direct(data, quick_train(Strategy::direct), net);
  ASSERT_EQ(a.report.epochs.size(), b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
    EXPECT_EQ(a.report.epochs[i].train_loss, b.report.epochs[i].train_loss);
    EXPECT_EQ(a.report.epochs[i].validation_score, b.report.epochs[i].validation_score);
  }
  EXPECT_EQ(a.params.values, b.params.values);
}

TEST(TrainIterative, CurriculumAndWarmStart) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 2);
  TrainConfig cfg = quick_train(Strategy::iterative);
  cfg.k_max = 2;
  cfg.max_epochs_per_stage = 6;
  const TrainResult r = train_iterative(data, cfg, net);
  ASSERT_EQ(r.report.stages.size(), 2u);
  EXPECT_EQ(r.report.stages[0].stage, 1);
  EXPECT_EQ(r.report.stages[1].stage, 2);
  ASSERT_EQ(r.report.stages[1].validation_by_lead.size(), 2u);
  EXPECT_LE(r.report.stages[1].validation_by_lead[0],
            r.report.stages[0].validation_by_lead[0] + 0.5);
  EXPECT_EQ(r.report.loss_cap, cfg.first_epoch_loss_cap);
  EXPECT_FALSE(r.report.selected_checkpoint.empty());
  for (int j = 0; j < 3; ++j) EXPECT_GT(r.params.bandwidth(j), 0.0);
}

TEST(TrainIterative, ProgressHookSeesEveryEpoch) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 1);
  TrainConfig cfg = quick_train(Strategy::iterative);
  cfg.k_max = 1;
  std::vector<EpochRecord> seen;
  cfg.on_epoch = [&](const EpochRecord& e) { seen.push_back(e); };
  const TrainResult r = train_iterative(data, cfg, net);
  EXPECT_EQ(seen, r.report.epochs);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const NetConfig net = small_net();
  const TrainingData data = toy_data(net, 1);
  ModelParams p = init_params(net, data.norm);
  p.values[3] = std::nextafter(0.1, 1.0);
  const auto path = std::filesystem::temp_directory_path() / "d2d_ckpt_test.bin";
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  EXPECT_EQ(p, q);
  const auto batch = direct_examples(data.validation, 1);
  EXPECT_EQ(rollout_scores(p, batch, 1), rollout_scores(q, batch, 1));
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const ModelParams p = init_params(small_net());
  const std::string bytes = checkpoint_bytes(p);
  std::string wrong_version = bytes;
  wrong_version[8] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(checkpoint_from_bytes(wrong_version), VersionError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(checkpoint_from_bytes(bad_magic), FormatError);
  EXPECT_THROW(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(checkpoint_from_bytes(bytes.substr(0, 12)), FormatError);
  EXPECT_THROW(checkpoint_from_bytes(bytes + "x"), FormatError);
  EXPECT_EQ(checkpoint_from_bytes(bytes), p);
}
