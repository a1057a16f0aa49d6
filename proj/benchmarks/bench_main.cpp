#include <benchmark/benchmark.h>

#include "d2d/dynamics.hpp"
#include "d2d/gmm.hpp"
#include "d2d/net.hpp"
#include "d2d/training.hpp"

using namespace d2d;

namespace {

struct Setup {
  NetConfig cfg;
  Dataset data;
  TrainingData td;
  ModelParams params;

  explicit Setup(int hidden) : data(make_dataset(400, 200, 200, 0.04, 1, LorenzParams{})) {
    cfg.hidden_size = hidden;
    td = prepare_training_data(data, cfg, 8);
    params = init_params(cfg, td.norm);
  }
};

const Setup& setup(int hidden) {
  static const Setup s16(16), s64(64);
  return hidden == 16 ? s16 : s64;
}

}  // namespace

static void BM_EmbedMixture(benchmark::State& state) {
  const GaussianMixture m({{0.2, -1.0, 0.5}, {0.3, 0.0, 1.0}, {0.1, 2.0, 0.3},
                           {0.25, 4.0, 2.0}, {0.15, -3.0, 0.7}});
  const KernelConfig k = KernelConfig::uniform(-3, 3, 50, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(embed_mixture(m, k));
}
BENCHMARK(BM_EmbedMixture);

static void BM_Forward(benchmark::State& state) {
  const Setup& s = setup(static_cast<int>(state.range(0)));
  const auto& window = s.td.train[0].window;
  for (auto _ : state) benchmark::DoNotOptimize(forward(s.params, window));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64);

static void BM_LossAndGradient(benchmark::State& state) {
  const Setup& s = setup(64);
  const int K = static_cast<int>(state.range(0));
  const std::vector<TrainingExample> batch(s.td.train.begin(), s.td.train.begin() + 64);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(s.params, batch, K));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_LossAndGradient)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_ObservationStep(benchmark::State& state) {
  const LorenzParams p;
  StateVec s{1.0, 1.0, 20.0};
  for (auto _ : state) {
    s = advance_observation_step(s, p);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_ObservationStep);
BENCHMARK_MAIN();
