#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "d2d/config.hpp"
#include "d2d/eval.hpp"
#include "d2d/forecast.hpp"
#include "d2d/io.hpp"
#include "d2d/rng.hpp"
#include "d2d/training.hpp"

namespace d2d::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kForecastChunk = 256;
constexpr const char* kManifest = "manifest.json";

// Exclusive marker file held for the lifetime of one command.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error("cli", "output directory is locked by another run (" + path_.string() + ")");
    }
  }
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Context {
  std::string command;
  ExperimentConfig cfg;
  fs::path dir;
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> written;

  fs::path path(const std::string& rel) const { return dir / rel; }

  void write(const std::string& rel, std::string_view bytes) {
    const fs::path p = path(rel);
    fs::create_directories(p.parent_path());
    write_file(p, bytes);
    written.push_back(rel);
  }
};

std::string dataset_table() { return "data/dataset.csv"; }
std::string dataset_meta() { return "data/dataset.meta.json"; }
std::string checkpoint_name(const std::string& model) { return "models/" + model + ".ckpt"; }
std::string direct_name(int lead) { return "direct_lead" + std::to_string(lead); }

Dataset load_dataset(const Context& ctx) {
  const fs::path table = ctx.path(dataset_table());
  const fs::path meta = ctx.path(dataset_meta());
  if (!fs::exists(table) || !fs::exists(meta)) {
    throw Error("cli", "no dataset in " + ctx.dir.string() + "; run generate-data first");
  }
  return read_dataset(table, meta);
}

ModelParams load_model(const Context& ctx, const std::string& model) {
  const fs::path p = ctx.path(checkpoint_name(model));
  if (!fs::exists(p)) {
    throw Error("cli", "missing checkpoint " + p.string() + "; run train first");
  }
  return load_checkpoint(p);
}

DirectModelBank load_bank(const Context& ctx) {
  DirectModelBank bank;
  for (int lead : ctx.cfg.eval.direct_leads) {
    if (fs::exists(ctx.path(checkpoint_name(direct_name(lead))))) {
      bank.add(lead, load_model(ctx, direct_name(lead)));
    }
  }
  return bank;
}

// Window end indices o with a full history (o >= L - 1) and an outcome at
// every lead up to K (o + K < n); evenly thinned to at most `cap` when cap > 0.
std::vector<std::size_t> admissible_origins(std::size_t n, int window_len, int K,
                                            std::size_t cap) {
  const auto first = static_cast<std::size_t>(window_len - 1);
  if (n <= first + static_cast<std::size_t>(K)) return {};
  const std::size_t count = n - static_cast<std::size_t>(K) - first;
  std::vector<std::size_t> out;
  if (cap == 0 || cap >= count) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(first + i);
  } else {
    for (std::size_t i = 0; i < cap; ++i) out.push_back(first + i * count / cap);
  }
  return out;
}

std::vector<StateVec> thinned(const std::vector<StateVec>& values, std::size_t cap) {
  if (cap == 0 || cap >= values.size()) return values;
  std::vector<StateVec> out;
  for (std::size_t i = 0; i < cap; ++i) out.push_back(values[i * values.size() / cap]);
  return out;
}

std::string table_string(const ScoreTable& t) {
  std::ostringstream s;
  write_score_table(s, t);
  return s.str();
}

std::string curve_string(const SkillCurve& c) {
  std::ostringstream s;
  write_skill_curve(s, c);
  return s.str();
}

std::string report_table(const TrainReport& r) {
  std::ostringstream s;
  s << "stage,epoch,train_loss,n_truncated,validation_score\n";
  for (const auto& e : r.epochs) {
    s << e.stage << ',' << e.epoch << ',' << format_double(e.train_loss) << ','
      << e.n_truncated << ',' << format_double(e.validation_score) << '\n';
  }
  return s.str();
}

std::string report_meta(const TrainReport& r) {
  json j;
  j["strategy"] = to_string(r.strategy);
  j["selected_checkpoint"] = r.selected_checkpoint;
  j["loss_cap"] = format_double(r.loss_cap);
  j["stages"] = json::array();
  for (const auto& st : r.stages) {
    json v = json::array();
    for (double x : st.validation_by_lead) v.push_back(format_double(x));
    j["stages"].push_back({{"stage", st.stage}, {"best_epoch", st.best_epoch},
                           {"validation_by_lead", v}});
  }
  return j.dump(2) + "\n";
}

void update_manifest(const Context& ctx) {
  const fs::path p = ctx.path(kManifest);
  json m = json::object();
  if (fs::exists(p)) {
    try {
      m = json::parse(read_file(p));
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  m["versions"] = {{"d2d", D2D_VERSION},
                   {"checkpoint_format", static_cast<int>(kCheckpointVersion)},
                   {"dataset_format", kDatasetFormatVersion}};
  const auto& c = ctx.cfg;
  m["commands"][ctx.command] = {
      {"config_hash", config_hash(c)},
      {"seeds",
       {{"data", c.data.seed},
        {"init", c.net.seed},
        {"train", c.train.seed},
        {"bootstrap", c.eval.bootstrap_seed},
        {"ensemble", c.eval.ensemble_seed},
        {"pdf_grid", c.pdf_grid.seed}}}};
  for (const auto& rel : ctx.written) m["files"][rel] = file_hash(ctx.path(rel));
  write_file(p, m.dump(2) + "\n");
}

// --- commands ---------------------------------------------------------------

void generate_data(Context& ctx) {
  const auto& c = ctx.cfg;
  Stopwatch sw;
  const Dataset data = make_dataset(c.data.n_train, c.data.n_validation, c.data.n_test,
                                    c.data.noise_level, c.data.seed, c.lorenz);
  fs::create_directories(ctx.path("data"));
  write_dataset(data, ctx.path(dataset_table()), ctx.path(dataset_meta()));
  ctx.written.push_back(dataset_table());
  ctx.written.push_back(dataset_meta());
  ctx.err << "generate-data: " << data.series.size() << " observations in " << sw.seconds()
          << " s\n";
}

void save_trained(Context& ctx, const std::string& name, const TrainResult& res) {
  fs::create_directories(ctx.path("models"));
  ctx.write(checkpoint_name(name), checkpoint_bytes(res.params));
  ctx.write("models/" + name + ".report.csv", report_table(res.report));
  ctx.write("models/" + name + ".report.json", report_meta(res.report));
}

void train_command(Context& ctx) {
  const auto& c = ctx.cfg;
  const Dataset data = load_dataset(ctx);
  TrainConfig tc = c.train;
  std::ostream& err = ctx.err;
  tc.on_epoch = [&err](const EpochRecord& e) {
    err << "  stage " << e.stage << " epoch " << e.epoch << ": train " << e.train_loss
        << " val " << e.validation_score;
    if (e.n_truncated > 0) err << " (" << e.n_truncated << " capped)";
    err << '\n';
  };
  if (tc.strategy == Strategy::iterative) {
    Stopwatch sw;
    const TrainingData td = prepare_training_data(data, c.net, tc.k_max);
    const TrainResult res = train_iterative(td, tc, c.net);
    save_trained(ctx, "iterative", res);
    err << "train: iterative model to K=" << tc.k_max << " in " << sw.seconds() << " s\n";
    return;
  }
  const int horizon = *std::max_element(c.eval.direct_leads.begin(), c.eval.direct_leads.end());
  const TrainingData td = prepare_training_data(data, c.net, horizon);
  for (int lead : c.eval.direct_leads) {
    Stopwatch sw;
    tc.target_lead = lead;
    const TrainResult res = train_direct(td, tc, c.net);
    save_trained(ctx, direct_name(lead), res);
    err << "train: direct model for lead " << lead << " in " << sw.seconds() << " s\n";
  }
}

void forecast_command(Context& ctx) {
  const auto& c = ctx.cfg;
  const Dataset data = load_dataset(ctx);
  const ObservationSeries test = data.test();
  const ModelParams params = load_model(ctx, "iterative");
  const DirectModelBank bank = load_bank(ctx);
  for (std::size_t o : c.pdf_grid.origins) {
    const DistributionWindow window = gaussian_window(test, o, params.config);
    std::ostringstream s;
    write_forecast_run(s, iterate_forecast(params, window, c.eval.lead_max));
    ctx.write("forecasts/iterative_origin" + std::to_string(o) + ".csv", s.str());
    if (!bank.empty()) {
      std::ostringstream g;
      write_forecast_run(g, greedy_compose(bank, window, c.eval.lead_max));
      ctx.write("forecasts/direct_origin" + std::to_string(o) + ".csv", g.str());
    }
  }
}

struct EvalSetup {
  Dataset data;
  ObservationSeries test;
  std::vector<std::size_t> ids;
  std::vector<std::vector<StateVec>> outcomes;
  std::array<DressedDensity, kStateDim> clim;
  ScoreTable clim_scores;
};

EvalSetup eval_setup(const Context& ctx) {
  const auto& c = ctx.cfg;
  Dataset data = load_dataset(ctx);
  ObservationSeries test = data.test();
  const int K = c.eval.lead_max;
  auto ids = admissible_origins(test.size(), c.net.window_len, K, c.eval.max_test_origins);
  if (ids.empty()) throw Error("cli", "test split too short for eval.lead_max");
  std::vector<std::vector<StateVec>> outcomes(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (int k = 1; k <= K; ++k) {
      outcomes[i].push_back(test.observations[ids[i] + static_cast<std::size_t>(k)]);
    }
  }
  const ObservationSeries train = data.train();
  const std::vector<StateVec> val =
      thinned(data.validation().observations, c.eval.max_validation_origins);
  auto clim = fit_climatology(train.observations, val);
  ScoreTable clim_scores = score_climatology(clim, ids, outcomes);
  return {std::move(data), std::move(test), std::move(ids), std::move(outcomes),
          std::move(clim), std::move(clim_scores)};
}

// Scores forecasts produced chunk by chunk; produce(windows) returns, per
// window, the marginal sets at leads 1..K.
template <class Produce>
ScoreTable score_model(const EvalSetup& s, const NetConfig& net, int K, Produce&& produce) {
  ScoreTable table(s.ids, K, static_cast<int>(kStateDim));
  for (std::size_t begin = 0; begin < s.ids.size(); begin += kForecastChunk) {
    const std::size_t end = std::min(s.ids.size(), begin + kForecastChunk);
    std::vector<DistributionWindow> windows;
    for (std::size_t i = begin; i < end; ++i) windows.push_back(gaussian_window(s.test, s.ids[i], net));
    const std::vector<std::vector<MarginalSet>> f = produce(windows);
    for (std::size_t i = begin; i < end; ++i) {
      for (int k = 1; k <= K; ++k) {
        for (std::size_t j = 0; j < kStateDim; ++j) {
          table.set(i, k, static_cast<int>(j),
                    log_score(f[i - begin][static_cast<std::size_t>(k - 1)][j],
                              s.outcomes[i][static_cast<std::size_t>(k - 1)][j]));
        }
      }
    }
  }
  return table;
}

void emit_skill(Context& ctx, const std::string& prefix, const std::string& name,
                const ScoreTable& model, const ScoreTable& clim) {
  const auto& e = ctx.cfg.eval;
  ctx.write(prefix + "/scores_" + name + ".csv", table_string(model));
  const SkillCurve curve = skill_curve(model, clim, e.n_resamples, e.level, e.bootstrap_seed);
  ctx.write(prefix + "/skill_" + name + ".csv", curve_string(curve));
  if (model.n_floored() > 0) {
    ctx.err << "warning: " << model.n_floored() << " " << name << " scores hit the floor\n";
  }
}

void evaluate_command(Context& ctx) {
  const auto& c = ctx.cfg;
  const int K = c.eval.lead_max;
  Stopwatch sw;
  const EvalSetup s = eval_setup(ctx);
  ctx.write("eval/scores_climatology.csv", table_string(s.clim_scores));
  {
    std::ostringstream d;
    d << "variable,stddev\n";
    static constexpr const char* kNames[] = {"x", "y", "z"};
    for (std::size_t j = 0; j < kStateDim; ++j) {
      d << kNames[j] << ',' << format_double(s.clim[j].stddev()) << '\n';
    }
    ctx.write("eval/climatology_dressing.csv", d.str());
  }
  ctx.err << "evaluate: climatology over " << s.ids.size() << " origins in " << sw.seconds()
          << " s\n";

  const ModelParams params = load_model(ctx, "iterative");
  const ScoreTable iter = score_model(s, params.config, K, [&](const auto& windows) {
    return rollout_batch(params, windows, K);
  });
  emit_skill(ctx, "eval", "iterative", iter, s.clim_scores);
  ctx.err << "evaluate: iterative model in " << sw.seconds() << " s\n";

  const DirectModelBank bank = load_bank(ctx);
  if (bank.empty()) return;
  const ScoreTable direct = score_model(s, params.config, K, [&](const auto& windows) {
    std::vector<std::vector<MarginalSet>> out(windows.size());
    for (int k = 1; k <= K; ++k) {
      auto at_k = greedy_compose_batch(bank, windows, k);
      for (std::size_t i = 0; i < windows.size(); ++i) out[i].push_back(std::move(at_k[i]));
    }
    return out;
  });
  emit_skill(ctx, "eval", "direct", direct, s.clim_scores);
  ctx.err << "evaluate: greedy composition of direct models in " << sw.seconds() << " s\n";
}

void benchmark_command(Context& ctx) {
  const auto& c = ctx.cfg;
  Stopwatch sw;
  const EvalSetup s = eval_setup(ctx);
  const ObservationSeries val = s.data.validation();
  const auto val_ids =
      admissible_origins(val.size(), c.net.window_len, c.eval.lead_max, c.eval.max_validation_origins);
  PerfectModelSetup setup;
  setup.n_members = c.eval.n_members;
  setup.lead_max = c.eval.lead_max;
  setup.seed = c.eval.ensemble_seed;
  for (std::size_t j = 0; j < kStateDim; ++j) {
    const auto& obs = s.data.train().observations;
    double mean = 0.0, var = 0.0;
    for (const auto& x : obs) mean += x[j];
    mean /= static_cast<double>(obs.size());
    for (const auto& x : obs) var += (x[j] - mean) * (x[j] - mean);
    setup.scale[j] = std::sqrt(var / static_cast<double>(obs.size() - 1));
  }
  const PerfectModelResult r =
      perfect_model_benchmark(s.test, s.ids, val, val_ids, c.lorenz, setup);
  emit_skill(ctx, "benchmark", "perfect", r.scores, s.clim_scores);
  std::ostringstream d;
  d << "lead,variable,stddev\n";
  static constexpr const char* kNames[] = {"x", "y", "z"};
  for (std::size_t k = 0; k < r.dressing_stddev.size(); ++k) {
    for (std::size_t j = 0; j < kStateDim; ++j) {
      d << k + 1 << ',' << kNames[j] << ',' << format_double(r.dressing_stddev[k][j]) << '\n';
    }
  }
  ctx.write("benchmark/dressing.csv", d.str());
  ctx.err << "benchmark: " << setup.n_members << "-member perfect model in " << sw.seconds()
          << " s\n";
}

void export_pdf_grid(Context& ctx) {
  const auto& g = ctx.cfg.pdf_grid;
  const Dataset data = load_dataset(ctx);
  const ObservationSeries test = data.test();
  const ModelParams params = load_model(ctx, "iterative");
  const auto j = static_cast<std::size_t>(g.variable);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& x : data.train().observations) {
    lo = std::min(lo, x[j]);
    hi = std::max(hi, x[j]);
  }
  const double pad = 0.1 * (hi - lo);
  std::vector<double> grid(g.grid_points);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid[i] = (lo - pad) + (hi - lo + 2 * pad) * static_cast<double>(i) /
                               static_cast<double>(grid.size() - 1);
  }

  for (std::size_t o : g.origins) {
    Stopwatch sw;
    const DistributionWindow window = gaussian_window(test, o, params.config);
    const ForecastRun run = iterate_forecast(params, window, g.horizon);
    const auto reference = reference_pdf_evolution(
        window.back(), static_cast<std::size_t>(g.horizon), g.reference_members, grid,
        mix_seed(g.seed, o), ctx.cfg.lorenz, j);
    std::ostringstream s;
    s << "lead,value,model_density,reference_density\n";
    for (int k = 0; k <= g.horizon; ++k) {
      const GaussianMixture& m =
          k == 0 ? window.back()[j] : run.marginals[static_cast<std::size_t>(k - 1)][j];
      const std::vector<double> model = mixture_pdf_grid(m, grid);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        s << k << ',' << format_double(grid[i]) << ',' << format_double(model[i]) << ','
          << format_double(reference[static_cast<std::size_t>(k)][i]) << '\n';
      }
    }
    ctx.write("pdf_grid/origin" + std::to_string(o) + ".csv", s.str());
    ctx.err << "export-pdf-grid: origin " << o << " in " << sw.seconds() << " s\n";
  }
}

struct Command {
  void (*run)(Context&);
  const char* summary;
};

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{
      {"generate-data", {generate_data, "Simulate Lorenz63 and write the noisy dataset"}},
      {"train", {train_command, "Train the iterative model or the direct-model bank"}},
      {"forecast", {forecast_command, "Write mixture forecasts for the configured origins"}},
      {"evaluate", {evaluate_command, "Score models against climatology on the test split"}},
      {"benchmark", {benchmark_command, "Score the dressed perfect-model ensemble"}},
      {"export-pdf-grid", {export_pdf_grid, "Tabulate model and reference densities on a grid"}}};
  return table;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distribution-to-distribution forecasting on Lorenz63", "d2d"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::vector<std::string> overrides;
  for (const auto& [name, cmd] : commands()) {
    CLI::App* sub = app.add_subcommand(name, cmd.summary);
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_option("--set", overrides, "Override a configuration field (dotted.key=value)")
        ->take_all()
        ->allow_extra_args(false);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, overrides);
  } catch (const ConfigError& e) {
    err << "config error:\n";
    for (const auto& p : e.problems()) err << "  " << p << '\n';
    return kExitConfig;
  }
  const auto violations = validate_config(cfg);
  if (!violations.empty()) {
    err << "config error:\n";
    for (const auto& v : violations) err << "  " << v << '\n';
    return kExitConfig;
  }

  try {
    Context ctx{command, cfg, fs::path(cfg.output_dir), out, err, {}};
    fs::create_directories(ctx.dir);
    DirectoryLock lock(ctx.dir);
    Stopwatch sw;
    ctx.write("config/" + command + ".json", config_to_json(cfg));
    commands().at(command).run(ctx);
    update_manifest(ctx);
    err << command << ": done in " << sw.seconds() << " s\n";
  } catch (const Error& e) {
    err << "error [" << e.module() << "]: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error [cli]: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace d2d::cli
