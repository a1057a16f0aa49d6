#include "d2d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "d2d/error.hpp"
#include "d2d/io.hpp"
#include "d2d/parallel.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr std::size_t kChunk = 64;

std::size_t chunks(std::size_t n) { return (n + kChunk - 1) / kChunk; }

// Log density of equal-weight kernels at distances^2 `d2`, for every stddev in
// `sigmas`; writes floored scores into `out` (accumulated).
void accumulate_dressed_scores(const Eigen::ArrayXd& d2, std::span<const double> sigmas,
                               double* out) {
  const double min_d2 = d2.minCoeff();
  const Eigen::ArrayXd shifted = d2 - min_d2;
  const double log_n = std::log(static_cast<double>(d2.size()));
  for (std::size_t g = 0; g < sigmas.size(); ++g) {
    const double s = sigmas[g];
    const double inv = 1.0 / (2.0 * s * s);
    const double sum = (-shifted * inv).exp().sum();
    const double log_p = -min_d2 * inv + std::log(sum) - log_n - std::log(s) - kLogSqrt2Pi;
    out[g] += score_from_log_density(log_p).value;
  }
}

std::size_t argmin_first(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[best]) best = i;
  }
  return best;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

DressedDensity::DressedDensity(std::vector<double> centres, double stddev)
    : centres_(std::move(centres)), stddev_(stddev) {
  if (centres_.empty()) throw DomainError("eval", "dressed density needs centres");
  if (!(stddev_ > 0.0) || !std::isfinite(stddev_)) {
    throw DomainError("eval", "dressing stddev must be positive");
  }
}

double DressedDensity::log_density(double y) const {
  if (!std::isfinite(y)) throw DomainError("eval", "non-finite outcome");
  const Eigen::Map<const Eigen::ArrayXd> c(centres_.data(),
                                           static_cast<Eigen::Index>(centres_.size()));
  const Eigen::ArrayXd z = (y - c) / stddev_;
  const Eigen::ArrayXd t = -0.5 * z.square();
  const double peak = t.maxCoeff();
  return peak + std::log((t - peak).exp().sum()) -
         std::log(static_cast<double>(centres_.size())) - std::log(stddev_) - kLogSqrt2Pi;
}

LogScore score_from_log_density(double log_density) {
  const double v = -log_density;
  if (v <= kScoreFloor) return {v, false};
  return {kScoreFloor, true};
}

LogScore log_score(const GaussianMixture& density, double outcome) {
  if (!std::isfinite(outcome)) throw DomainError("eval", "non-finite outcome");
  return score_from_log_density(mixture_log_density(density, outcome));
}

LogScore log_score(const DressedDensity& density, double outcome) {
  return score_from_log_density(density.log_density(outcome));
}

std::vector<double> dressing_grid() {
  constexpr int n = 40;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = std::pow(10.0, -3.0 + 4.0 * i / (n - 1));
  }
  return out;
}

DressedDensity fit_dressing(std::span<const double> history,
                            std::span<const double> validation, double scale) {
  if (history.empty()) throw DomainError("eval", "climatology needs history");
  if (!(scale > 0.0)) throw DomainError("eval", "dressing scale must be positive");
  std::vector<double> sigmas = dressing_grid();
  for (auto& s : sigmas) s *= scale;
  if (validation.empty()) {
    return DressedDensity({history.begin(), history.end()}, sigmas[sigmas.size() / 2]);
  }
  const Eigen::Map<const Eigen::ArrayXd> c(history.data(),
                                           static_cast<Eigen::Index>(history.size()));
  const std::size_t n_chunks = chunks(validation.size());
  std::vector<std::vector<double>> partial(n_chunks, std::vector<double>(sigmas.size(), 0.0));
  parallel_for(n_chunks, [&](std::size_t ch) {
    const std::size_t end = std::min(validation.size(), (ch + 1) * kChunk);
    for (std::size_t v = ch * kChunk; v < end; ++v) {
      accumulate_dressed_scores((validation[v] - c).square(), sigmas, partial[ch].data());
    }
  });
  std::vector<double> total(sigmas.size(), 0.0);
  for (const auto& p : partial) {
    for (std::size_t g = 0; g < sigmas.size(); ++g) total[g] += p[g];
  }
  return DressedDensity({history.begin(), history.end()}, sigmas[argmin_first(total)]);
}

std::array<DressedDensity, kStateDim> fit_climatology(
    std::span<const StateVec> history, std::span<const StateVec> validation) {
  if (history.empty()) throw DomainError("eval", "climatology needs history");
  std::vector<DressedDensity> out;
  for (std::size_t j = 0; j < kStateDim; ++j) {
    std::vector<double> h(history.size()), v(validation.size());
    for (std::size_t i = 0; i < history.size(); ++i) h[i] = history[i][j];
    for (std::size_t i = 0; i < validation.size(); ++i) v[i] = validation[i][j];
    double scale = 1.0;
    if (h.size() > 1) {
      const double mean = std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
      double var = 0.0;
      for (double x : h) var += (x - mean) * (x - mean);
      var /= static_cast<double>(h.size() - 1);
      if (var > 0.0) scale = std::sqrt(var);
    }
    out.push_back(fit_dressing(h, v, scale));
  }
  return {out[0], out[1], out[2]};
}

ScoreTable::ScoreTable(std::vector<std::size_t> forecast_ids, int n_leads, int d)
    : ids_(std::move(forecast_ids)), n_leads_(n_leads), d_(d) {
  if (n_leads < 1 || d < 1) throw DomainError("eval", "score table needs leads and variables");
  values_.assign(ids_.size() * static_cast<std::size_t>(n_leads * d), 0.0);
  floored_.assign(values_.size(), 0);
}

std::size_t ScoreTable::index(std::size_t i, int lead, int j) const {
  if (i >= ids_.size() || lead < 1 || lead > n_leads_ || j < 0 || j >= d_) {
    throw DomainError("eval", "score table index out of range");
  }
  return (i * static_cast<std::size_t>(n_leads_) + static_cast<std::size_t>(lead - 1)) *
             static_cast<std::size_t>(d_) +
         static_cast<std::size_t>(j);
}

void ScoreTable::set(std::size_t i, int lead, int j, LogScore s) {
  const std::size_t k = index(i, lead, j);
  values_[k] = s.value;
  floored_[k] = s.floored ? 1 : 0;
}

double ScoreTable::at(std::size_t i, int lead, int j) const { return values_[index(i, lead, j)]; }

bool ScoreTable::floored(std::size_t i, int lead, int j) const {
  return floored_[index(i, lead, j)] != 0;
}

double ScoreTable::summed(std::size_t i, int lead) const {
  double s = 0.0;
  for (int j = 0; j < d_; ++j) s += at(i, lead, j);
  return s;
}

std::size_t ScoreTable::n_floored() const {
  return static_cast<std::size_t>(std::count(floored_.begin(), floored_.end(), 1));
}

std::size_t ScoreTable::n_floored(int lead, int j) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < ids_.size(); ++i) n += floored(i, lead, j) ? 1 : 0;
  return n;
}

ScoreTable score_forecasts(std::span<const std::size_t> ids,
                           const std::vector<std::vector<MarginalSet>>& forecasts,
                           const std::vector<std::vector<StateVec>>& outcomes) {
  if (forecasts.size() != ids.size() || outcomes.size() != ids.size() || ids.empty()) {
    throw DomainError("eval", "forecast, outcome and id counts differ");
  }
  const int n_leads = static_cast<int>(forecasts.front().size());
  const int d = static_cast<int>(forecasts.front().front().size());
  ScoreTable table({ids.begin(), ids.end()}, n_leads, d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (static_cast<int>(forecasts[i].size()) != n_leads ||
        static_cast<int>(outcomes[i].size()) < n_leads) {
      throw DomainError("eval", "ragged forecast or outcome set");
    }
    for (int k = 1; k <= n_leads; ++k) {
      for (int j = 0; j < d; ++j) {
        table.set(i, k, j, log_score(forecasts[i][k - 1][j], outcomes[i][k - 1][j]));
      }
    }
  }
  return table;
}

ScoreTable score_climatology(const std::array<DressedDensity, kStateDim>& clim,
                             std::span<const std::size_t> ids,
                             const std::vector<std::vector<StateVec>>& outcomes) {
  if (outcomes.size() != ids.size() || ids.empty()) {
    throw DomainError("eval", "outcome and id counts differ");
  }
  const int n_leads = static_cast<int>(outcomes.front().size());
  ScoreTable table({ids.begin(), ids.end()}, n_leads, static_cast<int>(kStateDim));
  parallel_for(chunks(ids.size()), [&](std::size_t ch) {
    const std::size_t end = std::min(ids.size(), (ch + 1) * kChunk);
    for (std::size_t i = ch * kChunk; i < end; ++i) {
      for (int k = 1; k <= n_leads; ++k) {
        for (std::size_t j = 0; j < kStateDim; ++j) {
          table.set(i, k, static_cast<int>(j), log_score(clim[j], outcomes[i][k - 1][j]));
        }
      }
    }
  });
  return table;
}

PerfectModelResult perfect_model_benchmark(
    const ObservationSeries& test, std::span<const std::size_t> test_origins,
    const ObservationSeries& validation, std::span<const std::size_t> val_origins,
    const LorenzParams& params, const PerfectModelSetup& setup) {
  if (setup.n_members < 2) throw DomainError("eval", "perfect model needs >= 2 members");
  if (setup.lead_max < 1) throw DomainError("eval", "lead_max must be >= 1");
  if (test_origins.empty()) throw DomainError("eval", "no test origins");
  const int K = setup.lead_max;
  const std::size_t n_mem = setup.n_members;
  const std::vector<double> base_grid = dressing_grid();
  const std::size_t G = base_grid.size();

  // Propagates the ensemble for origin `o` of `series`, calling
  // visit(lead, variable, member values) at every lead.
  auto run_ensemble = [&](const ObservationSeries& series, std::size_t o,
                          std::uint64_t stream, auto&& visit) {
    if (o + static_cast<std::size_t>(K) >= series.size()) {
      throw DomainError("eval", "origin too close to the end of the series");
    }
    Rng rng(mix_seed(setup.seed, stream));
    std::vector<StateVec> members(n_mem);
    for (auto& m : members) {
      for (std::size_t j = 0; j < kStateDim; ++j) {
        m[j] = series.observations[o][j] + series.noise_stddev[j] * standard_normal(rng);
      }
    }
    Eigen::ArrayXd values(static_cast<Eigen::Index>(n_mem));
    for (int k = 1; k <= K; ++k) {
      for (auto& m : members) m = advance_observation_step(m, params);
      for (std::size_t j = 0; j < kStateDim; ++j) {
        for (std::size_t m = 0; m < n_mem; ++m) values[static_cast<Eigen::Index>(m)] = members[m][j];
        visit(k, j, values, series.observations[o + static_cast<std::size_t>(k)][j]);
      }
    }
  };

  // Tuning: total floored score per (lead, variable, grid value).
  PerfectModelResult out;
  out.dressing_stddev.assign(static_cast<std::size_t>(K), StateVec{});
  {
    const std::size_t n_chunks = chunks(val_origins.size());
    const std::size_t stride = static_cast<std::size_t>(K) * kStateDim * G;
    std::vector<std::vector<double>> partial(n_chunks, std::vector<double>(stride, 0.0));
    parallel_for(n_chunks, [&](std::size_t ch) {
      const std::size_t end = std::min(val_origins.size(), (ch + 1) * kChunk);
      std::vector<double> sigmas(G);
      for (std::size_t v = ch * kChunk; v < end; ++v) {
        run_ensemble(validation, val_origins[v], 2 * v,
                     [&](int k, std::size_t j, const Eigen::ArrayXd& vals, double y) {
                       for (std::size_t g = 0; g < G; ++g) sigmas[g] = base_grid[g] * setup.scale[j];
                       double* acc = partial[ch].data() +
                                     ((static_cast<std::size_t>(k - 1) * kStateDim) + j) * G;
                       accumulate_dressed_scores((y - vals).square(), sigmas, acc);
                     });
      }
    });
    std::vector<double> total(stride, 0.0);
    for (const auto& p : partial) {
      for (std::size_t i = 0; i < stride; ++i) total[i] += p[i];
    }
    for (int k = 1; k <= K; ++k) {
      for (std::size_t j = 0; j < kStateDim; ++j) {
        const double* row = total.data() + ((static_cast<std::size_t>(k - 1) * kStateDim) + j) * G;
        const std::size_t best =
            val_origins.empty() ? G / 2 : argmin_first(std::span<const double>(row, G));
        out.dressing_stddev[static_cast<std::size_t>(k - 1)][j] = base_grid[best] * setup.scale[j];
      }
    }
  }

  out.scores = ScoreTable({test_origins.begin(), test_origins.end()}, K,
                          static_cast<int>(kStateDim));
  parallel_for(chunks(test_origins.size()), [&](std::size_t ch) {
    const std::size_t end = std::min(test_origins.size(), (ch + 1) * kChunk);
    for (std::size_t i = ch * kChunk; i < end; ++i) {
      run_ensemble(test, test_origins[i], 2 * i + 1,
                   [&](int k, std::size_t j, const Eigen::ArrayXd& vals, double y) {
                     const double s = out.dressing_stddev[static_cast<std::size_t>(k - 1)][j];
                     double score = 0.0;
                     accumulate_dressed_scores((y - vals).square(), std::span(&s, 1), &score);
                     out.scores.set(i, k, static_cast<int>(j),
                                    {score, score >= kScoreFloor});
                   });
    }
  });
  return out;
}

std::vector<BootstrapInterval> bootstrap_columns(const Eigen::MatrixXd& values,
                                                 std::size_t n_resamples, double level,
                                                 std::uint64_t seed) {
  if (values.rows() == 0) throw DomainError("eval", "bootstrap of an empty score set");
  if (n_resamples < 100) throw DomainError("eval", "bootstrap needs >= 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("eval", "level must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(values.rows());
  const auto cols = static_cast<std::size_t>(values.cols());
  // Row-major copy so one resampled row touches contiguous memory.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = values;
  std::vector<std::vector<double>> means(cols, std::vector<double>(n_resamples));
  parallel_for(chunks(n_resamples), [&](std::size_t ch) {
    const std::size_t end = std::min(n_resamples, (ch + 1) * kChunk);
    Eigen::RowVectorXd acc(static_cast<Eigen::Index>(cols));
    for (std::size_t r = ch * kChunk; r < end; ++r) {
      Rng rng(mix_seed(seed, r));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      acc.setZero();
      for (std::size_t i = 0; i < n; ++i) acc += rows.row(static_cast<Eigen::Index>(pick(rng)));
      for (std::size_t c = 0; c < cols; ++c) {
        means[c][r] = acc[static_cast<Eigen::Index>(c)] / static_cast<double>(n);
      }
    }
  });
  std::vector<BootstrapInterval> out(cols);
  const double tail = 0.5 * (1.0 - level);
  for (std::size_t c = 0; c < cols; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    const double mean = sum / static_cast<double>(n);
    std::sort(means[c].begin(), means[c].end());
    // Percentile endpoints, widened if needed so the interval contains the
    // point estimate (can differ in the last bit for constant data).
    out[c] = {std::min(quantile_sorted(means[c], tail), mean), mean,
              std::max(quantile_sorted(means[c], 1.0 - tail), mean)};
  }
  return out;
}

BootstrapInterval bootstrap_interval(std::span<const double> scores,
                                     std::size_t n_resamples, double level,
                                     std::uint64_t seed) {
  if (scores.empty()) throw DomainError("eval", "bootstrap of an empty score set");
  const Eigen::MatrixXd m =
      Eigen::Map<const Eigen::VectorXd>(scores.data(), static_cast<Eigen::Index>(scores.size()));
  return bootstrap_columns(m, n_resamples, level, seed).front();
}

SkillCurve skill_curve(const ScoreTable& model, const ScoreTable& climatology,
                       std::size_t n_resamples, double level, std::uint64_t seed) {
  if (model.n_leads() != climatology.n_leads() || model.dim() != climatology.dim() ||
      model.n_forecasts() != climatology.n_forecasts() ||
      !std::equal(model.forecast_ids().begin(), model.forecast_ids().end(),
                  climatology.forecast_ids().begin())) {
    throw DomainError("eval", "model and climatology score tables do not match");
  }
  const int d = model.dim();
  const int K = model.n_leads();
  const std::size_t n = model.n_forecasts();
  Eigen::MatrixXd diffs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K * (d + 1)));
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 1; k <= K; ++k) {
      const Eigen::Index base = static_cast<Eigen::Index>((k - 1) * (d + 1));
      double sum = 0.0;
      for (int j = 0; j < d; ++j) {
        const double delta = model.at(i, k, j) - climatology.at(i, k, j);
        diffs(static_cast<Eigen::Index>(i), base + 1 + j) = delta;
        sum += delta;
      }
      diffs(static_cast<Eigen::Index>(i), base) = sum;
    }
  }
  const auto intervals = bootstrap_columns(diffs, n_resamples, level, seed);
  SkillCurve curve;
  for (int k = 1; k <= K; ++k) {
    SkillPoint p;
    p.lead = k;
    std::size_t total_floored = 0;
    std::vector<std::size_t> per_var;
    for (int j = 0; j < d; ++j) {
      per_var.push_back(model.n_floored(k, j));
      total_floored += per_var.back();
    }
    p.n_floored.push_back(total_floored);
    p.n_floored.insert(p.n_floored.end(), per_var.begin(), per_var.end());
    for (int c = 0; c <= d; ++c) {
      p.by_variable.push_back(intervals[static_cast<std::size_t>((k - 1) * (d + 1) + c)]);
    }
    curve.points.push_back(std::move(p));
  }
  return curve;
}

void write_score_table(std::ostream& out, const ScoreTable& table) {
  static constexpr const char* kNames[] = {"x", "y", "z"};
  out << "forecast,lead,variable,score,floored\n";
  for (std::size_t i = 0; i < table.n_forecasts(); ++i) {
    for (int k = 1; k <= table.n_leads(); ++k) {
      for (int j = 0; j < table.dim(); ++j) {
        out << table.forecast_ids()[i] << ',' << k << ','
            << (j < 3 ? kNames[j] : std::to_string(j).c_str()) << ','
            << format_double(table.at(i, k, j)) << ',' << (table.floored(i, k, j) ? 1 : 0)
            << '\n';
      }
    }
  }
}

void write_skill_curve(std::ostream& out, const SkillCurve& curve) {
  static constexpr const char* kNames[] = {"sum", "x", "y", "z"};
  out << "lead,variable,mean,low,high,n_floored\n";
  for (const auto& p : curve.points) {
    for (std::size_t c = 0; c < p.by_variable.size(); ++c) {
      const auto& b = p.by_variable[c];
      out << p.lead << ',' << (c < 4 ? kNames[c] : std::to_string(c).c_str()) << ','
          << format_double(b.mean) << ',' << format_double(b.low) << ','
          << format_double(b.high) << ',' << p.n_floored[c] << '\n';
    }
  }
}

}  // namespace d2d
