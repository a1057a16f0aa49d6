#include "d2d/forecast.hpp"

#include <algorithm>
#include <bit>

#include "d2d/error.hpp"
#include "d2d/io.hpp"

namespace d2d {

namespace {

void slide(DistributionWindow& window, MarginalSet newest) {
  window.erase(window.begin());
  window.push_back(std::move(newest));
}

}  // namespace

void DirectModelBank::add(int lead, ModelParams params) {
  if (lead < 1 || !std::has_single_bit(static_cast<unsigned>(lead))) {
    throw DomainError("forecast", "direct model leads must be powers of two");
  }
  if (models_.count(lead)) {
    throw DomainError("forecast", "duplicate direct model lead " + std::to_string(lead));
  }
  models_.emplace(lead, std::move(params));
}

std::vector<int> DirectModelBank::leads() const {
  std::vector<int> out;
  for (const auto& [lead, _] : models_) out.push_back(lead);
  return out;
}

const ModelParams& DirectModelBank::at(int lead) const {
  auto it = models_.find(lead);
  if (it == models_.end()) {
    throw DomainError("forecast", "no direct model for lead " + std::to_string(lead));
  }
  return it->second;
}

ForecastRun iterate_forecast(const ModelParams& params,
                             const DistributionWindow& window, int steps) {
  if (steps < 1) throw DomainError("forecast", "K must be >= 1");
  ForecastRun run;
  run.initial_window = window;
  run.marginals = rollout(params, window, steps);
  for (int k = 1; k <= steps; ++k) {
    run.leads.push_back(k);
    run.applied.push_back(1);
  }
  run.provenance = "iterative";
  return run;
}

std::vector<int> greedy_decomposition(std::span<const int> available, int target) {
  if (available.empty()) throw DomainError("forecast", "empty direct model bank");
  if (target < 1) throw DomainError("forecast", "target lead must be >= 1");
  std::vector<int> sorted(available.begin(), available.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<int> out;
  int remaining = target;
  while (remaining > 0) {
    auto it = std::find_if(sorted.begin(), sorted.end(),
                           [&](int lead) { return lead <= remaining; });
    if (it == sorted.end()) {
      throw DomainError("forecast", "target lead not reachable with the available models");
    }
    out.push_back(*it);
    remaining -= *it;
  }
  return out;
}

ForecastRun greedy_compose(const DirectModelBank& bank,
                           const DistributionWindow& window, int target) {
  if (bank.empty()) throw DomainError("forecast", "empty direct model bank");
  const auto leads = bank.leads();
  ForecastRun run;
  run.initial_window = window;
  run.applied = greedy_decomposition(leads, target);
  run.provenance = "direct-greedy";
  DistributionWindow current = window;
  int cumulative = 0;
  for (int lead : run.applied) {
    MarginalSet out = forward(bank.at(lead), current);
    cumulative += lead;
    run.leads.push_back(cumulative);
    run.marginals.push_back(out);
    slide(current, std::move(out));
  }
  return run;
}

std::vector<MarginalSet> greedy_compose_batch(
    const DirectModelBank& bank, std::span<const DistributionWindow> windows,
    int target) {
  if (bank.empty()) throw DomainError("forecast", "empty direct model bank");
  const auto leads = bank.leads();
  const auto plan = greedy_decomposition(leads, target);
  std::vector<DistributionWindow> current(windows.begin(), windows.end());
  std::vector<MarginalSet> last(windows.size());
  for (int lead : plan) {
    auto outs = rollout_batch(bank.at(lead), current, 1);
    for (std::size_t i = 0; i < current.size(); ++i) {
      last[i] = outs[i].front();
      slide(current[i], std::move(outs[i].front()));
    }
  }
  return last;
}

void write_forecast_run(std::ostream& out, const ForecastRun& run) {
  static constexpr const char* kNames[] = {"x", "y", "z"};
  out << "lead,variable,component,weight,mean,stddev\n";
  for (std::size_t e = 0; e < run.leads.size(); ++e) {
    const MarginalSet& set = run.marginals[e];
    for (std::size_t j = 0; j < set.size(); ++j) {
      const std::string var = j < 3 ? kNames[j] : std::to_string(j);
      for (std::size_t i = 0; i < set[j].size(); ++i) {
        const auto& c = set[j][i];
        out << run.leads[e] << ',' << var << ',' << i << ',' << format_double(c.weight)
            << ',' << format_double(c.mean) << ',' << format_double(c.stddev) << '\n';
      }
    }
  }
}

}  // namespace d2d
