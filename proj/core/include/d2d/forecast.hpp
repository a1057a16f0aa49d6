#pragma once

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "d2d/net.hpp"

namespace d2d {

struct ForecastRun {
  DistributionWindow initial_window;
  std::vector<int> leads;              // cumulative lead of each entry
  std::vector<MarginalSet> marginals;  // one per entry of `leads`
  std::vector<int> applied;            // model lead used at each application
  std::string provenance;
};

// Direct models keyed by lead (in observation steps); leads must be distinct
// powers of two.
class DirectModelBank {
 public:
  DirectModelBank() = default;
  void add(int lead, ModelParams params);
  bool empty() const { return models_.empty(); }
  std::vector<int> leads() const;
  const ModelParams& at(int lead) const;

 private:
  std::map<int, ModelParams> models_;
};

// Recursive forecast with one model: leads 1..steps.
ForecastRun iterate_forecast(const ModelParams& params,
                             const DistributionWindow& window, int steps);

// Sequence of model leads used to reach `target`: always the largest
// available lead that does not overshoot.
std::vector<int> greedy_decomposition(std::span<const int> available, int target);

// Applies the greedy decomposition of `target` in order, sliding each output
// into the window as its newest entry. Entries are the intermediate
// cumulative leads (last == target).
ForecastRun greedy_compose(const DirectModelBank& bank,
                           const DistributionWindow& window, int target);

// Batched variant returning, for every window, the forecast at `target` only.
std::vector<MarginalSet> greedy_compose_batch(
    const DirectModelBank& bank, std::span<const DistributionWindow> windows,
    int target);

// Delimited export: lead,variable,component,weight,mean,stddev.
void write_forecast_run(std::ostream& out, const ForecastRun& run);

}  // namespace d2d
