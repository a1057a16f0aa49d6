#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "d2d/dynamics.hpp"
#include "d2d/error.hpp"
#include "d2d/net.hpp"
#include "d2d/training.hpp"

namespace d2d {

struct DataConfig {
  double noise_level = 0.01;
  std::size_t n_train = 30000;
  std::size_t n_validation = 30000;
  std::size_t n_test = 30000;
  std::uint64_t seed = 1;
};

struct EvalConfig {
  std::size_t n_members = 128;
  std::size_t n_resamples = 1000;
  double level = 0.95;
  int lead_max = 128;
  // Leads of the direct-model bank used for greedy composition.
  std::vector<int> direct_leads{1, 2, 4, 8, 16, 32, 64};
  // 0 uses every admissible origin; otherwise an evenly spaced subset.
  std::size_t max_test_origins = 0;
  std::size_t max_validation_origins = 0;
  std::uint64_t bootstrap_seed = 1;
  std::uint64_t ensemble_seed = 1;
};

struct PdfGridConfig {
  // Indices into the test split of the initial conditions to export.
  std::vector<std::size_t> origins{4};  // first origin with a full default window
  int horizon = 128;
  std::size_t grid_points = 500;
  std::size_t reference_members = 10000;
  int variable = 0;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  LorenzParams lorenz;
  DataConfig data;
  NetConfig net;
  TrainConfig train;
  EvalConfig eval;
  PdfGridConfig pdf_grid;
  std::string output_dir = "out";
};

// Malformed document, unknown key or wrong value type; one message per problem.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Overrides are "dotted.key=value"; the value is read as JSON when possible
// and as a string otherwise. Keys absent from the document keep defaults.
ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

// Canonical JSON (sorted keys, every field present).
std::string config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Empty iff every field satisfies its rule; messages are "field: rule".
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

}  // namespace d2d
