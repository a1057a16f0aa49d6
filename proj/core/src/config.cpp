#include "d2d/config.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "d2d/io.hpp"

namespace d2d {

using nlohmann::json;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

class Reader {
 public:
  std::vector<std::string> problems;

  // Descends into `key` of `parent`; returns null when absent.
  const json* section(const json& parent, const std::string& key, const std::string& path) {
    if (!parent.contains(key)) return nullptr;
    const json& s = parent.at(key);
    if (!s.is_object()) {
      problems.push_back(path + ": expected an object");
      return nullptr;
    }
    return &s;
  }

  void unknown_keys(const json* obj, const std::string& path,
                    std::initializer_list<const char*> known) {
    if (obj == nullptr) return;
    const std::set<std::string> k(known.begin(), known.end());
    for (const auto& [key, value] : obj->items()) {
      if (k.count(key) == 0) problems.push_back(join(path, key.c_str()) + ": unknown key");
    }
  }

  void read(const json* obj, const std::string& path, const char* key, double& out) {
    const json* v = value(obj, key);
    if (v == nullptr) return;
    if (v->is_number()) out = v->get<double>();
    else problems.push_back(join(path, key) + ": expected a number");
  }

  void read(const json* obj, const std::string& path, const char* key, int& out) {
    const json* v = value(obj, key);
    if (v == nullptr) return;
    if (v->is_number_integer() && v->get<long long>() >= INT32_MIN && v->get<long long>() <= INT32_MAX) {
      out = static_cast<int>(v->get<long long>());
    } else {
      problems.push_back(join(path, key) + ": expected an integer");
    }
  }

  void read(const json* obj, const std::string& path, const char* key, std::uint64_t& out) {
    const json* v = value(obj, key);
    if (v == nullptr) return;
    if (v->is_number_unsigned()) out = v->get<std::uint64_t>();
    else problems.push_back(join(path, key) + ": expected a non-negative integer");
  }

  void read(const json* obj, const std::string& path, const char* key, std::string& out) {
    const json* v = value(obj, key);
    if (v == nullptr) return;
    if (v->is_string()) out = v->get<std::string>();
    else problems.push_back(join(path, key) + ": expected a string");
  }

  template <class T>
  void read(const json* obj, const std::string& path, const char* key, std::vector<T>& out) {
    const json* v = value(obj, key);
    if (v == nullptr) return;
    if (!v->is_array()) {
      problems.push_back(join(path, key) + ": expected an array");
      return;
    }
    std::vector<T> tmp;
    for (const auto& e : *v) {
      const bool ok = std::is_signed_v<T> ? e.is_number_integer() : e.is_number_unsigned();
      if (!ok) {
        problems.push_back(join(path, key) + ": expected an array of integers");
        return;
      }
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }

 private:
  static std::string join(const std::string& path, const char* key) {
    return path.empty() ? std::string(key) : path + "." + key;
  }
  static const json* value(const json* obj, const char* key) {
    if (obj == nullptr || !obj->contains(key)) return nullptr;
    return &obj->at(key);
  }
};

void read_size(Reader& r, const json* obj, const std::string& path, const char* key,
               std::size_t& out) {
  std::uint64_t v = out;
  r.read(obj, path, key, v);
  out = static_cast<std::size_t>(v);
}

void apply_override(json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError({"--set " + spec + ": expected key=value"});
  }
  const std::string key = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  std::string pointer;
  std::stringstream ks(key);
  for (std::string part; std::getline(ks, part, '.');) {
    if (part.empty()) throw ConfigError({"--set " + spec + ": empty key component"});
    pointer += "/" + part;
  }
  try {
    doc[json::json_pointer(pointer)] = std::move(value);
  } catch (const json::exception&) {
    throw ConfigError({"--set " + spec + ": key does not address an object field"});
  }
}

ExperimentConfig from_json(const json& doc) {
  Reader r;
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ConfigError({"configuration must be a JSON object"});
  r.unknown_keys(&doc, "",
                 {"lorenz", "data", "net", "train", "eval", "pdf_grid", "output_dir"});

  if (const json* s = r.section(doc, "lorenz", "lorenz")) {
    r.unknown_keys(s, "lorenz", {"sigma", "rho", "beta", "dt_sim", "dt_obs"});
    r.read(s, "lorenz", "sigma", cfg.lorenz.sigma);
    r.read(s, "lorenz", "rho", cfg.lorenz.rho);
    r.read(s, "lorenz", "beta", cfg.lorenz.beta);
    r.read(s, "lorenz", "dt_sim", cfg.lorenz.dt_sim);
    r.read(s, "lorenz", "dt_obs", cfg.lorenz.dt_obs);
  }
  if (const json* s = r.section(doc, "data", "data")) {
    r.unknown_keys(s, "data", {"noise_level", "n_train", "n_validation", "n_test", "seed"});
    r.read(s, "data", "noise_level", cfg.data.noise_level);
    read_size(r, s, "data", "n_train", cfg.data.n_train);
    read_size(r, s, "data", "n_validation", cfg.data.n_validation);
    read_size(r, s, "data", "n_test", cfg.data.n_test);
    r.read(s, "data", "seed", cfg.data.seed);
  }
  if (const json* s = r.section(doc, "net", "net")) {
    r.unknown_keys(s, "net", {"window_len", "n_centres", "n_components", "hidden_size", "seed"});
    r.read(s, "net", "window_len", cfg.net.window_len);
    r.read(s, "net", "n_centres", cfg.net.n_centres);
    r.read(s, "net", "n_components", cfg.net.n_components);
    r.read(s, "net", "hidden_size", cfg.net.hidden_size);
    r.read(s, "net", "seed", cfg.net.seed);
  }
  if (const json* s = r.section(doc, "train", "train")) {
    r.unknown_keys(s, "train",
                   {"strategy", "target_lead", "k_max", "curriculum_stages", "batch_size",
                    "learning_rate", "beta1", "beta2", "epsilon", "max_epochs_per_stage",
                    "patience", "grad_clip_norm", "first_epoch_loss_cap",
                    "max_validation_windows", "seed"});
    std::string strategy = to_string(cfg.train.strategy);
    r.read(s, "train", "strategy", strategy);
    if (strategy == "direct" || strategy == "iterative") {
      cfg.train.strategy = strategy_from_string(strategy);
    } else {
      r.problems.push_back("train.strategy: must be direct or iterative");
    }
    r.read(s, "train", "target_lead", cfg.train.target_lead);
    r.read(s, "train", "k_max", cfg.train.k_max);
    r.read(s, "train", "curriculum_stages", cfg.train.curriculum_stages);
    r.read(s, "train", "batch_size", cfg.train.batch_size);
    r.read(s, "train", "learning_rate", cfg.train.learning_rate);
    r.read(s, "train", "beta1", cfg.train.beta1);
    r.read(s, "train", "beta2", cfg.train.beta2);
    r.read(s, "train", "epsilon", cfg.train.epsilon);
    r.read(s, "train", "max_epochs_per_stage", cfg.train.max_epochs_per_stage);
    r.read(s, "train", "patience", cfg.train.patience);
    r.read(s, "train", "grad_clip_norm", cfg.train.grad_clip_norm);
    r.read(s, "train", "first_epoch_loss_cap", cfg.train.first_epoch_loss_cap);
    read_size(r, s, "train", "max_validation_windows", cfg.train.max_validation_windows);
    r.read(s, "train", "seed", cfg.train.seed);
  }
  if (const json* s = r.section(doc, "eval", "eval")) {
    r.unknown_keys(s, "eval",
                   {"n_members", "n_resamples", "level", "lead_max", "direct_leads",
                    "max_test_origins", "max_validation_origins", "bootstrap_seed",
                    "ensemble_seed"});
    read_size(r, s, "eval", "n_members", cfg.eval.n_members);
    read_size(r, s, "eval", "n_resamples", cfg.eval.n_resamples);
    r.read(s, "eval", "level", cfg.eval.level);
    r.read(s, "eval", "lead_max", cfg.eval.lead_max);
    r.read(s, "eval", "direct_leads", cfg.eval.direct_leads);
    read_size(r, s, "eval", "max_test_origins", cfg.eval.max_test_origins);
    read_size(r, s, "eval", "max_validation_origins", cfg.eval.max_validation_origins);
    r.read(s, "eval", "bootstrap_seed", cfg.eval.bootstrap_seed);
    r.read(s, "eval", "ensemble_seed", cfg.eval.ensemble_seed);
  }
  if (const json* s = r.section(doc, "pdf_grid", "pdf_grid")) {
    r.unknown_keys(s, "pdf_grid",
                   {"origins", "horizon", "grid_points", "reference_members", "variable",
                    "seed"});
    r.read(s, "pdf_grid", "origins", cfg.pdf_grid.origins);
    r.read(s, "pdf_grid", "horizon", cfg.pdf_grid.horizon);
    read_size(r, s, "pdf_grid", "grid_points", cfg.pdf_grid.grid_points);
    read_size(r, s, "pdf_grid", "reference_members", cfg.pdf_grid.reference_members);
    r.read(s, "pdf_grid", "variable", cfg.pdf_grid.variable);
    r.read(s, "pdf_grid", "seed", cfg.pdf_grid.seed);
  }
  r.read(&doc, "", "output_dir", cfg.output_dir);
  if (!r.problems.empty()) throw ConfigError(std::move(r.problems));
  return cfg;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["lorenz"] = {{"sigma", c.lorenz.sigma},   {"rho", c.lorenz.rho},
                 {"beta", c.lorenz.beta},     {"dt_sim", c.lorenz.dt_sim},
                 {"dt_obs", c.lorenz.dt_obs}};
  j["data"] = {{"noise_level", c.data.noise_level}, {"n_train", c.data.n_train},
               {"n_validation", c.data.n_validation}, {"n_test", c.data.n_test},
               {"seed", c.data.seed}};
  j["net"] = {{"window_len", c.net.window_len},     {"n_centres", c.net.n_centres},
              {"n_components", c.net.n_components}, {"hidden_size", c.net.hidden_size},
              {"seed", c.net.seed}};
  j["train"] = {{"strategy", to_string(c.train.strategy)},
                {"target_lead", c.train.target_lead},
                {"k_max", c.train.k_max},
                {"curriculum_stages", c.train.curriculum_stages},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"epsilon", c.train.epsilon},
                {"max_epochs_per_stage", c.train.max_epochs_per_stage},
                {"patience", c.train.patience},
                {"grad_clip_norm", c.train.grad_clip_norm},
                {"first_epoch_loss_cap", c.train.first_epoch_loss_cap},
                {"max_validation_windows", c.train.max_validation_windows},
                {"seed", c.train.seed}};
  j["eval"] = {{"n_members", c.eval.n_members},
               {"n_resamples", c.eval.n_resamples},
               {"level", c.eval.level},
               {"lead_max", c.eval.lead_max},
               {"direct_leads", c.eval.direct_leads},
               {"max_test_origins", c.eval.max_test_origins},
               {"max_validation_origins", c.eval.max_validation_origins},
               {"bootstrap_seed", c.eval.bootstrap_seed},
               {"ensemble_seed", c.eval.ensemble_seed}};
  j["pdf_grid"] = {{"origins", c.pdf_grid.origins},
                   {"horizon", c.pdf_grid.horizon},
                   {"grid_points", c.pdf_grid.grid_points},
                   {"reference_members", c.pdf_grid.reference_members},
                   {"variable", c.pdf_grid.variable},
                   {"seed", c.pdf_grid.seed}};
  j["output_dir"] = c.output_dir;
  return j;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error("cli", join_problems(problems)), problems_(std::move(problems)) {}

ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({"cannot read configuration file " + path.string()});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& cfg) {
  return content_hash(to_json(cfg).dump());
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  const auto finite_positive = [](double v) { return std::isfinite(v) && v > 0.0; };

  const LorenzParams& p = cfg.lorenz;
  if (!std::isfinite(p.sigma)) out.push_back("lorenz.sigma: must be finite");
  if (!std::isfinite(p.rho)) out.push_back("lorenz.rho: must be finite");
  if (!std::isfinite(p.beta)) out.push_back("lorenz.beta: must be finite");
  if (!finite_positive(p.dt_sim)) out.push_back("lorenz.dt_sim: must be > 0");
  if (!finite_positive(p.dt_obs)) out.push_back("lorenz.dt_obs: must be > 0");
  if (finite_positive(p.dt_sim) && finite_positive(p.dt_obs)) {
    try {
      (void)p.substeps();
    } catch (const DomainError&) {
      out.push_back("lorenz.dt_obs: dt_obs not a multiple of dt_sim");
    }
  }

  const DataConfig& d = cfg.data;
  if (!(std::isfinite(d.noise_level) && d.noise_level >= 0.0)) {
    out.push_back("data.noise_level: must be finite and >= 0");
  }
  if (d.n_train == 0) out.push_back("data.n_train: must be positive");
  if (d.n_validation == 0) out.push_back("data.n_validation: must be positive");
  if (d.n_test == 0) out.push_back("data.n_test: must be positive");

  const NetConfig& n = cfg.net;
  if (n.d != static_cast<int>(kStateDim)) out.push_back("net.d: must equal the state dimension");
  if (n.window_len < 1) out.push_back("net.window_len: must be >= 1");
  if (n.n_centres < 2) out.push_back("net.n_centres: must be >= 2");
  if (n.n_components < 1 || n.n_components > 64) {
    out.push_back("net.n_components: must lie in [1, 64]");
  }
  if (n.hidden_size < 1) out.push_back("net.hidden_size: must be >= 1");

  for (auto& v : cfg.train.violations()) out.push_back(std::move(v));
  const int horizon = std::max({cfg.train.k_max, cfg.train.target_lead, cfg.eval.lead_max});
  const auto need = static_cast<std::size_t>(std::max(n.window_len, 1) + std::max(horizon, 1));
  if (d.n_train > 0 && d.n_train <= need) {
    out.push_back("data.n_train: shorter than window_len + longest lead");
  }
  if (d.n_validation > 0 && d.n_validation <= need) {
    out.push_back("data.n_validation: shorter than window_len + longest lead");
  }
  if (d.n_test > 0 && d.n_test <= need) {
    out.push_back("data.n_test: shorter than window_len + longest lead");
  }

  const EvalConfig& e = cfg.eval;
  if (e.n_members < 2) out.push_back("eval.n_members: must be >= 2");
  if (e.n_resamples < 100) out.push_back("eval.n_resamples: must be >= 100");
  if (!(e.level > 0.0 && e.level < 1.0)) out.push_back("eval.level: must lie in (0, 1)");
  if (e.lead_max < 1) out.push_back("eval.lead_max: must be >= 1");
  if (e.direct_leads.empty()) out.push_back("eval.direct_leads: must not be empty");
  for (std::size_t i = 0; i < e.direct_leads.size(); ++i) {
    if (!is_power_of_two(e.direct_leads[i])) {
      out.push_back("eval.direct_leads: every lead must be a power of two");
      break;
    }
    if (i > 0 && e.direct_leads[i] <= e.direct_leads[i - 1]) {
      out.push_back("eval.direct_leads: leads not increasing");
      break;
    }
  }
  if (!e.direct_leads.empty() && e.direct_leads.front() != 1) {
    out.push_back("eval.direct_leads: must include lead 1");
  }

  const PdfGridConfig& g = cfg.pdf_grid;
  if (g.origins.empty()) out.push_back("pdf_grid.origins: must not be empty");
  for (std::size_t o : g.origins) {
    if (o + 1 < static_cast<std::size_t>(std::max(n.window_len, 1)) || o >= d.n_test) {
      out.push_back("pdf_grid.origins: origin outside the test split or before a full window");
      break;
    }
  }
  if (g.horizon < 1) out.push_back("pdf_grid.horizon: must be >= 1");
  if (g.grid_points < 2) out.push_back("pdf_grid.grid_points: must be >= 2");
  if (g.reference_members < 100) out.push_back("pdf_grid.reference_members: must be >= 100");
  if (g.variable < 0 || g.variable >= static_cast<int>(kStateDim)) {
    out.push_back("pdf_grid.variable: must be 0, 1 or 2");
  }
  if (cfg.output_dir.empty()) out.push_back("output_dir: must not be empty");
  return out;
}

}  // namespace d2d
