#include "d2d/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "d2d/error.hpp"

namespace d2d {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("io", "malformed number '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io", "failed writing " + path.string());
}

void write_dataset(const Dataset& data, const std::filesystem::path& table,
                   const std::filesystem::path& meta) {
  const ObservationSeries& s = data.series;
  if (!s.truth || s.truth->size() != s.size()) {
    throw DomainError("io", "dataset export needs the truth trajectory");
  }
  std::string text = "t,obs_x,obs_y,obs_z,truth_x,truth_y,truth_z\n";
  text.reserve(s.size() * 140);
  for (std::size_t k = 0; k < s.size(); ++k) {
    text += format_double(s.times[k]);
    for (double v : s.observations[k]) {
      text += ',';
      text += format_double(v);
    }
    for (double v : (*s.truth)[k]) {
      text += ',';
      text += format_double(v);
    }
    text += '\n';
  }
  write_file(table, text);

  json m;
  m["format_version"] = kDatasetFormatVersion;
  m["noise_level"] = format_double(s.noise_level);
  m["noise_stddev"] = {format_double(s.noise_stddev[0]), format_double(s.noise_stddev[1]),
                       format_double(s.noise_stddev[2])};
  m["seed"] = data.seed;
  m["lorenz"] = {{"sigma", format_double(data.params.sigma)},
                 {"rho", format_double(data.params.rho)},
                 {"beta", format_double(data.params.beta)},
                 {"dt_sim", format_double(data.params.dt_sim)},
                 {"dt_obs", format_double(data.params.dt_obs)}};
  m["splits"] = {{"train_end", data.splits.train_end},
                 {"val_end", data.splits.val_end},
                 {"test_end", data.splits.test_end}};
  m["records"] = s.size();
  write_file(meta, m.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& table,
                     const std::filesystem::path& meta) {
  Dataset d;
  json m;
  try {
    m = json::parse(read_file(meta));
    if (m.at("format_version").get<int>() != kDatasetFormatVersion) {
      throw VersionError("io", "unsupported dataset format version");
    }
    auto num = [](const json& v) { return parse_double(v.get<std::string>()); };
    d.series.noise_level = num(m.at("noise_level"));
    for (std::size_t j = 0; j < kStateDim; ++j) {
      d.series.noise_stddev[j] = num(m.at("noise_stddev").at(j));
    }
    d.seed = m.at("seed").get<std::uint64_t>();
    const json& l = m.at("lorenz");
    d.params = {num(l.at("sigma")), num(l.at("rho")), num(l.at("beta")),
                num(l.at("dt_sim")), num(l.at("dt_obs"))};
    const json& sp = m.at("splits");
    d.splits = {sp.at("train_end").get<std::size_t>(), sp.at("val_end").get<std::size_t>(),
                sp.at("test_end").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw FormatError("io", std::string("bad dataset metadata: ") + e.what());
  }

  const std::string text = read_file(table);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "t,obs_x,obs_y,obs_z,truth_x,truth_y,truth_z") {
    throw FormatError("io", "bad dataset header");
  }
  std::vector<StateVec> truth;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) throw FormatError("io", "dataset record needs 7 fields");
    d.series.times.push_back(parse_double(f[0]));
    d.series.observations.push_back({parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
    truth.push_back({parse_double(f[4]), parse_double(f[5]), parse_double(f[6])});
  }
  d.series.truth = std::move(truth);
  if (d.series.size() != m.at("records").get<std::size_t>() ||
      d.splits.test_end > d.series.size() || d.splits.train_end > d.splits.val_end ||
      d.splits.val_end > d.splits.test_end) {
    throw FormatError("io", "dataset table does not match its metadata");
  }
  return d;
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  return content_hash(read_file(path));
}

}  // namespace d2d
