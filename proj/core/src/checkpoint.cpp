#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "d2d/error.hpp"
#include "d2d/training.hpp"

namespace d2d {

namespace {

constexpr char kMagic[8] = {'D', '2', 'D', 'C', 'K', 'P', 'T', '\n'};
constexpr std::size_t kHeaderBytes = 16;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("training", "checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = kHeaderBytes;
};

}  // namespace

std::string checkpoint_bytes(const ModelParams& params) {
  std::string out(kMagic, kMagic + 8);
  out.push_back(static_cast<char>(kCheckpointVersion));
  out.append(7, '\0');
  const NetConfig& c = params.config;
  put_u64(out, static_cast<std::uint64_t>(c.d));
  put_u64(out, static_cast<std::uint64_t>(c.window_len));
  put_u64(out, static_cast<std::uint64_t>(c.n_centres));
  put_u64(out, static_cast<std::uint64_t>(c.n_components));
  put_u64(out, static_cast<std::uint64_t>(c.hidden_size));
  put_u64(out, c.seed);
  for (double v : params.norm.mean) put_f64(out, v);
  for (double v : params.norm.scale) put_f64(out, v);
  for (const auto& centres : params.norm.centres) {
    for (double v : centres) put_f64(out, v);
  }
  put_u64(out, static_cast<std::uint64_t>(params.values.size()));
  for (Eigen::Index i = 0; i < params.values.size(); ++i) put_f64(out, params.values[i]);
  return out;
}

ModelParams checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("training", "not a checkpoint file (bad magic)");
  }
  const auto version = static_cast<std::uint8_t>(bytes[8]);
  if (version != kCheckpointVersion) {
    throw VersionError("training", "unsupported checkpoint version " +
                                       std::to_string(version) + " (expected " +
                                       std::to_string(kCheckpointVersion) + ")");
  }
  Reader r(bytes);
  NetConfig c;
  auto small = [&](std::uint64_t v) {
    if (v == 0 || v > (1u << 20)) throw FormatError("training", "corrupt checkpoint header");
    return static_cast<int>(v);
  };
  c.d = small(r.u64());
  c.window_len = small(r.u64());
  c.n_centres = small(r.u64());
  c.n_components = small(r.u64());
  c.hidden_size = small(r.u64());
  c.seed = r.u64();
  ModelParams p;
  p.config = c;
  for (int j = 0; j < c.d; ++j) p.norm.mean.push_back(r.f64());
  for (int j = 0; j < c.d; ++j) p.norm.scale.push_back(r.f64());
  p.norm.centres.assign(c.d, std::vector<double>(c.n_centres));
  for (auto& centres : p.norm.centres) {
    for (auto& v : centres) v = r.f64();
  }
  const std::uint64_t n = r.u64();
  if (n != parameter_count(c)) {
    throw FormatError("training", "checkpoint parameter count does not match its header");
  }
  if (r.remaining() != n * 8) {
    throw FormatError("training", r.remaining() < n * 8 ? "checkpoint truncated"
                                                         : "trailing bytes after checkpoint");
  }
  p.values.resize(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) p.values[static_cast<Eigen::Index>(i)] = r.f64();
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("training", "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("training", "failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("training", "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace d2d
