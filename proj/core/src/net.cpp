#include "d2d/net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <tuple>

#include "d2d/error.hpp"
#include "d2d/parallel.hpp"
#include "d2d/rng.hpp"

namespace d2d {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Items are processed in fixed-size chunks so that results do not depend on
// the number of worker threads.
constexpr std::size_t kChunk = 64;

struct Component {
  double w;
  double mu;
  double sd;
};

Mat sigmoid(const Mat& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

// z[c] += w * sqrt(l^2 / v) * exp(-(mu - c)^2 / (2 v)), v = l^2 + sd^2.
void embed_accumulate(const Eigen::ArrayXd& centres, double ell,
                      const Component& comp, double* z) {
  const double v = ell * ell + comp.sd * comp.sd;
  const double r = ell / std::sqrt(v);
  Eigen::Map<Eigen::ArrayXd> out(z, centres.size());
  out += comp.w * r * (-(comp.mu - centres).square() / (2.0 * v)).exp();
}

struct EmbedGrad {
  double w = 0.0;    // d/d weight
  double mu = 0.0;   // d/d mean
  double sd = 0.0;   // d/d stddev
  double ell = 0.0;  // d/d bandwidth
};

EmbedGrad embed_backward(const Eigen::ArrayXd& centres, double ell,
                         const Component& comp, const double* dz) {
  const Eigen::Map<const Eigen::ArrayXd> g(dz, centres.size());
  const double l2 = ell * ell;
  const double s2 = comp.sd * comp.sd;
  const double v = l2 + s2;
  const double sqrt_v = std::sqrt(v);
  const double r = ell / sqrt_v;
  const Eigen::ArrayXd diff = comp.mu - centres;
  const Eigen::ArrayXd d2 = diff.square();
  const Eigen::ArrayXd e = (-d2 / (2.0 * v)).exp();
  const Eigen::ArrayXd re = r * e;
  const Eigen::ArrayXd gre = g * re;
  EmbedGrad out;
  out.w = gre.sum();
  out.mu = comp.w * (-(gre * diff).sum() / v);
  // d(re)/dv = re * (-1 / (2v) + d2 / (2 v^2)); dv/dsd = 2 sd.
  out.sd = comp.w * (gre * (-0.5 / v + d2 / (2.0 * v * v))).sum() * 2.0 * comp.sd;
  // d(re)/dl = e * sd^2 / v^{3/2} + re * d2 * l / v^2.
  out.ell = comp.w * ((g * e).sum() * s2 / (v * sqrt_v) +
                      (gre * d2).sum() * ell / (v * v));
  return out;
}

// Batched forward (and optionally backward) recursion over one chunk.
class Engine {
 public:
  Engine(const ModelParams& params,
         std::span<const DistributionWindow* const> windows, int steps,
         bool keep_cache)
      : p_(params),
        lay_(params.config),
        d_(params.config.d),
        L_(params.config.window_len),
        nc_(params.config.n_centres),
        M_(params.config.n_components),
        H_(params.config.hidden_size),
        In_(params.config.input_size()),
        B_(static_cast<int>(windows.size())),
        K_(steps),
        keep_cache_(keep_cache),
        w_input_(params.values.data() + lay_.w_input, 4 * H_, In_),
        w_hidden_(params.values.data() + lay_.w_hidden, 4 * H_, H_),
        b_gates_(params.values.data() + lay_.b_gates, 4 * H_) {
    for (int j = 0; j < d_; ++j) {
      centres_.push_back(Eigen::Map<const Eigen::ArrayXd>(
          params.norm.centres[j].data(), nc_));
      ell_.push_back(params.bandwidth(j));
      if (!(ell_.back() > 0.0)) {
        throw DomainError("net", "kernel bandwidth is zero");
      }
    }
    load_inputs(windows);
  }

  // Runs the K-step recursion. Throws NumericalFailureError on non-finite
  // head outputs.
  void run_forward() {
    const int n_entries = L_ + K_ - 1;
    E_.resize(n_entries);
    P_.resize(n_entries);
    for (int h = 0; h < L_; ++h) {
      E_[h] = Mat::Zero(In_, B_);
      for (int b = 0; b < B_; ++b) {
        for (int j = 0; j < d_; ++j) {
          double* z = E_[h].col(b).data() + j * nc_;
          for (const auto& comp : inputs_[h][b * d_ + j]) {
            embed_accumulate(centres_[j], ell_[j], comp, z);
          }
        }
      }
      P_[h].noalias() = w_input_ * E_[h];
    }
    pi_.assign(K_, {});
    mu_.assign(K_, {});
    sd_.assign(K_, {});
    clamped_.assign(K_, {});
    if (keep_cache_) cells_.assign(K_, std::vector<Cell>(L_));
    for (int k = 0; k < K_; ++k) {
      forward_step(k);
      const int entry = L_ + k;
      if (entry < n_entries) {
        E_[entry] = Mat::Zero(In_, B_);
        for (int j = 0; j < d_; ++j) {
          for (int b = 0; b < B_; ++b) {
            double* z = E_[entry].col(b).data() + j * nc_;
            for (int i = 0; i < M_; ++i) {
              embed_accumulate(centres_[j], ell_[j],
                               {pi_[k][j](i, b), mu_[k][j](i, b), sd_[k][j](i, b)},
                               z);
            }
          }
        }
        P_[entry].noalias() = w_input_ * E_[entry];
      }
    }
  }

  // Negative log density (state units) of targets; scores[b][k * d + j].
  std::vector<std::vector<double>> scores(
      std::span<const std::vector<StateVec>* const> targets) const {
    std::vector<std::vector<double>> out(B_, std::vector<double>(K_ * d_));
    for (int k = 0; k < K_; ++k) {
      for (int j = 0; j < d_; ++j) {
        for (int b = 0; b < B_; ++b) {
          const double y = normalise(j, (*targets[b])[k][j]);
          out[b][k * d_ + j] = -log_density(k, j, b, y) + std::log(p_.norm.scale[j]);
        }
      }
    }
    return out;
  }

  // Accumulates the loss sum over the chunk and (optionally) the gradient of
  // inv_n * loss_sum into grad.
  double backward(std::span<const std::vector<StateVec>* const> targets,
                  double inv_n, double cap, bool with_grad, Gradient* grad,
                  std::size_t* n_truncated, std::vector<double>* per_lead) {
    // Per-step loss and head adjoints.
    std::vector<std::vector<Mat>> d_pi_loss(K_), d_mu_loss(K_), d_sd_loss(K_);
    double total = 0.0;
    for (int k = 0; k < K_; ++k) {
      std::vector<double> step_loss(B_, 0.0);
      d_pi_loss[k].assign(d_, Mat::Zero(M_, B_));
      d_mu_loss[k].assign(d_, Mat::Zero(M_, B_));
      d_sd_loss[k].assign(d_, Mat::Zero(M_, B_));
      for (int j = 0; j < d_; ++j) {
        const double log_scale = std::log(p_.norm.scale[j]);
        for (int b = 0; b < B_; ++b) {
          const double y = normalise(j, (*targets[b])[k][j]);
          // Responsibilities gamma_i = pi_i phi_i / p.
          double terms[64];
          double peak = -std::numeric_limits<double>::infinity();
          for (int i = 0; i < M_; ++i) {
            const double pi = pi_[k][j](i, b);
            const double sd = sd_[k][j](i, b);
            const double z = (y - mu_[k][j](i, b)) / sd;
            terms[i] = pi > 0.0 ? std::log(pi) - 0.5 * z * z - std::log(sd) - kLogSqrt2Pi
                                : -std::numeric_limits<double>::infinity();
            peak = std::max(peak, terms[i]);
          }
          double sum = 0.0;
          for (int i = 0; i < M_; ++i) sum += std::exp(terms[i] - peak);
          const double log_p = peak + std::log(sum);
          step_loss[b] += -log_p + log_scale;
          for (int i = 0; i < M_; ++i) {
            const double gamma = std::exp(terms[i] - log_p);
            const double sd = sd_[k][j](i, b);
            const double resid = y - mu_[k][j](i, b);
            // Adjoints of -ln p with respect to (pi, mu, sd); the pi adjoint
            // is expressed directly on the softmax logits below.
            d_pi_loss[k][j](i, b) = pi_[k][j](i, b) - gamma;
            d_mu_loss[k][j](i, b) = -gamma * resid / (sd * sd);
            d_sd_loss[k][j](i, b) = -gamma * (resid * resid / (sd * sd * sd) - 1.0 / sd);
          }
        }
      }
      double lead_sum = 0.0;
      for (int b = 0; b < B_; ++b) {
        double l = step_loss[b];
        if (!std::isfinite(l)) {
          throw NumericalFailureError("non-finite loss", k + 1);
        }
        if (l > cap) {
          l = cap;
          if (n_truncated) ++*n_truncated;
          for (int j = 0; j < d_; ++j) {
            d_pi_loss[k][j].col(b).setZero();
            d_mu_loss[k][j].col(b).setZero();
            d_sd_loss[k][j].col(b).setZero();
          }
        }
        lead_sum += l;
      }
      if (per_lead) (*per_lead)[k] += lead_sum;
      total += lead_sum;
    }
    if (!with_grad) return total;

    VecMap g(grad->data(), grad->size());
    MatMap dW_in(g.data() + lay_.w_input, 4 * H_, In_);
    MatMap dW_h(g.data() + lay_.w_hidden, 4 * H_, H_);
    VecMap db(g.data() + lay_.b_gates, 4 * H_);
    std::vector<double> d_ell(d_, 0.0);

    const int n_entries = L_ + K_ - 1;
    std::vector<Mat> dP(n_entries, Mat::Zero(4 * H_, B_));

    for (int k = K_ - 1; k >= 0; --k) {
      // Adjoints flowing into this step's outputs from later embeddings.
      std::vector<Mat> g_pi(d_, Mat::Zero(M_, B_)), g_mu(d_, Mat::Zero(M_, B_)),
          g_sd(d_, Mat::Zero(M_, B_));
      const int entry = L_ + k;
      if (entry < n_entries) {
        const Mat dE = w_input_.transpose() * dP[entry];
        dW_in.noalias() += dP[entry] * E_[entry].transpose();
        for (int j = 0; j < d_; ++j) {
          for (int b = 0; b < B_; ++b) {
            const double* dz = dE.col(b).data() + j * nc_;
            for (int i = 0; i < M_; ++i) {
              const EmbedGrad eg = embed_backward(
                  centres_[j], ell_[j],
                  {pi_[k][j](i, b), mu_[k][j](i, b), sd_[k][j](i, b)}, dz);
              g_pi[j](i, b) = eg.w;
              g_mu[j](i, b) = eg.mu;
              g_sd[j](i, b) = eg.sd;
              d_ell[j] += eg.ell;
            }
          }
        }
      }

      // Head backward.
      const Mat& h_last = hidden_last_[k];
      Mat dh = Mat::Zero(H_, B_);
      for (int j = 0; j < d_; ++j) {
        Mat dY(3 * M_, B_);
        for (int b = 0; b < B_; ++b) {
          double dot = 0.0;
          for (int i = 0; i < M_; ++i) dot += pi_[k][j](i, b) * g_pi[j](i, b);
          for (int i = 0; i < M_; ++i) {
            const double pi = pi_[k][j](i, b);
            dY(i, b) = pi * (g_pi[j](i, b) - dot) + inv_n * d_pi_loss[k][j](i, b);
            dY(M_ + i, b) = g_mu[j](i, b) + inv_n * d_mu_loss[k][j](i, b);
            const double dsd = g_sd[j](i, b) + inv_n * d_sd_loss[k][j](i, b);
            dY(2 * M_ + i, b) = clamped_[k][j](i, b) ? 0.0 : dsd * sd_[k][j](i, b);
          }
        }
        MatMap dWj(g.data() + lay_.head_w[j], 3 * M_, H_);
        VecMap dbj(g.data() + lay_.head_b[j], 3 * M_);
        const ConstMatMap Wj(p_.values.data() + lay_.head_w[j], 3 * M_, H_);
        dWj.noalias() += dY * h_last.transpose();
        dbj += dY.rowwise().sum();
        dh.noalias() += Wj.transpose() * dY;
      }

      // Recurrent cell backward over the window.
      Mat dc = Mat::Zero(H_, B_);
      for (int t = L_ - 1; t >= 0; --t) {
        const Cell& cell = cells_[k][t];
        const auto i_g = cell.act.topRows(H_).array();
        const auto f_g = cell.act.middleRows(H_, H_).array();
        const auto c_g = cell.act.middleRows(2 * H_, H_).array();
        const auto o_g = cell.act.bottomRows(H_).array();
        const auto tc = cell.tanh_c.array();
        dc.array() += dh.array() * o_g * (1.0 - tc.square());
        Mat dG(4 * H_, B_);
        dG.bottomRows(H_).array() = dh.array() * tc * o_g * (1.0 - o_g);
        dG.topRows(H_).array() = dc.array() * c_g * i_g * (1.0 - i_g);
        dG.middleRows(2 * H_, H_).array() = dc.array() * i_g * (1.0 - c_g.square());
        if (t > 0) {
          const Cell& prev = cells_[k][t - 1];
          dG.middleRows(H_, H_).array() = dc.array() * prev.c.array() * f_g * (1.0 - f_g);
          dW_h.noalias() += dG * prev.h.transpose();
          dh.noalias() = w_hidden_.transpose() * dG;
        } else {
          dG.middleRows(H_, H_).setZero();
        }
        dc.array() *= f_g;
        db += dG.rowwise().sum();
        dP[k + t] += dG;
      }
    }

    // Window inputs are constants; only the bandwidth sees their gradient.
    for (int h = 0; h < L_; ++h) {
      const Mat dE = w_input_.transpose() * dP[h];
      dW_in.noalias() += dP[h] * E_[h].transpose();
      for (int j = 0; j < d_; ++j) {
        for (int b = 0; b < B_; ++b) {
          const double* dz = dE.col(b).data() + j * nc_;
          for (const auto& comp : inputs_[h][b * d_ + j]) {
            d_ell[j] += embed_backward(centres_[j], ell_[j], comp, dz).ell;
          }
        }
      }
    }
    for (int j = 0; j < d_; ++j) {
      const double raw = p_.values[lay_.raw_bandwidth + j];
      g[lay_.raw_bandwidth + j] += d_ell[j] * (raw >= 0.0 ? 1.0 : -1.0);
    }
    return total;
  }

  // Output mixtures in state units; result[b][k].
  std::vector<std::vector<MarginalSet>> outputs() const {
    std::vector<std::vector<MarginalSet>> out(B_, std::vector<MarginalSet>(K_));
    for (int b = 0; b < B_; ++b) {
      for (int k = 0; k < K_; ++k) {
        MarginalSet& set = out[b][k];
        set.reserve(d_);
        for (int j = 0; j < d_; ++j) {
          const double mean = p_.norm.mean[j];
          const double scale = p_.norm.scale[j];
          std::vector<GaussianComponent> comps(M_);
          for (int i = 0; i < M_; ++i) {
            comps[i] = {pi_[k][j](i, b), mean + scale * mu_[k][j](i, b),
                        scale * sd_[k][j](i, b)};
          }
          set.emplace_back(std::move(comps), kSigmaMin * scale);
        }
      }
    }
    return out;
  }

 private:
  struct Cell {
    Mat act;  // gate activations, rows [i | f | g | o]
    Mat c;
    Mat tanh_c;
    Mat h;
  };

  double normalise(int j, double x) const {
    return (x - p_.norm.mean[j]) / p_.norm.scale[j];
  }

  double log_density(int k, int j, int b, double y) const {
    double peak = -std::numeric_limits<double>::infinity();
    double terms[64];
    for (int i = 0; i < M_; ++i) {
      const double pi = pi_[k][j](i, b);
      const double sd = sd_[k][j](i, b);
      const double z = (y - mu_[k][j](i, b)) / sd;
      terms[i] = pi > 0.0 ? std::log(pi) - 0.5 * z * z - std::log(sd) - kLogSqrt2Pi
                          : -std::numeric_limits<double>::infinity();
      peak = std::max(peak, terms[i]);
    }
    double sum = 0.0;
    for (int i = 0; i < M_; ++i) sum += std::exp(terms[i] - peak);
    return peak + std::log(sum);
  }

  void load_inputs(std::span<const DistributionWindow* const> windows) {
    inputs_.assign(L_, std::vector<std::vector<Component>>(B_ * d_));
    for (int b = 0; b < B_; ++b) {
      const DistributionWindow& w = *windows[b];
      if (static_cast<int>(w.size()) != L_) {
        throw DomainError("net", "window length does not match window_len");
      }
      for (int h = 0; h < L_; ++h) {
        if (static_cast<int>(w[h].size()) != d_) {
          throw DomainError("net", "marginal set dimension does not match d");
        }
        for (int j = 0; j < d_; ++j) {
          auto& dst = inputs_[h][b * d_ + j];
          const double mean = p_.norm.mean[j];
          const double scale = p_.norm.scale[j];
          // Canonical order (then merging identical components) makes the
          // embedding independent of how the input mixture is ordered.
          std::vector<Component> comps;
          for (const auto& c : w[h][j].components()) {
            if (c.weight == 0.0) continue;
            comps.push_back({c.weight, (c.mean - mean) / scale, c.stddev / scale});
          }
          std::sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
            return std::tie(a.mu, a.sd, a.w) < std::tie(b.mu, b.sd, b.w);
          });
          for (const auto& comp : comps) {
            if (!dst.empty() && dst.back().mu == comp.mu && dst.back().sd == comp.sd) {
              dst.back().w += comp.w;
            } else {
              dst.push_back(comp);
            }
          }
        }
      }
    }
  }

  void forward_step(int k) {
    Mat h = Mat::Zero(H_, B_);
    Mat c = Mat::Zero(H_, B_);
    Mat G(4 * H_, B_);
    for (int t = 0; t < L_; ++t) {
      G = P_[k + t];
      G.colwise() += b_gates_;
      if (t > 0) G.noalias() += w_hidden_ * h;
      Mat act(4 * H_, B_);
      act.topRows(2 * H_) = sigmoid(G.topRows(2 * H_));
      act.middleRows(2 * H_, H_) = G.middleRows(2 * H_, H_).array().tanh().matrix();
      act.bottomRows(H_) = sigmoid(G.bottomRows(H_));
      c = (act.middleRows(H_, H_).array() * c.array() +
           act.topRows(H_).array() * act.middleRows(2 * H_, H_).array())
              .matrix();
      Mat tc = c.array().tanh().matrix();
      h = (act.bottomRows(H_).array() * tc.array()).matrix();
      if (keep_cache_) {
        Cell& cell = cells_[k][t];
        cell.act = std::move(act);
        cell.c = c;
        cell.tanh_c = std::move(tc);
        cell.h = h;
      }
    }
    if (static_cast<int>(hidden_last_.size()) < K_) hidden_last_.resize(K_);
    if (keep_cache_) hidden_last_[k] = h;

    pi_[k].resize(d_);
    mu_[k].resize(d_);
    sd_[k].resize(d_);
    clamped_[k].resize(d_);
    for (int j = 0; j < d_; ++j) {
      const ConstMatMap Wj(p_.values.data() + lay_.head_w[j], 3 * M_, H_);
      const ConstVecMap bj(p_.values.data() + lay_.head_b[j], 3 * M_);
      Mat Y = Wj * h;
      Y.colwise() += bj;
      if (!Y.allFinite()) {
        throw NumericalFailureError("non-finite network output", k + 1);
      }
      Mat logits = Y.topRows(M_);
      const Eigen::RowVectorXd peak = logits.colwise().maxCoeff();
      logits.rowwise() -= peak;
      Mat e = logits.array().exp().matrix();
      const Eigen::RowVectorXd denom = e.colwise().sum();
      for (int b = 0; b < B_; ++b) e.col(b) /= denom(b);
      pi_[k][j] = std::move(e);
      mu_[k][j] = Y.middleRows(M_, M_);
      Mat sd = Y.bottomRows(M_).array().exp().matrix();
      clamped_[k][j] = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>(M_, B_);
      for (int b = 0; b < B_; ++b) {
        for (int i = 0; i < M_; ++i) {
          const bool low = !(sd(i, b) >= kSigmaMin);
          clamped_[k][j](i, b) = low;
          if (low) sd(i, b) = kSigmaMin;
        }
      }
      if (!mu_[k][j].allFinite() || !sd.allFinite()) {
        throw NumericalFailureError("non-finite mixture parameters", k + 1);
      }
      sd_[k][j] = std::move(sd);
    }
  }

  const ModelParams& p_;
  ParamLayout lay_;
  int d_, L_, nc_, M_, H_, In_, B_, K_;
  bool keep_cache_;
  ConstMatMap w_input_;
  ConstMatMap w_hidden_;
  ConstVecMap b_gates_;
  std::vector<Eigen::ArrayXd> centres_;
  std::vector<double> ell_;

  std::vector<std::vector<std::vector<Component>>> inputs_;  // [h][b * d + j]
  std::vector<Mat> E_;
  std::vector<Mat> P_;
  std::vector<std::vector<Mat>> pi_, mu_, sd_;  // [k][j], M x B, normalised
  std::vector<std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>> clamped_;
  std::vector<std::vector<Cell>> cells_;  // [k][t]
  std::vector<Mat> hidden_last_;
};

std::size_t chunk_count(std::size_t n) { return (n + kChunk - 1) / kChunk; }

void check_batch(std::span<const TrainingExample> batch, int steps) {
  if (steps < 1) throw DomainError("net", "recursion depth K must be >= 1");
  if (batch.empty()) throw DomainError("net", "empty batch");
  for (const auto& ex : batch) {
    if (static_cast<int>(ex.outcomes.size()) < steps) {
      throw DomainError("net", "K exceeds the available outcomes");
    }
  }
}

}  // namespace

void NetConfig::validate() const {
  if (d <= 0 || window_len <= 0 || n_centres <= 0 || n_components <= 0 ||
      hidden_size <= 0) {
    throw DomainError("net", "network configuration fields must be positive");
  }
  if (n_components > 64) {
    throw DomainError("net", "at most 64 mixture components are supported");
  }
}

Normaliser Normaliser::identity(int d, int n_centres) {
  Normaliser n;
  n.mean.assign(d, 0.0);
  n.scale.assign(d, 1.0);
  const KernelConfig k = KernelConfig::uniform(-2.0, 2.0, n_centres, 1.0);
  n.centres.assign(d, std::vector<double>(k.centres().begin(), k.centres().end()));
  return n;
}

Normaliser Normaliser::from_observations(std::span<const StateVec> obs,
                                         int n_centres) {
  if (obs.size() < 2) throw DomainError("net", "need >= 2 observations to normalise");
  Normaliser n;
  const double count = static_cast<double>(obs.size());
  for (std::size_t j = 0; j < kStateDim; ++j) {
    double mean = 0.0;
    for (const auto& s : obs) mean += s[j];
    mean /= count;
    double var = 0.0;
    double lo = obs[0][j], hi = obs[0][j];
    for (const auto& s : obs) {
      var += (s[j] - mean) * (s[j] - mean);
      lo = std::min(lo, s[j]);
      hi = std::max(hi, s[j]);
    }
    const double scale = std::sqrt(var / (count - 1.0));
    if (!(scale > 0.0)) throw DomainError("net", "constant variable cannot be normalised");
    n.mean.push_back(mean);
    n.scale.push_back(scale);
    const KernelConfig k =
        KernelConfig::uniform((lo - mean) / scale, (hi - mean) / scale, n_centres, 1.0);
    n.centres.emplace_back(k.centres().begin(), k.centres().end());
  }
  return n;
}

ParamLayout::ParamLayout(const NetConfig& cfg) {
  const std::size_t H = cfg.hidden_size;
  const std::size_t In = cfg.input_size();
  const std::size_t M = cfg.n_components;
  std::size_t off = 0;
  w_input = off;
  off += 4 * H * In;
  w_hidden = off;
  off += 4 * H * H;
  b_gates = off;
  off += 4 * H;
  for (int j = 0; j < cfg.d; ++j) {
    head_w.push_back(off);
    off += 3 * M * H;
    head_b.push_back(off);
    off += 3 * M;
  }
  raw_bandwidth = off;
  off += cfg.d;
  total = off;
}

double ModelParams::bandwidth(int j) const {
  return std::abs(values[layout().raw_bandwidth + j]);
}

std::size_t parameter_count(const NetConfig& cfg) {
  const std::size_t H = cfg.hidden_size;
  const std::size_t In = cfg.input_size();
  const std::size_t M = cfg.n_components;
  const std::size_t d = cfg.d;
  return 4 * (H * In + H * H + H) + d * (3 * M * H + 3 * M) + d;
}

ModelParams init_params(const NetConfig& cfg) {
  return init_params(cfg, Normaliser::identity(cfg.d, cfg.n_centres));
}

ModelParams init_params(const NetConfig& cfg, Normaliser norm) {
  cfg.validate();
  if (static_cast<int>(norm.mean.size()) != cfg.d ||
      static_cast<int>(norm.scale.size()) != cfg.d ||
      static_cast<int>(norm.centres.size()) != cfg.d) {
    throw DomainError("net", "normaliser dimension does not match d");
  }
  for (const auto& c : norm.centres) {
    if (static_cast<int>(c.size()) != cfg.n_centres) {
      throw DomainError("net", "normaliser centre count does not match n_centres");
    }
  }
  ModelParams p;
  p.config = cfg;
  p.norm = std::move(norm);
  const ParamLayout lay(cfg);
  p.values = Vec::Zero(static_cast<Eigen::Index>(lay.total));

  Rng rng(cfg.seed);
  const int H = cfg.hidden_size;
  const int M = cfg.n_components;
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  auto fill_uniform = [&](std::size_t off, std::size_t n, double b) {
    std::uniform_real_distribution<double> u(-b, b);
    for (std::size_t i = 0; i < n; ++i) p.values[off + i] = u(rng);
  };
  fill_uniform(lay.w_input, 4 * H * cfg.input_size(), bound);
  fill_uniform(lay.w_hidden, 4 * H * H, bound);
  for (int i = 0; i < H; ++i) p.values[lay.b_gates + H + i] = 1.0;  // forget gate
  for (int j = 0; j < cfg.d; ++j) {
    fill_uniform(lay.head_w[j], 3 * M * H, 0.1 * bound);
    for (int i = 0; i < M; ++i) {
      const double spread = M > 1 ? -1.0 + 2.0 * i / (M - 1) : 0.0;
      p.values[lay.head_b[j] + M + i] = spread;
      p.values[lay.head_b[j] + 2 * M + i] = std::log(0.5);
    }
  }
  for (int j = 0; j < cfg.d; ++j) p.values[lay.raw_bandwidth + j] = 0.5;
  return p;
}

MarginalSet forward(const ModelParams& params, const DistributionWindow& window) {
  return rollout(params, window, 1).front();
}

std::vector<MarginalSet> rollout(const ModelParams& params,
                                 const DistributionWindow& window, int steps) {
  return std::move(rollout_batch(params, std::span(&window, 1), steps).front());
}

std::vector<std::vector<MarginalSet>> rollout_batch(
    const ModelParams& params, std::span<const DistributionWindow> windows,
    int steps) {
  if (steps < 1) throw DomainError("net", "rollout needs K >= 1");
  std::vector<std::vector<MarginalSet>> out(windows.size());
  parallel_for(chunk_count(windows.size()), [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(windows.size(), begin + kChunk);
    std::vector<const DistributionWindow*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&windows[i]);
    Engine engine(params, ptrs, steps, false);
    engine.run_forward();
    auto res = engine.outputs();
    for (std::size_t i = begin; i < end; ++i) out[i] = std::move(res[i - begin]);
  });
  return out;
}

LossResult loss_and_gradient(const ModelParams& params,
                             std::span<const TrainingExample> batch, int steps,
                             const LossOptions& opts) {
  check_batch(batch, steps);
  const std::size_t n_chunks = chunk_count(batch.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  struct Partial {
    double loss = 0.0;
    Gradient grad;
    std::size_t truncated = 0;
    std::vector<double> per_lead;
  };
  std::vector<Partial> parts(n_chunks);
  parallel_for(n_chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(batch.size(), begin + kChunk);
    std::vector<const DistributionWindow*> windows;
    std::vector<const std::vector<StateVec>*> targets;
    for (std::size_t i = begin; i < end; ++i) {
      windows.push_back(&batch[i].window);
      targets.push_back(&batch[i].outcomes);
    }
    Partial& part = parts[c];
    part.per_lead.assign(steps, 0.0);
    if (opts.compute_gradient) part.grad = Gradient::Zero(params.values.size());
    Engine engine(params, windows, steps, opts.compute_gradient);
    engine.run_forward();
    part.loss = engine.backward(targets, inv_n, opts.step_loss_cap,
                                opts.compute_gradient, &part.grad,
                                &part.truncated, &part.per_lead);
  });
  LossResult out;
  out.per_lead.assign(steps, 0.0);
  if (opts.compute_gradient) out.grad = Gradient::Zero(params.values.size());
  double total = 0.0;
  for (auto& part : parts) {
    total += part.loss;
    if (opts.compute_gradient) out.grad += part.grad;
    out.n_truncated += part.truncated;
    for (int k = 0; k < steps; ++k) out.per_lead[k] += part.per_lead[k];
  }
  out.loss = total * inv_n;
  for (auto& v : out.per_lead) v *= inv_n;
  return out;
}

std::vector<std::vector<double>> rollout_scores(
    const ModelParams& params, std::span<const TrainingExample> batch,
    int steps) {
  check_batch(batch, steps);
  std::vector<std::vector<double>> out(batch.size());
  parallel_for(chunk_count(batch.size()), [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(batch.size(), begin + kChunk);
    std::vector<const DistributionWindow*> windows;
    std::vector<const std::vector<StateVec>*> targets;
    for (std::size_t i = begin; i < end; ++i) {
      windows.push_back(&batch[i].window);
      targets.push_back(&batch[i].outcomes);
    }
    Engine engine(params, windows, steps, false);
    engine.run_forward();
    auto res = engine.scores(targets);
    for (std::size_t i = begin; i < end; ++i) out[i] = std::move(res[i - begin]);
  });
  return out;
}

namespace {

// Scalar re-statement of the loss (value only) in extended precision. Used as
// the finite-difference objective: in double, rounding in a loss of O(10)
// swamps central differences of gradient entries below about 1e-6.
long double reference_loss(const ModelParams& params,
                           std::span<const TrainingExample> batch, int steps,
                           const Eigen::VectorXd& values) {
  using T = long double;
  const NetConfig& cfg = params.config;
  const ParamLayout lay(cfg);
  const int d = cfg.d, L = cfg.window_len, nc = cfg.n_centres, M = cfg.n_components,
            H = cfg.hidden_size, In = cfg.input_size();
  auto v = [&](std::size_t i) { return static_cast<T>(values[static_cast<Eigen::Index>(i)]); };
  auto sigm = [](T x) { return 1.0L / (1.0L + std::exp(-x)); };

  std::vector<T> ell(d);
  for (int j = 0; j < d; ++j) ell[j] = std::abs(v(lay.raw_bandwidth + j));

  // (w, mu, sd) triples per variable, normalised units.
  using Mix = std::vector<std::array<T, 3>>;
  auto embed = [&](const std::vector<Mix>& set) {
    std::vector<T> z(In, 0.0L);
    for (int j = 0; j < d; ++j) {
      for (const auto& [w, mu, sd] : set[j]) {
        const T var = ell[j] * ell[j] + sd * sd;
        const T r = ell[j] / std::sqrt(var);
        for (int c = 0; c < nc; ++c) {
          const T diff = mu - static_cast<T>(params.norm.centres[j][c]);
          z[j * nc + c] += w * r * std::exp(-diff * diff / (2.0L * var));
        }
      }
    }
    return z;
  };

  T total = 0.0L;
  for (const auto& ex : batch) {
    std::vector<std::vector<T>> entries;
    for (int h = 0; h < L; ++h) {
      std::vector<Mix> set(d);
      for (int j = 0; j < d; ++j) {
        const T mean = params.norm.mean[j], scale = params.norm.scale[j];
        for (const auto& c : ex.window[h][j].components()) {
          if (c.weight == 0.0) continue;
          set[j].push_back({static_cast<T>(c.weight), (static_cast<T>(c.mean) - mean) / scale,
                            static_cast<T>(c.stddev) / scale});
        }
      }
      entries.push_back(embed(set));
    }
    for (int k = 0; k < steps; ++k) {
      std::vector<T> hs(H, 0.0L), cs(H, 0.0L);
      for (int t = 0; t < L; ++t) {
        const auto& e = entries[k + t];
        std::vector<T> g(4 * H);
        for (int r = 0; r < 4 * H; ++r) {
          T a = v(lay.b_gates + r);
          for (int c = 0; c < In; ++c) a += v(lay.w_input + c * 4 * H + r) * e[c];
          for (int c = 0; c < H; ++c) a += v(lay.w_hidden + c * 4 * H + r) * hs[c];
          g[r] = a;
        }
        for (int r = 0; r < H; ++r) {
          cs[r] = sigm(g[H + r]) * cs[r] + sigm(g[r]) * std::tanh(g[2 * H + r]);
          hs[r] = sigm(g[3 * H + r]) * std::tanh(cs[r]);
        }
      }
      T step = 0.0L;
      std::vector<Mix> out(d);
      for (int j = 0; j < d; ++j) {
        std::vector<T> y(3 * M);
        for (int r = 0; r < 3 * M; ++r) {
          T a = v(lay.head_b[j] + r);
          for (int c = 0; c < H; ++c) a += v(lay.head_w[j] + c * 3 * M + r) * hs[c];
          y[r] = a;
        }
        const T peak = *std::max_element(y.begin(), y.begin() + M);
        T denom = 0.0L;
        for (int i = 0; i < M; ++i) denom += std::exp(y[i] - peak);
        const T target = (static_cast<T>(ex.outcomes[k][j]) - params.norm.mean[j]) /
                         params.norm.scale[j];
        T p = 0.0L;
        for (int i = 0; i < M; ++i) {
          const T w = std::exp(y[i] - peak) / denom;
          T sd = std::exp(y[2 * M + i]);
          if (!(sd >= kSigmaMin)) sd = kSigmaMin;
          const T z = (target - y[M + i]) / sd;
          p += w * std::exp(-0.5L * z * z) / (sd * std::sqrt(2.0L * std::numbers::pi_v<T>));
          out[j].push_back({w, y[M + i], sd});
        }
        step += -std::log(p) + std::log(static_cast<T>(params.norm.scale[j]));
      }
      total += step;
      if (k + 1 < steps) entries.push_back(embed(out));
    }
  }
  return total / static_cast<T>(batch.size());
}

}  // namespace

GradientCheck compare_gradient(
    const std::function<long double(const Eigen::VectorXd&)>& objective,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double fd_step) {
  if (analytic.size() != x.size()) {
    throw DomainError("net", "gradient size does not match parameters");
  }
  GradientCheck out;
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double up_x = x[i] + fd_step;
    const double down_x = x[i] - fd_step;
    probe[i] = up_x;
    const long double up = objective(probe);
    probe[i] = down_x;
    const long double down = objective(probe);
    probe[i] = x[i];
    const auto numeric = static_cast<double>((up - down) / (static_cast<long double>(up_x) -
                                                            static_cast<long double>(down_x)));
    const double denom = std::abs(analytic[i]) + std::abs(numeric);
    if (denom <= 1e-8) {
      ++out.excluded;
      continue;
    }
    ++out.checked;
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > out.max_relative_error) {
      out.max_relative_error = rel;
      out.worst_index = static_cast<std::size_t>(i);
    }
  }
  return out;
}

long double reference_loss(const ModelParams& params, std::span<const TrainingExample> batch,
                           int steps) {
  check_batch(batch, steps);
  return reference_loss(params, batch, steps, params.values);
}

GradientCheck check_gradient(const ModelParams& params,
                             std::span<const TrainingExample> batch, int steps,
                             double fd_step) {
  check_batch(batch, steps);
  const LossResult base = loss_and_gradient(params, batch, steps);
  return compare_gradient(
      [&](const Eigen::VectorXd& x) { return reference_loss(params, batch, steps, x); },
      params.values, base.grad, fd_step);
}

}  // namespace d2d
