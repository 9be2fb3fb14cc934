#include "medu/bounds.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace medu {
namespace {

double eta_sq_sum(const EtaSchedule& eta, int final_round) {
  double s = 0.0;
  for (int t = 0; t <= final_round; ++t) {
    const double e = eta.at(t);
    s += e * e;
  }
  return s;
}

struct LogLinearFit {
  double intercept = 0.0;  // log amplitude
  double slope = 0.0;
  double residual = 0.0;  // RMS residual in log space
  bool ok = false;
};

// Least squares of log(y) = intercept + slope * log(x), positive y only.
LogLinearFit fit_log_log(const std::vector<double>& x,
                         const std::vector<double>& y) {
  LogLinearFit fit;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] > 0.0 && x[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  }
  if (lx.size() < 2) return fit;
  const double n = static_cast<double>(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) {
    // All abscissae equal; treat as flat.
    fit.intercept = sy / n;
    fit.slope = 0.0;
    fit.ok = true;
    return fit;
  }
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double rss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
    rss += r * r;
  }
  fit.residual = std::sqrt(rss / n);
  fit.ok = true;
  return fit;
}

std::vector<const std::vector<ParamVector>*> round_views(
    const HistoryStore& store) {
  std::vector<const std::vector<ParamVector>*> out;
  for (const RawRound& r : store.raw_rounds) out.push_back(&r.per_user);
  return out;
}

double dot(const ParamVector& a, const ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

LagStat stat_of(int lag, const std::vector<double>& samples) {
  LagStat st;
  st.lag = lag;
  st.samples = samples.size();
  if (samples.empty()) return st;
  double sum = 0.0;
  for (double v : samples) sum += v;
  st.mean = sum / static_cast<double>(samples.size());
  double var = 0.0;
  for (double v : samples) var += (v - st.mean) * (v - st.mean);
  if (samples.size() > 1) {
    var /= static_cast<double>(samples.size() - 1);
    st.std_err = std::sqrt(var / static_cast<double>(samples.size()));
  }
  return st;
}

}  // namespace

double envelope_from_stats(const std::vector<LagStat>& stats, double shift,
                           double exponent) {
  double amp = 0.0;
  for (const LagStat& st : stats) {
    const double y = std::abs(st.mean) + 2.0 * st.std_err;
    amp = std::max(amp, y * std::pow(static_cast<double>(st.lag) + shift, exponent));
  }
  return amp;
}

void BoundConstants::validate() const {
  if (g_sq < 0 || a < 0 || b < 0 || c < 0 || s < 0 || sigma_sq_sdq < 0) {
    throw std::invalid_argument("scale constants must be non-negative");
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(nu > 0.0)) throw std::invalid_argument("nu must be positive");
  if (!(beta > 1.0)) throw std::invalid_argument("beta must exceed 1");
  if (!(zeta > 1.0)) throw std::invalid_argument("zeta must exceed 1");
  if (users < 2) throw std::invalid_argument("need at least two users");
  if (param_count == 0 || subvec_len == 0) {
    throw std::invalid_argument("param_count and subvec_len must be positive");
  }
}

double s_factor(std::uint32_t users, std::uint32_t stored_users,
                bool with_replacement) {
  if (stored_users < 2) {
    throw std::invalid_argument("sampling factor undefined for stored_users < 2");
  }
  if (users < 3) throw std::invalid_argument("sampling factor needs users >= 3");
  const double base = 1.0 / (static_cast<double>(stored_users) - 1.0);
  if (with_replacement) return base;
  return base * (static_cast<double>(users) - stored_users) /
         (static_cast<double>(users) - 2.0);
}

double eta_cross_sum(const EtaSchedule& eta, int final_round, double exponent) {
  std::vector<double> etas(static_cast<std::size_t>(final_round) + 1);
  for (int t = 0; t <= final_round; ++t) etas[static_cast<std::size_t>(t)] = eta.at(t);
  double total = 0.0;
  for (int tp = 1; tp <= final_round; ++tp) {
    double inner = 0.0;
    for (int t = 0; t < tp; ++t) {
      inner += etas[static_cast<std::size_t>(t)] /
               std::pow(static_cast<double>(tp - t), exponent);
    }
    total += etas[static_cast<std::size_t>(tp)] * inner;
  }
  return 2.0 * total;  // ordered pairs count each unordered pair twice
}

double var_bound_medu(const BoundConstants& k, const EtaSchedule& eta,
                      int final_round) {
  k.validate();
  const double sum_eta_sq = eta_sq_sum(eta, final_round);
  const double selection_term =
      2.0 * k.s *
      (k.g_sq * sum_eta_sq + k.b * eta_cross_sum(eta, final_round, k.beta));
  const std::size_t n_sub =
      (static_cast<std::size_t>(k.param_count) + k.subvec_len - 1) / k.subvec_len;
  double quant_sum = 0.0;
  for (int t = 0; t <= final_round; ++t) {
    const double e = eta.at(t);
    const double d = k.delta.at(t);
    quant_sum += e * e * (d * d + k.sigma_sq_sdq);
  }
  const double compression_term =
      (k.s + 1.0 / (static_cast<double>(k.users) - 1.0)) * 4.0 *
      static_cast<double>(n_sub) *
      (quant_sum + k.c * eta_cross_sum(eta, final_round, k.zeta));
  return selection_term + compression_term;
}

double mii_bound_fu(const BoundConstants& k, const EtaSchedule& eta,
                    int final_round) {
  k.validate();
  const double first = 4.0 * k.g_sq * eta_sq_sum(eta, final_round);
  // sum over ordered pairs t != t' of f_t f_t' with f_t = eta_t/(t+nu)^alpha,
  // i.e. (sum f)^2 - sum f^2.
  double f_sum = 0.0, f_sq_sum = 0.0;
  for (int t = 0; t <= final_round; ++t) {
    const double f = eta.at(t) / std::pow(static_cast<double>(t) + k.nu, k.alpha);
    f_sum += f;
    f_sq_sum += f * f;
  }
  const double second = 4.0 * k.a * k.a * (f_sum * f_sum - f_sq_sum);
  const double third = 4.0 * k.b / (static_cast<double>(k.users) - 1.0) *
                       eta_cross_sum(eta, final_round, k.beta);
  return first + second + third;
}

double mii_bound_medu(const BoundConstants& k, const EtaSchedule& eta,
                      int final_round) {
  return mii_bound_fu(k, eta, final_round) + var_bound_medu(k, eta, final_round);
}

double sample_mean_variance(std::uint64_t population, std::uint64_t n,
                            double sigma_sq, bool with_replacement) {
  if (n == 0) throw std::invalid_argument("sample size must be positive");
  if (population == 0) throw std::invalid_argument("population must be non-empty");
  if (!with_replacement && n > population) {
    throw std::invalid_argument("cannot sample more than the population");
  }
  if (sigma_sq < 0.0) throw std::invalid_argument("variance must be >= 0");
  const double base = sigma_sq / static_cast<double>(n);
  if (with_replacement) return base;
  if (population == 1) return 0.0;
  return base * (static_cast<double>(population) - static_cast<double>(n)) /
         (static_cast<double>(population) - 1.0);
}

double partial_double_sum(int final_round, double exponent, double a,
                          double b0) {
  if (final_round < 1) throw std::invalid_argument("need final_round >= 1");
  if (!(a > 0.0) || !(b0 > 0.0)) throw std::invalid_argument("need a, b0 > 0");
  if (!(exponent > 0.0)) throw std::invalid_argument("need exponent > 0");
  const std::size_t n = static_cast<std::size_t>(final_round) + 1;
  std::vector<double> etas(n), inv_pow(n);
  for (std::size_t t = 0; t < n; ++t) {
    etas[t] = a / (static_cast<double>(t) + b0);
  }
  for (std::size_t k = 1; k < n; ++k) {
    inv_pow[k] = std::pow(static_cast<double>(k), -exponent);
  }
  double total = 0.0;
  for (std::size_t tp = 1; tp < n; ++tp) {
    double inner = 0.0;
    const double* e = etas.data();
    const double* p = inv_pow.data() + tp;
    for (std::size_t t = 0; t < tp; ++t) inner += e[t] * p[-static_cast<std::ptrdiff_t>(t)];
    total += etas[tp] * inner;
  }
  return 2.0 * total;
}

double double_sum_increment(int final_round, double exponent, double a,
                            double b0) {
  if (final_round < 1) throw std::invalid_argument("need final_round >= 1");
  double inner = 0.0;
  for (int t = 0; t < final_round; ++t) {
    inner += (a / (static_cast<double>(t) + b0)) /
             std::pow(static_cast<double>(final_round - t), exponent);
  }
  return 2.0 * (a / (static_cast<double>(final_round) + b0)) * inner;
}

DoubleSumProbe probe_double_sum(double exponent, double a, double b0,
                                int max_round) {
  if (!(exponent > 0.0)) throw std::invalid_argument("need exponent > 0");
  DoubleSumProbe probe;

  // Double-sum mass over doubling windows, up to 16k rounds.
  const std::vector<int> checkpoints = {1000, 2000, 4000, 8000, 16000};
  std::vector<double> partials;
  {
    const std::size_t n = static_cast<std::size_t>(checkpoints.back()) + 1;
    std::vector<double> etas(n), inv_pow(n);
    for (std::size_t t = 0; t < n; ++t) etas[t] = a / (static_cast<double>(t) + b0);
    for (std::size_t k = 1; k < n; ++k) {
      inv_pow[k] = std::pow(static_cast<double>(k), -exponent);
    }
    double total = 0.0;
    std::size_t next_cp = 0;
    for (std::size_t tp = 1; tp < n; ++tp) {
      double inner = 0.0;
      const double* e = etas.data();
      const double* p = inv_pow.data() + tp;
      for (std::size_t t = 0; t < tp; ++t) inner += e[t] * p[-static_cast<std::ptrdiff_t>(t)];
      total += 2.0 * etas[tp] * inner;
      if (next_cp < checkpoints.size() &&
          tp == static_cast<std::size_t>(checkpoints[next_cp])) {
        partials.push_back(total);
        ++next_cp;
      }
    }
  }
  for (std::size_t i = 1; i < partials.size(); ++i) {
    probe.window_sums.push_back(partials[i] - partials[i - 1]);
  }
  probe.last_increment = double_sum_increment(max_round, exponent, a, b0);

  // The convergence guarantee rests on the tail series sum_u u^(-p), which
  // the double sum is majorized by. Its window mass scales like 4^(1-p)
  // across a 4x shift, so p <= 1 keeps (or grows) the mass while p >= 1.5
  // at least halves it; the cut sits between the two regimes.
  auto p_series_window = [exponent](std::uint64_t from, std::uint64_t to) {
    double s = 0.0;
    for (std::uint64_t u = from + 1; u <= to; ++u) {
      s += std::pow(static_cast<double>(u), -exponent);
    }
    return s;
  };
  const double w0 = p_series_window(10000, 20000);
  const double w1 = p_series_window(40000, 80000);
  const bool tail_vanishes = w1 < 0.75 * w0;

  bool windows_shrink = true;
  for (std::size_t i = 1; i < probe.window_sums.size(); ++i) {
    if (!(probe.window_sums[i] < probe.window_sums[i - 1])) windows_shrink = false;
  }
  probe.converges = tail_vanishes && windows_shrink && probe.last_increment < 1e-8;
  return probe;
}

ConstantsFit estimate_constants(const HistoryStore& fl_raw,
                                const HistoryStore& retrain_raw,
                                const CodecConfig* codec,
                                std::optional<std::uint32_t> exclude) {
  if (fl_raw.header.mode != StoreMode::Raw ||
      retrain_raw.header.mode != StoreMode::Raw) {
    throw std::invalid_argument("constant estimation needs raw stores");
  }
  const int rounds = static_cast<int>(fl_raw.round_count());
  if (rounds < 5 || static_cast<int>(retrain_raw.round_count()) < 5) {
    throw std::invalid_argument("need at least 5 recorded rounds to fit constants");
  }

  ConstantsFit fit;
  BoundConstants& k = fit.constants;
  k.source = BoundConstants::Source::Empirical;
  k.users = fl_raw.header.users;
  k.param_count = fl_raw.header.param_count;

  const std::array<const HistoryStore*, 2> stores = {&fl_raw, &retrain_raw};

  // G^2: maximum observed squared norm, a hard envelope of the second moment.
  double g_sq = 0.0;
  for (const HistoryStore* store : stores) {
    for (const auto* round : round_views(*store)) {
      for (const ParamVector& g : *round) g_sq = std::max(g_sq, dot(g, g));
    }
  }
  k.g_sq = g_sq;

  // Gradient-norm decay: per-round mean of ||g||^2 plus two standard errors,
  // enveloped across both trajectories.
  std::vector<double> ts, ys;
  {
    const int common = std::min<int>(rounds, static_cast<int>(retrain_raw.round_count()));
    for (int t = 0; t < common; ++t) {
      double y = 0.0;
      for (const HistoryStore* store : stores) {
        std::vector<double> norms;
        for (const ParamVector& g :
             store->raw_rounds[static_cast<std::size_t>(t)].per_user) {
          norms.push_back(dot(g, g));
        }
        LagStat st = stat_of(t, norms);
        y = std::max(y, st.mean + 2.0 * st.std_err);
      }
      ts.push_back(static_cast<double>(t));
      ys.push_back(y);
      LagStat decay;
      decay.lag = t;
      decay.mean = y;
      fit.norm_decay.push_back(decay);
    }
  }
  {
    double best_residual = std::numeric_limits<double>::infinity();
    double best_nu = 1.0, best_alpha = 1.0;
    for (double nu : {0.5, 1.0, 2.0, 5.0, 10.0}) {
      std::vector<double> shifted(ts.size());
      for (std::size_t i = 0; i < ts.size(); ++i) shifted[i] = ts[i] + nu;
      const LogLinearFit f = fit_log_log(shifted, ys);
      if (!f.ok) continue;
      if (f.residual < best_residual) {
        best_residual = f.residual;
        best_nu = nu;
        best_alpha = -f.slope;
      }
    }
    fit.alpha_raw = best_alpha;
    fit.alpha_residual = std::isfinite(best_residual) ? best_residual : 0.0;
    k.nu = best_nu;
    // The squared-norm fit y ~ amp/(t+nu)^alpha_sq converts to the norm-scale
    // pair (sqrt(amp), alpha_sq/2) that the cross-term formula multiplies.
    const double amp =
        envelope_from_stats(fit.norm_decay, k.nu, std::max(best_alpha, 2e-6));
    k.alpha = std::max(best_alpha, 2e-6) / 2.0;
    k.a = std::sqrt(amp);
  }

  // Cross-round gradient correlation per lag. With a known excluded user the
  // two trajectories can be aligned per kept client, so mixed products
  // (one gradient from each trajectory) join the pool.
  {
    std::vector<std::uint32_t> kept;
    if (exclude && retrain_raw.header.users + 1 == fl_raw.header.users) {
      for (std::uint32_t u = 0; u < fl_raw.header.users; ++u) {
        if (u != *exclude) kept.push_back(u);
      }
    }
    const int retrain_rounds = static_cast<int>(retrain_raw.round_count());
    std::vector<double> lag_x, lag_y;
    for (int lag = 1; lag < rounds; ++lag) {
      std::vector<double> samples;
      for (const HistoryStore* store : stores) {
        const int n = static_cast<int>(store->round_count());
        for (int t = 0; t + lag < n; ++t) {
          const auto& g0 = store->raw_rounds[static_cast<std::size_t>(t)].per_user;
          const auto& g1 =
              store->raw_rounds[static_cast<std::size_t>(t + lag)].per_user;
          for (std::size_t u = 0; u < g0.size(); ++u) {
            samples.push_back(dot(g0[u], g1[u]));
          }
        }
      }
      if (!kept.empty()) {
        for (int t = 0; t + lag < std::min(rounds, retrain_rounds); ++t) {
          const auto& fl0 = fl_raw.raw_rounds[static_cast<std::size_t>(t)].per_user;
          const auto& fl1 =
              fl_raw.raw_rounds[static_cast<std::size_t>(t + lag)].per_user;
          const auto& re0 =
              retrain_raw.raw_rounds[static_cast<std::size_t>(t)].per_user;
          const auto& re1 =
              retrain_raw.raw_rounds[static_cast<std::size_t>(t + lag)].per_user;
          for (std::size_t j = 0; j < kept.size(); ++j) {
            samples.push_back(dot(fl0[kept[j]], re1[j]));
            samples.push_back(dot(re0[j], fl1[kept[j]]));
          }
        }
      }
      fit.gradient_lags.push_back(stat_of(lag, samples));
      const LagStat& st = fit.gradient_lags.back();
      lag_x.push_back(static_cast<double>(lag));
      lag_y.push_back(std::abs(st.mean) + 2.0 * st.std_err);
    }
    const LogLinearFit f = fit_log_log(lag_x, lag_y);
    fit.beta_raw = f.ok ? -f.slope : 0.0;
    fit.beta_residual = f.residual;
    k.beta = std::max(fit.beta_raw, 1.0 + 1e-9);
    k.b = envelope_from_stats(fit.gradient_lags, 0.0, k.beta);
    fit.cross_round_consistent_with_zero = true;
    for (const LagStat& st : fit.gradient_lags) {
      if (std::abs(st.mean) > 2.0 * st.std_err) {
        fit.cross_round_consistent_with_zero = false;
      }
    }
  }

  // Reconstruction-error correlation, observed by replaying the encoder.
  k.c = 0.0;
  k.zeta = 2.0;
  if (codec != nullptr) {
    CodecConfig cfg = *codec;
    cfg.total_users = fl_raw.header.users;
    MeduEncoder encoder(cfg, fl_raw.header.param_count);
    const std::size_t l = cfg.subvec_len;
    const std::size_t padded =
        (static_cast<std::size_t>(fl_raw.header.param_count) + l - 1) / l * l;
    const std::size_t n_sub = padded / l;
    // errors[u][m] is the time series of reconstruction errors of that
    // sub-vector, one entry per round once the user has a reference.
    std::vector<std::vector<std::vector<std::array<double, 2>>>> errors(
        cfg.total_users,
        std::vector<std::vector<std::array<double, 2>>>(n_sub));
    std::vector<double> padded_grad(padded, 0.0);
    for (const RawRound& round : fl_raw.raw_rounds) {
      RoundGradients grads;
      grads.t = round.t;
      grads.per_user = round.per_user;
      encoder.encode_round(grads);
      for (std::uint32_t u = 0; u < cfg.total_users; ++u) {
        const auto& ref = encoder.reference(u);
        if (!ref.has_value()) continue;
        std::fill(padded_grad.begin(), padded_grad.end(), 0.0);
        std::copy(round.per_user[u].begin(), round.per_user[u].end(),
                  padded_grad.begin());
        for (std::size_t m = 0; m < n_sub; ++m) {
          std::array<double, 2> e{};
          for (std::size_t i = 0; i < l; ++i) {
            e[i] = padded_grad[m * l + i] - (*ref)[m * l + i];
          }
          errors[u][m].push_back(e);
        }
      }
    }
    std::vector<double> lag_x, lag_y;
    for (int lag = 1; lag < rounds; ++lag) {
      std::vector<double> samples;
      for (const auto& per_user : errors) {
        for (const auto& series : per_user) {
          for (std::size_t t = 0; t + static_cast<std::size_t>(lag) < series.size(); ++t) {
            const auto& e0 = series[t];
            const auto& e1 = series[t + static_cast<std::size_t>(lag)];
            double ip = 0.0;
            for (std::size_t i = 0; i < l; ++i) ip += e0[i] * e1[i];
            samples.push_back(ip);
          }
        }
      }
      fit.error_lags.push_back(stat_of(lag, samples));
      const LagStat& st = fit.error_lags.back();
      lag_x.push_back(static_cast<double>(lag));
      lag_y.push_back(std::abs(st.mean) + 2.0 * st.std_err);
    }
    const LogLinearFit f = fit_log_log(lag_x, lag_y);
    fit.zeta_raw = f.ok ? -f.slope : 0.0;
    fit.zeta_residual = f.residual;
    k.zeta = std::max(fit.zeta_raw, 1.0 + 1e-9);
    k.c = envelope_from_stats(fit.error_lags, 0.0, k.zeta);

    k.stored_users = cfg.stored_users;
    k.subvec_len = cfg.subvec_len;
    k.delta = cfg.delta;
    if (!cfg.bypass) {
      k.sigma_sq_sdq = encoder.lattice()->second_moment;
    }
    if (cfg.stored_users >= 2 && cfg.total_users >= 3) {
      k.s = s_factor(cfg.total_users, cfg.stored_users, cfg.with_replacement);
    }
  } else {
    k.stored_users = k.users;
    k.subvec_len = 1;
    k.delta = DeltaSchedule::constant(0.0);
  }

  k.validate();
  return fit;
}

}  // namespace medu
