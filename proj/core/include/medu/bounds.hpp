#pragma once

#include <cstdint>
#include <vector>

#include "medu/codec.hpp"

namespace medu {

/// Constants feeding every bound evaluator. Either declared by the caller or
/// fitted from recorded histories (see estimate_constants).
struct BoundConstants {
  double g_sq = 0.0;                // uniform second-moment bound on ||g||^2
  double a = 0.0;                   // full-gradient decay a/(t+nu)^alpha
  double nu = 1.0;
  double alpha = 1.0;
  double b = 0.0;                   // cross-round correlation b/|t-t'|^beta
  double beta = 2.0;
  double c = 0.0;                   // reconstruction-error correlation c/|t-t'|^zeta
  double zeta = 2.0;
  DeltaSchedule delta;
  double sigma_sq_sdq = 0.0;        // basic-cell second moment of the quantizer
  double s = 0.0;                   // sampling factor, see s_factor
  std::uint32_t users = 0;          // U
  std::uint32_t stored_users = 0;   // U-bar
  std::uint64_t param_count = 0;    // M
  std::uint16_t subvec_len = 1;     // L

  enum class Source { Declared, Empirical };
  Source source = Source::Declared;

  void validate() const;  // beta > 1, zeta > 1, alpha > 0, scales >= 0
};

/// Sampling factor of the selection variance:
/// 1/(Ubar-1) with replacement, (1/(Ubar-1)) * (U-Ubar)/(U-2) without.
/// Requires Ubar >= 2 and U >= 3.
double s_factor(std::uint32_t users, std::uint32_t stored_users,
                bool with_replacement);

/// Ordered double sum over t != t', t, t' in 0..T of eta_t*eta_t'/|t-t'|^p.
double eta_cross_sum(const EtaSchedule& eta, int final_round, double exponent);

/// Variance bound on the compressed-vs-noncompressed unlearned models:
///   2S (G^2 sum eta^2 + B sum eta eta'/|dt|^beta)
/// + (S + 1/(U-1)) * (4M/L) * (sum eta^2 (delta^2 + sigma^2) + C sum eta eta'/|dt|^zeta).
double var_bound_medu(const BoundConstants& k, const EtaSchedule& eta,
                      int final_round);

/// Second-moment bound on train-from-scratch vs non-compressed unlearning:
///   4G^2 sum eta^2
/// + 4A^2 sum_{t != t'} (eta_t/(t+nu)^alpha) (eta_t'/(t'+nu)^alpha)
/// + (4B/(U-1)) sum eta eta'/|dt|^beta.
double mii_bound_fu(const BoundConstants& k, const EtaSchedule& eta,
                    int final_round);

/// mii_bound_fu + var_bound_medu.
double mii_bound_medu(const BoundConstants& k, const EtaSchedule& eta,
                      int final_round);

/// Variance of the mean of n uniform draws from a finite population of size N
/// with variance sigma_sq: sigma^2/n with replacement, (sigma^2/n)(N-n)/(N-1)
/// without.
double sample_mean_variance(std::uint64_t population, std::uint64_t n,
                            double sigma_sq, bool with_replacement);

/// Partial ordered double sum with eta_t = a/(t+b0):
/// sum_{t != t', 0..T} eta_t eta_t' / |t-t'|^p.
double partial_double_sum(int final_round, double exponent, double a,
                          double b0);

/// partial_double_sum(T) - partial_double_sum(T-1), computed in O(T).
double double_sum_increment(int final_round, double exponent, double a,
                            double b0);

struct DoubleSumProbe {
  bool converges = false;
  double last_increment = 0.0;         // increment at the largest probed T
  std::vector<double> window_sums;     // growth over doubling windows
};

/// Numeric convergence probe: exponents > 1 show vanishing increments and
/// shrinking doubling windows; p <= 1 keeps adding roughly constant window
/// mass, which is flagged as divergence.
DoubleSumProbe probe_double_sum(double exponent, double a, double b0,
                                int max_round = 100000);

struct LagStat {
  int lag = 0;
  double mean = 0.0;      // mean inner product at this lag
  double std_err = 0.0;
  std::size_t samples = 0;
};

struct ConstantsFit {
  BoundConstants constants;
  double beta_raw = 0.0;   // least-squares slope before clamping
  double zeta_raw = 0.0;
  double alpha_raw = 0.0;  // squared-norm decay exponent as fitted
  double alpha_residual = 0.0;
  double beta_residual = 0.0;
  double zeta_residual = 0.0;
  bool cross_round_consistent_with_zero = false;  // all lag CIs contain 0
  std::vector<LagStat> gradient_lags;  // cross-round inner products by lag
  std::vector<LagStat> error_lags;     // reconstruction-error products by lag
  std::vector<LagStat> norm_decay;     // per-round ||g||^2 level, lag = t
};

/// max over stats of (|mean| + 2 std_err) * (lag + shift)^exponent: the
/// smallest amplitude whose power law dominates every point's upper CI.
double envelope_from_stats(const std::vector<LagStat>& stats, double shift,
                           double exponent);

/// Fit the assumption constants from recorded raw histories. G^2 is the
/// maximum observed squared norm; decay and correlation constants are fitted
/// on log scale and then enveloped so the fitted curve dominates every
/// per-lag mean plus two standard errors. The decay pair is converted to the
/// norm scale the bound formula uses (amplitude sqrt, exponent halved). When
/// `codec` is given, the raw history is replayed through the encoder to fit
/// the reconstruction-error constants (C, zeta); otherwise they are zero.
/// `exclude`, when known, aligns the two stores so cross-trajectory
/// correlation samples enter the fit. Requires at least 5 rounds.
ConstantsFit estimate_constants(const HistoryStore& fl_raw,
                                const HistoryStore& retrain_raw,
                                const CodecConfig* codec,
                                std::optional<std::uint32_t> exclude = std::nullopt);

}  // namespace medu
