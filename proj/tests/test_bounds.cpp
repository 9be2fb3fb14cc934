#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "medu/bounds.hpp"

using namespace medu;

namespace {

BoundConstants worked_constants() {
  BoundConstants k;
  k.g_sq = 1.0;
  k.a = 0.0;
  k.nu = 1.0;
  k.alpha = 1.0;
  k.b = 0.0;
  k.beta = 2.0;
  k.c = 0.0;
  k.zeta = 2.0;
  k.delta = DeltaSchedule::constant(0.0);
  k.sigma_sq_sdq = 1.0 / 12.0;
  k.s = 1.0 / 9.0;
  k.users = 25;
  k.stored_users = 10;
  k.param_count = 8;  // with L = 2: M/L = 4 sub-vectors
  k.subvec_len = 2;
  return k;
}

// Population variance (divides by N).
double pop_variance(const std::vector<double>& v) {
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return var / v.size();
}

// Brute-force variance of the sample mean by enumerating every draw.
double enumerate_sample_mean_variance(const std::vector<double>& pop,
                                      std::size_t n, bool with_replacement) {
  std::vector<double> means;
  if (with_replacement) {
    // All N^n ordered tuples via odometer.
    std::vector<std::size_t> idx(n, 0);
    for (;;) {
      double sum = 0;
      for (std::size_t i : idx) sum += pop[i];
      means.push_back(sum / n);
      std::size_t d = 0;
      while (d < n && ++idx[d] == pop.size()) {
        idx[d] = 0;
        ++d;
      }
      if (d == n) break;
    }
  } else {
    // All unordered n-subsets.
    std::vector<bool> mask(pop.size(), false);
    std::fill(mask.end() - static_cast<std::ptrdiff_t>(n), mask.end(), true);
    do {
      double sum = 0;
      for (std::size_t i = 0; i < pop.size(); ++i) {
        if (mask[i]) sum += pop[i];
      }
      means.push_back(sum / n);
    } while (std::next_permutation(mask.begin(), mask.end()));
  }
  return pop_variance(means);
}

HistoryStore store_from_norm_profile(std::uint32_t users, int rounds,
                                     std::uint64_t m,
                                     const std::vector<double>& norm_sq) {
  RawHistorySink sink(users, m);
  for (int t = 0; t < rounds; ++t) {
    RoundGradients grads;
    grads.t = t;
    grads.per_user.resize(users);
    for (auto& g : grads.per_user) {
      g.assign(m, 0.0);
      g[0] = std::sqrt(norm_sq[static_cast<std::size_t>(t)]);
    }
    sink.on_round(grads);
  }
  return sink.take();
}

}  // namespace

TEST_CASE("sampling factor") {
  CHECK(s_factor(25, 10, true) == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
  CHECK(s_factor(25, 10, false) ==
        doctest::Approx((1.0 / 9.0) * (15.0 / 23.0)).epsilon(1e-12));
  CHECK(s_factor(25, 25, false) == 0.0);
  CHECK_THROWS_AS(s_factor(25, 1, true), std::invalid_argument);
  CHECK_THROWS_AS(s_factor(2, 2, false), std::invalid_argument);
}

TEST_CASE("compression variance bound, single-round worked example") {
  const BoundConstants k = worked_constants();
  const EtaSchedule eta = EtaSchedule::constant(0.1);
  const double v = var_bound_medu(k, eta, 0);
  // 2*(1/9)*0.01 + (1/9 + 1/24)*16*0.01*(1/12)
  CHECK(v == doctest::Approx(0.0042592592592593).epsilon(1e-10));
}

TEST_CASE("compression variance bound reductions and monotonicity") {
  BoundConstants k = worked_constants();
  k.sigma_sq_sdq = 0.0;
  const EtaSchedule eta = EtaSchedule::decaying(1.0, 10.0);
  double eta_sq = 0.0;
  for (int t = 0; t <= 7; ++t) eta_sq += eta.at(t) * eta.at(t);
  CHECK(var_bound_medu(k, eta, 7) ==
        doctest::Approx(2.0 * k.s * k.g_sq * eta_sq).epsilon(1e-12));

  BoundConstants full = worked_constants();
  full.b = 0.3;
  full.c = 0.05;
  full.delta = DeltaSchedule::constant(1e-3);
  double prev = 0.0;
  for (int t = 0; t <= 6; ++t) {
    const double v = var_bound_medu(full, eta, t);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("non-compressed deviation bound") {
  BoundConstants k = worked_constants();
  const EtaSchedule eta = EtaSchedule::constant(0.1);
  CHECK(mii_bound_fu(k, eta, 0) == doctest::Approx(0.04).epsilon(1e-12));

  // With decay and correlation off the bound is 4 G^2 sum eta^2.
  const EtaSchedule dec = EtaSchedule::decaying(1.0, 5.0);
  double eta_sq = 0.0;
  for (int t = 0; t <= 9; ++t) eta_sq += dec.at(t) * dec.at(t);
  CHECK(mii_bound_fu(k, dec, 9) ==
        doctest::Approx(4.0 * k.g_sq * eta_sq).epsilon(1e-12));

  // Doubling G^2 adds exactly one more copy of the first term.
  BoundConstants rich = worked_constants();
  rich.a = 0.7;
  rich.b = 0.2;
  const double v1 = mii_bound_fu(rich, dec, 9);
  rich.g_sq = 2.0;
  const double v2 = mii_bound_fu(rich, dec, 9);
  CHECK(v2 - v1 == doctest::Approx(4.0 * eta_sq).epsilon(1e-10));
}

TEST_CASE("composite bound is the sum of its parts") {
  BoundConstants k = worked_constants();
  k.b = 0.1;
  k.c = 0.02;
  k.a = 0.5;
  const EtaSchedule eta = EtaSchedule::constant(0.1);
  for (int t : {0, 3, 7}) {
    CHECK(mii_bound_medu(k, eta, t) ==
          doctest::Approx(mii_bound_fu(k, eta, t) + var_bound_medu(k, eta, t))
              .epsilon(1e-12));
  }
  CHECK(mii_bound_medu(worked_constants(), eta, 0) ==
        doctest::Approx(0.04 + 0.0042592592592593).epsilon(1e-10));

  // Compression-free limit: no sampling factor, no quantization terms.
  BoundConstants free = worked_constants();
  free.s = 0.0;
  free.sigma_sq_sdq = 0.0;
  CHECK(mii_bound_medu(free, eta, 4) ==
        doctest::Approx(mii_bound_fu(free, eta, 4)).epsilon(1e-12));
}

TEST_CASE("sample-mean variance matches brute-force enumeration") {
  const std::vector<double> pop = {1.0, 2.0, 3.0};
  const double sigma_sq = pop_variance(pop);  // 2/3
  CHECK(sample_mean_variance(3, 2, sigma_sq, false) ==
        doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(sample_mean_variance(3, 2, sigma_sq, true) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(enumerate_sample_mean_variance(pop, 2, false) ==
        doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(enumerate_sample_mean_variance(pop, 2, true) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(sample_mean_variance(4, 4, 1.0, false) == 0.0);
  CHECK_THROWS_AS(sample_mean_variance(3, 4, 1.0, false), std::invalid_argument);
}

TEST_CASE("ordered double sum over a tiny horizon") {
  // eta_t = 1/(t+1), p = 2, T = 3: twelve ordered pairs by hand.
  CHECK(partial_double_sum(3, 2.0, 1.0, 1.0) ==
        doctest::Approx(1.0 + 1.0 / 6 + 1.0 / 18 + 1.0 / 3 + 1.0 / 16 + 1.0 / 6)
            .epsilon(1e-12));
  // T = 1: the single unordered pair, counted twice.
  CHECK(partial_double_sum(1, 2.0, 1.0, 1.0) ==
        doctest::Approx(2.0 * 1.0 * 0.5).epsilon(1e-12));
}

TEST_CASE("increments are positive, vanishing, and consistent") {
  double prev = partial_double_sum(1, 2.0, 1.0, 1.0);
  double prev_inc = 1e300;
  for (int t = 2; t <= 40; ++t) {
    const double cur = partial_double_sum(t, 2.0, 1.0, 1.0);
    const double inc = cur - prev;
    CHECK(inc > 0.0);
    CHECK(inc < prev_inc);
    CHECK(double_sum_increment(t, 2.0, 1.0, 1.0) ==
          doctest::Approx(inc).epsilon(1e-9));
    prev = cur;
    prev_inc = inc;
  }
}

TEST_CASE("convergence probe separates p > 1 from p <= 1") {
  CHECK(probe_double_sum(1.5, 1.0, 10.0).converges);
  CHECK(probe_double_sum(2.0, 1.0, 10.0).converges);
  CHECK_FALSE(probe_double_sum(1.0, 1.0, 10.0).converges);
  CHECK_FALSE(probe_double_sum(0.5, 1.0, 10.0).converges);
}

TEST_CASE("constant estimation: max norm and decay exponent") {
  // ||g_t||^2 = 1/(t+1) exactly.
  std::vector<double> profile;
  for (int t = 0; t < 12; ++t) profile.push_back(1.0 / (t + 1.0));
  const HistoryStore fl = store_from_norm_profile(3, 12, 4, profile);
  const HistoryStore retrain = store_from_norm_profile(2, 12, 4, profile);
  const ConstantsFit fit = estimate_constants(fl, retrain, nullptr);
  CHECK(fit.constants.g_sq == doctest::Approx(1.0).epsilon(1e-12));
  // Squared-norm fit: amplitude 1, exponent 1 at nu = 1; the stored pair is
  // on the norm scale (sqrt amplitude, halved exponent).
  CHECK(fit.alpha_raw == doctest::Approx(1.0).epsilon(0.1));
  CHECK(fit.constants.nu == doctest::Approx(1.0));
  CHECK(fit.constants.a * fit.constants.a == doctest::Approx(1.0).epsilon(0.1));
  CHECK(2.0 * fit.constants.alpha == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("constant estimation: iid gradients show no cross-round correlation") {
  RawHistorySink fl_sink(4, 6), retrain_sink(3, 6);
  RngStream stream(2718, {});
  for (int t = 0; t < 10; ++t) {
    RoundGradients a{t, {}}, b{t, {}};
    a.per_user.resize(4);
    b.per_user.resize(3);
    for (auto& g : a.per_user) {
      g.resize(6);
      for (auto& v : g) v = stream.gaussian();
    }
    for (auto& g : b.per_user) {
      g.resize(6);
      for (auto& v : g) v = stream.gaussian();
    }
    fl_sink.on_round(a);
    retrain_sink.on_round(b);
  }
  const ConstantsFit fit =
      estimate_constants(fl_sink.take(), retrain_sink.take(), nullptr);
  CHECK(fit.cross_round_consistent_with_zero);
  CHECK(fit.constants.beta > 1.0);
}

TEST_CASE("constant estimation requires enough rounds") {
  std::vector<double> profile = {1.0, 0.5, 0.25};
  const HistoryStore fl = store_from_norm_profile(3, 3, 4, profile);
  CHECK_THROWS_AS(estimate_constants(fl, fl, nullptr), std::invalid_argument);
}

TEST_CASE("selection variance matches the sample-mean lemma") {
  // Population of 8 fixed values; the stored-user selection realizes the
  // uniform sampling the lemma describes.
  const std::vector<double> pop = {0.2, -1.4, 3.1, 0.0, 2.2, -0.6, 1.7, -2.0};
  const double sigma_sq = pop_variance(pop);
  for (bool replacement : {false, true}) {
    const std::uint32_t n = 3;
    const int draws = 20000;
    std::vector<double> means;
    means.reserve(draws);
    for (int t = 0; t < draws; ++t) {
      double sum = 0;
      for (std::uint32_t u : select_users(8, n, t, 424242, replacement)) {
        sum += pop[u];
      }
      means.push_back(sum / n);
    }
    const double emp = pop_variance(means);
    const double expect = sample_mean_variance(8, n, sigma_sq, replacement);
    // Standard error of the variance estimate from fourth moments.
    double m4 = 0, mean = std::accumulate(means.begin(), means.end(), 0.0) / draws;
    for (double v : means) m4 += std::pow(v - mean, 4.0);
    m4 /= draws;
    const double se = std::sqrt(std::max(0.0, m4 - emp * emp) / draws);
    CHECK(std::abs(emp - expect) <= 3.0 * se);

    // The closed-form sampling factor dominates every realized round factor.
    if (n >= 2) {
      const double s = s_factor(8, n, replacement);
      CHECK(expect / sigma_sq <= s + 1e-12);
    }
  }
}

TEST_CASE("declared constants are validated") {
  BoundConstants k = worked_constants();
  k.beta = 1.0;
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
  k = worked_constants();
  k.alpha = 0.0;
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
  k = worked_constants();
  k.g_sq = -1.0;
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
}
