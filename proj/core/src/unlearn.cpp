#include "medu/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace medu {

ParamVector unlearn_full(const ParamVector& w0, const HistoryStore& raw,
                         std::uint32_t exclude, const EtaSchedule& eta) {
  if (raw.header.mode != StoreMode::Raw) {
    throw std::invalid_argument("unlearn_full needs a raw store; use unlearn_medu");
  }
  const std::uint32_t users = raw.header.users;
  if (users < 2) throw std::invalid_argument("need at least two users");
  if (exclude >= users) throw std::invalid_argument("excluded user out of range");
  if (w0.size() != raw.header.param_count) {
    throw std::invalid_argument("initial weights do not match the store");
  }

  ParamVector w = w0;
  ParamVector acc(w.size());
  const double divisor = static_cast<double>(users) - 1.0;
  for (const RawRound& round : raw.raw_rounds) {
    const double eta_t = eta.at(round.t);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::uint32_t u = 0; u < users; ++u) {
      if (u == exclude) continue;
      const ParamVector& g = round.per_user[u];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= eta_t * (acc[i] / divisor);
    }
  }
  return w;
}

MeduUnlearnResult unlearn_medu(const ParamVector& w0, const HistoryStore& medu,
                               std::uint32_t exclude, const EtaSchedule& eta) {
  if (w0.size() != medu.header.param_count) {
    throw std::invalid_argument("initial weights do not match the store");
  }
  const DecodedHistory decoded = decode_history(medu, exclude);

  MeduUnlearnResult out;
  out.params = w0;
  out.skipped_rounds = decoded.skipped_rounds;
  ParamVector acc(w0.size());
  for (const DecodedRound& round : decoded.rounds) {
    if (round.v_size == 0) continue;  // no surviving stored users this round
    const double eta_t = eta.at(round.t);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const DecodedUser& du : round.users) {
      const double weight = static_cast<double>(du.multiplicity);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += weight * du.gradient[i];
      }
    }
    const double divisor = static_cast<double>(round.v_size);
    for (std::size_t i = 0; i < out.params.size(); ++i) {
      out.params[i] -= eta_t * (acc[i] / divisor);
    }
  }
  return out;
}

double squared_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("vectors have different lengths");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::string to_json(const UnlearnReport& report) {
  nlohmann::json j;
  j["mode"] = report.mode;
  j["unlearn_user"] = report.unlearn_user;
  if (report.dist_sq_to_retrain >= 0.0) {
    j["dist_sq_to_retrain"] = report.dist_sq_to_retrain;
  }
  if (report.dist_sq_to_trained >= 0.0) {
    j["dist_sq_to_trained"] = report.dist_sq_to_trained;
  }
  j["storage"] = {{"paper_bits", report.paper_bits},
                  {"packed_bits", report.packed_bits}};
  if (report.overloads >= 0) j["overloads"] = report.overloads;
  j["skipped_rounds"] = report.skipped_rounds;
  if (report.primary_accuracy >= 0.0) j["primary_accuracy"] = report.primary_accuracy;
  if (report.backdoor_accuracy >= 0.0) j["backdoor_accuracy"] = report.backdoor_accuracy;
  j["wall_seconds"] = report.wall_seconds;
  j["checkpoint"] = report.checkpoint_path;
  return j.dump(2);
}

}  // namespace medu
