#pragma once

#include <cstdint>
#include <string>

#include "medu/codec.hpp"

namespace medu {

/// Non-compressed server-side unlearning from a raw store:
/// w' = w0 - sum_t eta_t * (1/(U-1)) * sum_{u != exclude} g_t^u,
/// summed t-ascending, u-ascending.
ParamVector unlearn_full(const ParamVector& w0, const HistoryStore& raw,
                         std::uint32_t exclude, const EtaSchedule& eta);

struct MeduUnlearnResult {
  ParamVector params;
  std::uint32_t skipped_rounds = 0;
};

/// Compressed unlearning: decode the store, then per round subtract
/// eta_t times the average of the recovered gradients over the surviving
/// stored users (multiplicity-weighted). Rounds whose surviving set is empty
/// contribute zero and are counted.
MeduUnlearnResult unlearn_medu(const ParamVector& w0, const HistoryStore& medu,
                               std::uint32_t exclude, const EtaSchedule& eta);

/// Squared Euclidean distance; the deviation metric used throughout.
double squared_distance(const ParamVector& a, const ParamVector& b);

struct UnlearnReport {
  std::string mode;                  // "retrain" | "fu" | "medu"
  std::uint32_t unlearn_user = 0;    // 1-based id
  double dist_sq_to_retrain = -1.0;  // <0 when no retrain checkpoint exists
  double dist_sq_to_trained = -1.0;
  double paper_bits = 0.0;
  std::uint64_t packed_bits = 0;
  long long overloads = -1;  // -1 when unknown (not recorded at train time)
  std::uint32_t skipped_rounds = 0;
  double primary_accuracy = -1.0;
  double backdoor_accuracy = -1.0;
  double wall_seconds = 0.0;
  std::string checkpoint_path;
};

std::string to_json(const UnlearnReport& report);

}  // namespace medu
