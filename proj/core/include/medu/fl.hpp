#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "medu/dataset.hpp"
#include "medu/model.hpp"

namespace medu {

struct EtaSchedule {
  enum class Kind { Constant, Decaying };
  Kind kind = Kind::Constant;
  double value = 0.0;  // constant
  double a = 0.0;      // decaying: eta_t = a / (t + b0)
  double b0 = 0.0;

  static EtaSchedule constant(double c);
  static EtaSchedule decaying(double a, double b0);
  /// eta_t for round t >= 0.
  double at(int t) const;
};

struct FLConfig {
  std::uint32_t users = 0;  // U
  int final_round = 0;      // T; rounds run t = 0..T inclusive
  EtaSchedule eta;
  int local_epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  ModelSpec model;
  std::optional<std::uint32_t> unlearn_user;  // 0-based index
  int threads = 1;

  void validate() const;
};

/// One round worth of per-user effective gradients.
struct RoundGradients {
  int t = 0;
  std::vector<ParamVector> per_user;
};

/// Receives each round's gradients during training. write-only from the
/// trainer's point of view; training never reads a sink back.
class HistorySink {
 public:
  virtual ~HistorySink() = default;
  virtual void on_round(const RoundGradients& grads) = 0;
};

using ClientData = std::vector<std::vector<LabeledExample>>;

/// Dirichlet(concentration) label-skew partition into `users` disjoint
/// shards covering the dataset. Per class, client proportions are drawn from
/// the Dirichlet and realized by largest-remainder apportionment. If a client
/// ends up empty it receives one example from the largest client.
ClientData partition_dirichlet(const Dataset& data, std::uint32_t users,
                               double concentration, RngStream& stream);

struct FlRoundResult {
  ParamVector next_params;
  RoundGradients grads;
};

/// One FedAvg round: local updates for every client (stream (seed, Batch, t, u)),
/// then w_{t+1} = w_t - eta_t * mean(g), the mean taken sum-then-divide in
/// index-ascending order.
FlRoundResult fl_round(const ParamVector& w, const ClientData& clients,
                       double eta_t, int t, const FLConfig& cfg);

/// Full training loop, t = 0..T. Each round's gradients are forwarded to all
/// sinks; a sink failure aborts with a diagnostic naming the round. Returns
/// the final global model w_{T+1}. `trajectory`, when given, receives
/// w_0..w_{T+1}.
ParamVector run_fl(const FLConfig& cfg, const ClientData& clients,
                   std::span<HistorySink* const> sinks = {},
                   std::vector<ParamVector>* trajectory = nullptr);

/// Train-from-scratch reference: the identical loop with client `exclude`
/// dropped from every round and mean divisor U-1. Starts from the same w_0
/// and reuses the per-(t, u) streams of the kept clients.
ParamVector run_retrain(const FLConfig& cfg, const ClientData& clients,
                        std::uint32_t exclude,
                        std::span<HistorySink* const> sinks = {},
                        std::vector<ParamVector>* trajectory = nullptr);

// Checkpoint file: "MEDUCKPT", version u16, M u64, then M little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const ParamVector& w);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace medu
