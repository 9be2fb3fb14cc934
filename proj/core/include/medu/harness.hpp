#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "medu/attack.hpp"
#include "medu/bounds.hpp"
#include "medu/codec.hpp"
#include "medu/unlearn.hpp"

namespace medu {

enum class DataKind { Blobs, Digits };

/// One experiment, parsed from a flat key = value config file. Section
/// prefixes mirror the pipeline: model.*, data.*, fl.*, codec.*, attack.*,
/// unlearn.*, adapt.*, sweep.*, verify.*, out.*.
struct ExperimentConfig {
  ModelSpec model;

  DataKind data_kind = DataKind::Blobs;
  int data_classes = 4;
  int data_dim = 20;
  int data_per_class = 100;
  double data_center_scale = 6.0;
  double data_noise = 1.0;
  double data_test_fraction = 0.25;
  std::uint64_t data_seed = 42;

  FLConfig fl;
  double dirichlet_alpha = 0.5;  // arbitrary default, not prescribed

  CodecConfig codec;
  int codec_rate_bits = 0;  // >0 derives (step, radius) for the target rate

  bool attack_enabled = false;
  std::uint32_t attack_client = 1;  // 1-based
  BackdoorSpec backdoor;
  double adversary_share = 0.9;

  std::uint32_t unlearn_user = 1;  // 1-based

  int adapt_rounds = 10;
  std::vector<std::uint32_t> adapt_users;  // 1-based

  std::vector<std::uint32_t> sweep_stored_users;
  std::vector<double> sweep_delta;
  std::vector<int> sweep_rate_bits;
  std::vector<LatticeKind> sweep_lattice;
  int sweep_seeds = 5;

  int verify_bias_seeds = 200;
  int verify_var_seeds = 500;

  std::string out_dir = "out";
  bool write_raw_store = true;
  bool write_medu_store = true;

  std::string source_text;
  std::string source_name;
};

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& name);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Smallest step (largest codebook) whose indices fit `bits_per_dim` bits per
/// lattice dimension at unit radius.
Lattice lattice_for_rate(LatticeKind kind, int bits_per_dim);

/// Codec config with (step, radius) resolved from codec_rate_bits when set.
CodecConfig resolve_codec(const ExperimentConfig& cfg);

struct Scenario {
  Dataset train;          // full training split (pre-partition)
  Dataset test;           // evaluation split, true labels
  Dataset backdoor_test;  // trigger set; empty when no attack configured
  ClientData clients;
};

/// Dataset generation, split, partition and (optionally) poisoning, all
/// deterministic given the config. With an attack enabled, the source class
/// is concentrated at the adversarial client (adversary_share of it) before
/// the remaining data is Dirichlet-partitioned.
Scenario build_scenario(const ExperimentConfig& cfg);

struct TrainOutputs {
  ParamVector w_final;
  HistoryStore raw;
  HistoryStore medu;
  std::uint64_t overloads = 0;
  std::vector<ParamVector> trajectory;
};

TrainOutputs run_training(const ExperimentConfig& cfg, const Scenario& scenario,
                          bool want_raw, bool want_medu,
                          bool want_trajectory = false);

struct BiasCheckResult {
  bool pass = false;
  double max_abs_z = 0.0;  // worst per-coordinate |mean| / std_err
  std::size_t coords = 0;
  int seeds = 0;
};

/// First-moment check: one fixed training history, `seeds` codec seeds; the
/// per-coordinate mean of (compressed unlearned - non-compressed unlearned)
/// must sit within four standard errors of zero.
BiasCheckResult verify_unbiasedness(const ExperimentConfig& cfg, int seeds);

struct BoundCheckResult {
  double emp_var_medu = 0.0;  // mean ||w'' - w'||^2
  double emp_mii_fu = 0.0;    // mean ||w* - w'||^2
  double emp_mii_medu = 0.0;  // mean ||w* - w''||^2
  double bound_var = 0.0;
  double bound_mii_fu = 0.0;
  double bound_mii_medu = 0.0;
  bool pass_var = false;
  bool pass_fu = false;
  bool pass_medu = false;
  BoundConstants constants;
  double mi_norm_sq_example = 0.0;  // informational first-moment magnitude
  int seeds = 0;
};

/// Second-moment check: Monte Carlo over full train/retrain/unlearn runs,
/// with constants fitted from the recorded histories (enveloped across the
/// first runs) and the three bounds evaluated against the empirical means.
BoundCheckResult verify_variance_bounds(const ExperimentConfig& cfg, int seeds);

// Subcommands. Return value is the process exit code: 0 success, 1 runtime
// failure, 2 configuration error (the CLI also maps ConfigError to 2).
int cmd_train(const ExperimentConfig& cfg);
int cmd_unlearn(const ExperimentConfig& cfg, const std::string& mode,
                std::optional<std::uint32_t> user_override,
                std::optional<std::filesystem::path> store_override);
int cmd_sweep(const ExperimentConfig& cfg);
int cmd_adapt(const ExperimentConfig& cfg,
              const std::filesystem::path& checkpoint, int rounds,
              const std::vector<std::uint32_t>& users_1based);
int cmd_verify_bounds(const ExperimentConfig& cfg,
                      std::optional<double> probe_exponent);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace medu
