#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "medu/fl.hpp"
#include "medu/lattice.hpp"

namespace medu {

struct DeltaSchedule {
  enum class Kind { Constant, EtaScaled };
  Kind kind = Kind::Constant;
  double base = 0.0;
  EtaSchedule eta;  // used by EtaScaled: delta_t = base * eta_t

  static DeltaSchedule constant(double d);
  static DeltaSchedule eta_scaled(double base, const EtaSchedule& eta);
  double at(int t) const;
};

struct CodecConfig {
  std::uint32_t total_users = 0;   // U
  std::uint32_t stored_users = 0;  // U-bar, slots kept per round
  bool with_replacement = false;
  DeltaSchedule delta;
  std::uint16_t subvec_len = 1;  // L; gradients are padded to a multiple of L
  LatticeKind lattice_kind = LatticeKind::Scalar;
  double lattice_step = 0.0;
  double lattice_radius = 0.0;
  bool bypass = false;  // identity quantizer, stores sub-vectors as raw f64
  std::uint64_t seed = 0;

  void validate() const;
};

/// The round-t multiset of stored users, ascending, regenerable from
/// (seed, t) alone. Without replacement the entries are distinct.
std::vector<std::uint32_t> select_users(std::uint32_t total_users,
                                        std::uint32_t stored_users, int t,
                                        std::uint64_t seed,
                                        bool with_replacement);

/// (user, multiplicity) pairs of a sorted selection, ascending. Encoded
/// rounds carry one slot per entry, in this order.
std::vector<std::pair<std::uint32_t, std::uint32_t>> selection_distinct(
    const std::vector<std::uint32_t>& selection);

/// One stored user's record within a round. Users drawn k times appear once
/// here and weigh k times at decode.
struct EncodedSlot {
  std::uint32_t user = 0;
  double scale = 1.0;                // s_{t,u} > 0
  std::vector<bool> present;         // one bit per sub-vector
  std::vector<std::uint32_t> indices;  // codebook indices, one per present bit
  std::vector<double> raw;           // bypass payload, L values per present bit
};

struct EncodedRound {
  int t = 0;
  double delta = 0.0;
  std::vector<EncodedSlot> slots;  // ascending user id
};

struct RawRound {
  int t = 0;
  std::vector<ParamVector> per_user;
};

enum class StoreMode : std::uint8_t { Raw = 0, Medu = 1 };

struct HistoryHeader {
  std::uint16_t version = 1;
  StoreMode mode = StoreMode::Raw;
  std::uint32_t users = 0;       // U
  std::uint64_t param_count = 0; // M
  std::uint16_t subvec_len = 1;  // L
  LatticeKind lattice_kind = LatticeKind::Scalar;
  bool bypass = false;
  double lattice_step = 0.0;
  double lattice_radius = 0.0;
  std::uint16_t stored_users = 0;
  bool with_replacement = false;
  std::uint64_t seed = 0;
};

/// Append-only log of gradient rounds, raw or encoded; the server's entire
/// memory footprint for unlearning. Rounds are stored in strictly increasing
/// t with no gaps.
struct HistoryStore {
  HistoryHeader header;
  std::vector<RawRound> raw_rounds;
  std::vector<EncodedRound> encoded_rounds;

  std::size_t round_count() const {
    return header.mode == StoreMode::Raw ? raw_rounds.size()
                                         : encoded_rounds.size();
  }
  int final_round() const { return static_cast<int>(round_count()) - 1; }
};

/// Hierarchical encoder: per round, select a user subset, suppress
/// sub-vectors that moved less than delta_t from their last decoded value,
/// scale the survivors into the codebook's no-overload radius, and quantize
/// them with a regenerable dither. The reference state mirrors the decoder
/// exactly, so thresholds never drift from what decoding will reconstruct.
class MeduEncoder {
 public:
  MeduEncoder(const CodecConfig& cfg, std::uint64_t param_count);

  /// Consumes round grads.t; rounds must arrive consecutively from 0.
  EncodedRound encode_round(const RoundGradients& grads);

  std::uint64_t overload_count() const { return overloads_; }
  int rounds_encoded() const { return next_t_; }
  /// Mirror-decoder reference for a user (padded length), if one exists.
  const std::optional<std::vector<double>>& reference(std::uint32_t user) const;
  const CodecConfig& config() const { return cfg_; }
  const std::optional<Lattice>& lattice() const { return lattice_; }

 private:
  CodecConfig cfg_;
  std::optional<Lattice> lattice_;
  std::uint64_t param_count_ = 0;
  std::size_t padded_ = 0;
  std::size_t n_sub_ = 0;
  std::vector<std::optional<std::vector<double>>> reference_;
  std::vector<int> last_stored_round_;
  std::uint64_t overloads_ = 0;
  int next_t_ = 0;
};

struct DecodedUser {
  std::uint32_t user = 0;
  std::uint32_t multiplicity = 1;
  ParamVector gradient;  // raw scale, padding stripped
};

struct DecodedRound {
  int t = 0;
  std::uint32_t v_size = 0;  // |U-bar_t \ {excluded}| counting multiplicity
  std::vector<DecodedUser> users;
};

struct DecodedHistory {
  std::vector<DecodedRound> rounds;
  std::uint32_t skipped_rounds = 0;  // rounds whose surviving set was empty
};

/// Sequential decode of a medu-mode store: regenerates selections and dithers
/// from the stored seed, inverts the quantizer, completes suppressed
/// sub-vectors from each user's last recovered value, and drops `exclude`.
/// Decoded gradients are at raw scale; the aggregation weighting is applied
/// by the unlearner.
DecodedHistory decode_history(const HistoryStore& store,
                              std::optional<std::uint32_t> exclude);

struct StorageBits {
  double paper_bits = 0.0;     // idealized count, exact log2 |P| per index
  std::uint64_t packed_bits = 0;  // bitmap + ceil(log2 |P|) indices + scale headers
};

/// Bit accounting for a finalized store. Raw mode: U * rounds * M * 64 for
/// both figures.
StorageBits storage_bits(const HistoryStore& store);

/// Uncompressed footprint U * (T+1) * M * b.
double storage_fu_bits(std::uint32_t users, int final_round,
                       std::uint64_t param_count, unsigned bits_per_param);

/// Guaranteed-savings bound: (Ubar/U) * ((1 + log2 |P|)/L)/b * Storage_FU.
double storage_bound(std::uint32_t users, std::uint32_t stored_users,
                     int final_round, std::uint64_t param_count,
                     std::uint16_t subvec_len, std::size_t point_count,
                     unsigned bits_per_param);

/// Replay a raw store through a fresh encoder; used when several codec
/// settings are compared against one training run.
HistoryStore encode_store(const HistoryStore& raw, const CodecConfig& cfg,
                          std::uint64_t* overloads = nullptr);

// ---- file format -----------------------------------------------------------

std::vector<std::uint8_t> serialize_store(const HistoryStore& store);
HistoryStore parse_store(std::span<const std::uint8_t> bytes,
                         const std::string& name = "history");
void save_store(const std::filesystem::path& path, const HistoryStore& store);
HistoryStore load_store(const std::filesystem::path& path);

// ---- sinks -----------------------------------------------------------------

class RawHistorySink : public HistorySink {
 public:
  RawHistorySink(std::uint32_t users, std::uint64_t param_count);
  void on_round(const RoundGradients& grads) override;
  const HistoryStore& store() const { return store_; }
  HistoryStore take() { return std::move(store_); }

 private:
  HistoryStore store_;
};

class MeduHistorySink : public HistorySink {
 public:
  MeduHistorySink(const CodecConfig& cfg, std::uint64_t param_count);
  void on_round(const RoundGradients& grads) override;
  const HistoryStore& store() const { return store_; }
  HistoryStore take() { return std::move(store_); }
  std::uint64_t overload_count() const { return encoder_.overload_count(); }
  const MeduEncoder& encoder() const { return encoder_; }

 private:
  MeduEncoder encoder_;
  HistoryStore store_;
};

}  // namespace medu
