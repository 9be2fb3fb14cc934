#include "medu/codec.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "medu/errors.hpp"

namespace medu {
namespace {

std::size_t padded_length(std::uint64_t param_count, std::uint16_t subvec_len) {
  const std::size_t l = subvec_len;
  return (static_cast<std::size_t>(param_count) + l - 1) / l * l;
}

double subvec_norm(const double* v, int len) {
  double s = 0.0;
  for (int i = 0; i < len; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

}  // namespace

DeltaSchedule DeltaSchedule::constant(double d) {
  if (d < 0.0) throw std::invalid_argument("threshold must be >= 0");
  DeltaSchedule s;
  s.kind = Kind::Constant;
  s.base = d;
  return s;
}

DeltaSchedule DeltaSchedule::eta_scaled(double base, const EtaSchedule& eta) {
  if (base < 0.0) throw std::invalid_argument("threshold must be >= 0");
  DeltaSchedule s;
  s.kind = Kind::EtaScaled;
  s.base = base;
  s.eta = eta;
  return s;
}

double DeltaSchedule::at(int t) const {
  return kind == Kind::Constant ? base : base * eta.at(t);
}

void CodecConfig::validate() const {
  if (total_users == 0) throw std::invalid_argument("total_users must be positive");
  if (stored_users == 0) throw std::invalid_argument("stored_users must be positive");
  if (stored_users > 0xffff) {
    throw std::invalid_argument("stored_users exceeds the header field width");
  }
  if (!with_replacement && stored_users > total_users) {
    throw std::invalid_argument(
        "stored_users cannot exceed total_users without replacement");
  }
  if (subvec_len == 0) throw std::invalid_argument("subvec_len must be positive");
  if (delta.at(0) < 0.0) throw std::invalid_argument("threshold must be >= 0");
  if (!bypass) {
    if (!(lattice_step > 0.0) || !(lattice_radius > lattice_step)) {
      throw std::invalid_argument("lattice needs step > 0 and radius > step");
    }
    if (subvec_len != (lattice_kind == LatticeKind::Scalar ? 1 : 2)) {
      throw std::invalid_argument("subvec_len must match the lattice dimension");
    }
  }
}

std::vector<std::uint32_t> select_users(std::uint32_t total_users,
                                        std::uint32_t stored_users, int t,
                                        std::uint64_t seed,
                                        bool with_replacement) {
  if (stored_users == 0) throw std::invalid_argument("stored_users must be positive");
  if (!with_replacement && stored_users > total_users) {
    throw std::invalid_argument("cannot draw more distinct users than exist");
  }
  RngStream stream =
      derive_stream(seed, StreamTag::Select, {static_cast<std::uint64_t>(t)});
  std::vector<std::uint32_t> out;
  out.reserve(stored_users);
  if (with_replacement) {
    for (std::uint32_t i = 0; i < stored_users; ++i) {
      out.push_back(static_cast<std::uint32_t>(stream.below(total_users)));
    }
  } else {
    // Partial Fisher-Yates over the identity permutation.
    std::vector<std::uint32_t> ids(total_users);
    for (std::uint32_t i = 0; i < total_users; ++i) ids[i] = i;
    for (std::uint32_t i = 0; i < stored_users; ++i) {
      const std::uint64_t j = i + stream.below(total_users - i);
      std::swap(ids[i], ids[j]);
      out.push_back(ids[i]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> selection_distinct(
    const std::vector<std::uint32_t>& selection) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::uint32_t u : selection) {
    if (!out.empty() && out.back().first == u) {
      ++out.back().second;
    } else {
      out.emplace_back(u, 1);
    }
  }
  return out;
}

MeduEncoder::MeduEncoder(const CodecConfig& cfg, std::uint64_t param_count)
    : cfg_(cfg), param_count_(param_count) {
  cfg_.validate();
  if (param_count == 0) throw std::invalid_argument("param_count must be positive");
  if (!cfg_.bypass) {
    lattice_ = build_lattice(cfg_.lattice_kind, cfg_.lattice_step,
                             cfg_.lattice_radius);
  }
  padded_ = padded_length(param_count, cfg_.subvec_len);
  n_sub_ = padded_ / cfg_.subvec_len;
  reference_.resize(cfg_.total_users);
  last_stored_round_.assign(cfg_.total_users, -1);
}

const std::optional<std::vector<double>>& MeduEncoder::reference(
    std::uint32_t user) const {
  return reference_.at(user);
}

EncodedRound MeduEncoder::encode_round(const RoundGradients& grads) {
  if (grads.t != next_t_) {
    throw std::invalid_argument("round " + std::to_string(grads.t) +
                                " out of order; expected " +
                                std::to_string(next_t_));
  }
  if (grads.per_user.size() != cfg_.total_users) {
    throw std::invalid_argument("gradient count does not match user count");
  }
  const int l = cfg_.subvec_len;
  EncodedRound round;
  round.t = grads.t;
  round.delta = cfg_.delta.at(grads.t);

  const auto selection = select_users(cfg_.total_users, cfg_.stored_users,
                                      grads.t, cfg_.seed, cfg_.with_replacement);
  std::vector<double> padded(padded_, 0.0);

  for (const auto& [user, mult] : selection_distinct(selection)) {
    (void)mult;  // weighting happens at decode
    const ParamVector& g = grads.per_user[user];
    if (g.size() != param_count_) {
      throw std::invalid_argument("gradient length mismatch for user " +
                                  std::to_string(user + 1));
    }
    std::fill(padded.begin(), padded.end(), 0.0);
    std::copy(g.begin(), g.end(), padded.begin());

    EncodedSlot slot;
    slot.user = user;
    slot.present.assign(n_sub_, true);
    auto& ref = reference_[user];
    const bool cold = !ref.has_value();
    if (!cold) {
      for (std::size_t m = 0; m < n_sub_; ++m) {
        double d2 = 0.0;
        for (int i = 0; i < l; ++i) {
          const double diff = padded[m * l + i] - (*ref)[m * l + i];
          d2 += diff * diff;
        }
        slot.present[m] = std::sqrt(d2) >= round.delta;
      }
    } else {
      ref.emplace(padded_, 0.0);
    }

    if (!cfg_.bypass) {
      // Per-slot dynamic range: shrink so the largest stored sub-vector fits
      // strictly inside radius - covering_radius, never enlarging.
      double max_norm = 0.0;
      for (std::size_t m = 0; m < n_sub_; ++m) {
        if (!slot.present[m]) continue;
        max_norm = std::max(max_norm, subvec_norm(padded.data() + m * l, l));
      }
      const double headroom = lattice_->radius - lattice_->covering_radius;
      slot.scale = std::max(1.0, max_norm / headroom);
    } else {
      slot.scale = 1.0;
    }

    std::array<double, 2> scaled{};
    std::array<double, 2> decoded{};
    for (std::size_t m = 0; m < n_sub_; ++m) {
      if (!slot.present[m]) continue;
      if (cfg_.bypass) {
        for (int i = 0; i < l; ++i) {
          slot.raw.push_back(padded[m * l + i]);
          (*ref)[m * l + i] = padded[m * l + i];
        }
        continue;
      }
      RngStream dither_stream = derive_stream(
          cfg_.seed, StreamTag::Dither,
          {static_cast<std::uint64_t>(grads.t), user, static_cast<std::uint64_t>(m)});
      const auto dither = sample_dither(*lattice_, dither_stream);
      for (int i = 0; i < l; ++i) scaled[static_cast<std::size_t>(i)] = padded[m * l + i] / slot.scale;
      const auto enc = sdq_encode(
          *lattice_, std::span<const double>(scaled.data(), static_cast<std::size_t>(l)),
          std::span<const double>(dither.data(), static_cast<std::size_t>(l)));
      if (enc.overload) ++overloads_;
      slot.indices.push_back(enc.index);
      // Mirror decode so thresholds in later rounds compare against exactly
      // what the decoder will reconstruct.
      sdq_decode(*lattice_, enc.index,
                 std::span<const double>(dither.data(), static_cast<std::size_t>(l)),
                 std::span<double>(decoded.data(), static_cast<std::size_t>(l)));
      for (int i = 0; i < l; ++i) (*ref)[m * l + i] = decoded[static_cast<std::size_t>(i)] * slot.scale;
    }
    last_stored_round_[user] = grads.t;
    round.slots.push_back(std::move(slot));
  }
  ++next_t_;
  return round;
}

DecodedHistory decode_history(const HistoryStore& store,
                              std::optional<std::uint32_t> exclude) {
  const HistoryHeader& h = store.header;
  if (h.mode != StoreMode::Medu) {
    throw std::invalid_argument("decode_history needs a medu-mode store");
  }
  if (exclude && *exclude >= h.users) {
    throw std::invalid_argument("excluded user out of range");
  }
  std::optional<Lattice> lattice;
  if (!h.bypass) {
    lattice = build_lattice(h.lattice_kind, h.lattice_step, h.lattice_radius);
  }
  const int l = h.subvec_len;
  const std::size_t padded = padded_length(h.param_count, h.subvec_len);
  const std::size_t n_sub = padded / h.subvec_len;

  std::vector<std::optional<std::vector<double>>> reference(h.users);
  DecodedHistory out;

  for (std::size_t r = 0; r < store.encoded_rounds.size(); ++r) {
    const EncodedRound& round = store.encoded_rounds[r];
    if (round.t != static_cast<int>(r)) {
      throw DecodeError("round records out of order at position " +
                        std::to_string(r));
    }
    const auto selection = select_users(h.users, h.stored_users, round.t,
                                        h.seed, h.with_replacement);
    const auto distinct = selection_distinct(selection);
    if (distinct.size() != round.slots.size()) {
      throw DecodeError("round " + std::to_string(round.t) +
                        ": slot count does not match the regenerated selection");
    }

    DecodedRound decoded_round;
    decoded_round.t = round.t;
    std::array<double, 2> dither{};
    std::array<double, 2> cell{};

    for (std::size_t s = 0; s < distinct.size(); ++s) {
      const std::uint32_t user = distinct[s].first;
      const std::uint32_t mult = distinct[s].second;
      const EncodedSlot& slot = round.slots[s];
      const std::string ctx = "round " + std::to_string(round.t) + ", user " +
                              std::to_string(user + 1);
      if (slot.present.size() != n_sub) {
        throw DecodeError(ctx + ": bitmap length mismatch");
      }
      if (!(slot.scale > 0.0) || !std::isfinite(slot.scale)) {
        throw DecodeError(ctx + ": corrupt scale factor");
      }
      auto& user_ref = reference[user];
      if (!user_ref.has_value()) user_ref.emplace(padded, 0.0);

      std::size_t next_index = 0;
      std::size_t next_raw = 0;
      for (std::size_t m = 0; m < n_sub; ++m) {
        if (!slot.present[m]) continue;
        if (h.bypass) {
          if (next_raw + l > slot.raw.size()) {
            throw DecodeError(ctx + ": raw payload truncated");
          }
          for (int i = 0; i < l; ++i) (*user_ref)[m * l + i] = slot.raw[next_raw++];
          continue;
        }
        if (next_index >= slot.indices.size()) {
          throw DecodeError(ctx + ": fewer indices than presence bits");
        }
        RngStream dither_stream = derive_stream(
            h.seed, StreamTag::Dither,
            {static_cast<std::uint64_t>(round.t), user, static_cast<std::uint64_t>(m)});
        const auto d = sample_dither(*lattice, dither_stream);
        dither = d;
        try {
          sdq_decode(*lattice, slot.indices[next_index],
                     std::span<const double>(dither.data(), static_cast<std::size_t>(l)),
                     std::span<double>(cell.data(), static_cast<std::size_t>(l)));
        } catch (const DecodeError& e) {
          throw DecodeError(ctx + ": " + e.what());
        }
        ++next_index;
        for (int i = 0; i < l; ++i) {
          (*user_ref)[m * l + i] = cell[static_cast<std::size_t>(i)] * slot.scale;
        }
      }

      if (exclude && user == *exclude) continue;
      DecodedUser du;
      du.user = user;
      du.multiplicity = mult;
      du.gradient.assign(user_ref->begin(),
                         user_ref->begin() + static_cast<std::ptrdiff_t>(h.param_count));
      decoded_round.users.push_back(std::move(du));
      decoded_round.v_size += mult;
    }
    if (decoded_round.v_size == 0) ++out.skipped_rounds;
    out.rounds.push_back(std::move(decoded_round));
  }
  return out;
}

StorageBits storage_bits(const HistoryStore& store) {
  const HistoryHeader& h = store.header;
  StorageBits out;
  if (h.mode == StoreMode::Raw) {
    const double bits = static_cast<double>(h.users) *
                        static_cast<double>(store.raw_rounds.size()) *
                        static_cast<double>(h.param_count) * 64.0;
    out.paper_bits = bits;
    out.packed_bits = static_cast<std::uint64_t>(bits);
    return out;
  }
  const std::size_t n_sub =
      padded_length(h.param_count, h.subvec_len) / h.subvec_len;
  double log2_points = 0.0;
  unsigned width = 0;
  if (h.bypass) {
    log2_points = 64.0 * h.subvec_len;
    width = 64u * h.subvec_len;
  } else {
    const Lattice lat =
        build_lattice(h.lattice_kind, h.lattice_step, h.lattice_radius);
    log2_points = std::log2(static_cast<double>(lat.points.size()));
    width = lat.index_bits;
  }
  for (const EncodedRound& round : store.encoded_rounds) {
    for (const EncodedSlot& slot : round.slots) {
      const std::size_t stored = static_cast<std::size_t>(
          std::count(slot.present.begin(), slot.present.end(), true));
      out.paper_bits += static_cast<double>(n_sub) +
                        static_cast<double>(stored) * log2_points;
      out.packed_bits += n_sub + stored * width + 64;  // 64-bit scale header
    }
  }
  return out;
}

double storage_fu_bits(std::uint32_t users, int final_round,
                       std::uint64_t param_count, unsigned bits_per_param) {
  return static_cast<double>(users) * (static_cast<double>(final_round) + 1.0) *
         static_cast<double>(param_count) * static_cast<double>(bits_per_param);
}

double storage_bound(std::uint32_t users, std::uint32_t stored_users,
                     int final_round, std::uint64_t param_count,
                     std::uint16_t subvec_len, std::size_t point_count,
                     unsigned bits_per_param) {
  if (users == 0 || stored_users == 0 || subvec_len == 0 || point_count == 0 ||
      bits_per_param == 0 || final_round < 0) {
    throw std::invalid_argument("storage_bound: all arguments must be positive");
  }
  const double factor = (static_cast<double>(stored_users) / users) *
                        ((1.0 + std::log2(static_cast<double>(point_count))) /
                         static_cast<double>(subvec_len)) /
                        static_cast<double>(bits_per_param);
  return factor * storage_fu_bits(users, final_round, param_count, bits_per_param);
}

HistoryStore encode_store(const HistoryStore& raw, const CodecConfig& cfg,
                          std::uint64_t* overloads) {
  if (raw.header.mode != StoreMode::Raw) {
    throw std::invalid_argument("encode_store needs a raw-mode store");
  }
  if (cfg.total_users != raw.header.users) {
    throw std::invalid_argument("codec user count does not match the store");
  }
  MeduHistorySink sink(cfg, raw.header.param_count);
  for (const RawRound& round : raw.raw_rounds) {
    RoundGradients grads;
    grads.t = round.t;
    grads.per_user = round.per_user;
    sink.on_round(grads);
  }
  if (overloads) *overloads = sink.overload_count();
  return sink.take();
}

}  // namespace medu
