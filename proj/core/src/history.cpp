#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "medu/bitio.hpp"
#include "medu/codec.hpp"
#include "medu/errors.hpp"

namespace medu {
namespace {

constexpr char kHistoryMagic[8] = {'M', 'E', 'D', 'U', 'H', 'I', 'S', 'T'};
constexpr std::uint16_t kHistoryVersion = 1;
// The lattice-kind byte also carries the bypass (identity quantizer) mode.
constexpr std::uint8_t kKindScalar = 0;
constexpr std::uint8_t kKindHexagonal = 1;
constexpr std::uint8_t kKindBypass = 2;

std::size_t n_subvectors(const HistoryHeader& h) {
  const std::size_t l = h.subvec_len;
  return (static_cast<std::size_t>(h.param_count) + l - 1) / l;
}

std::uint8_t kind_byte(const HistoryHeader& h) {
  if (h.bypass) return kKindBypass;
  return h.lattice_kind == LatticeKind::Scalar ? kKindScalar : kKindHexagonal;
}

}  // namespace

std::vector<std::uint8_t> serialize_store(const HistoryStore& store) {
  const HistoryHeader& h = store.header;
  std::vector<std::uint8_t> out;
  write_bytes(out, kHistoryMagic, sizeof(kHistoryMagic));
  write_u16(out, h.version);
  write_u8(out, static_cast<std::uint8_t>(h.mode));
  write_u32(out, h.users);
  write_u64(out, h.param_count);
  write_u16(out, h.subvec_len);
  write_u8(out, kind_byte(h));
  write_f64(out, h.lattice_step);
  write_f64(out, h.lattice_radius);
  write_u16(out, h.stored_users);
  write_u8(out, h.with_replacement ? 1 : 0);
  write_u64(out, h.seed);
  write_u32(out, static_cast<std::uint32_t>(store.round_count()));

  if (h.mode == StoreMode::Raw) {
    for (const RawRound& round : store.raw_rounds) {
      write_u32(out, static_cast<std::uint32_t>(round.t));
      write_f64(out, 0.0);  // no threshold in raw mode
      for (const ParamVector& g : round.per_user) {
        for (double v : g) write_f64(out, v);
      }
    }
    return out;
  }

  const std::size_t n_sub = n_subvectors(h);
  unsigned width = 64u * h.subvec_len;
  if (!h.bypass) {
    width = build_lattice(h.lattice_kind, h.lattice_step, h.lattice_radius)
                .index_bits;
  }
  for (const EncodedRound& round : store.encoded_rounds) {
    write_u32(out, static_cast<std::uint32_t>(round.t));
    write_f64(out, round.delta);
    for (const EncodedSlot& slot : round.slots) {
      write_f64(out, slot.scale);
      BitWriter bitmap;
      for (std::size_t m = 0; m < n_sub; ++m) {
        bitmap.put(slot.present[m] ? 1 : 0, 1);
      }
      write_bytes(out, bitmap.bytes().data(), bitmap.bytes().size());
      if (h.bypass) {
        for (double v : slot.raw) write_f64(out, v);
      } else {
        BitWriter indices;
        for (std::uint32_t idx : slot.indices) indices.put(idx, width);
        write_bytes(out, indices.bytes().data(), indices.bytes().size());
      }
    }
  }
  return out;
}

HistoryStore parse_store(std::span<const std::uint8_t> bytes,
                         const std::string& name) {
  ByteReader reader(bytes, name);
  auto magic = reader.take(8);
  if (std::memcmp(magic.data(), kHistoryMagic, 8) != 0) {
    throw ParseError(name + ": bad history magic");
  }
  HistoryStore store;
  HistoryHeader& h = store.header;
  h.version = reader.u16();
  if (h.version != kHistoryVersion) {
    throw ParseError(name + ": unsupported version " + std::to_string(h.version));
  }
  const std::uint8_t mode = reader.u8();
  if (mode > 1) throw ParseError(name + ": unknown mode byte");
  h.mode = static_cast<StoreMode>(mode);
  h.users = reader.u32();
  h.param_count = reader.u64();
  h.subvec_len = reader.u16();
  const std::uint8_t kind = reader.u8();
  if (kind > kKindBypass) throw ParseError(name + ": unknown lattice kind");
  h.bypass = kind == kKindBypass;
  h.lattice_kind = kind == kKindHexagonal ? LatticeKind::Hexagonal
                                          : LatticeKind::Scalar;
  h.lattice_step = reader.f64();
  h.lattice_radius = reader.f64();
  h.stored_users = reader.u16();
  h.with_replacement = reader.u8() != 0;
  h.seed = reader.u64();
  const std::uint32_t rounds = reader.u32();
  if (h.users == 0 || h.param_count == 0 || h.subvec_len == 0) {
    throw ParseError(name + ": degenerate header");
  }

  if (h.mode == StoreMode::Raw) {
    for (std::uint32_t r = 0; r < rounds; ++r) {
      reader.set_context("round " + std::to_string(r));
      const std::uint32_t t = reader.u32();
      if (t != r) {
        throw ParseError(name + ": round " + std::to_string(t) +
                         " out of sequence at position " + std::to_string(r));
      }
      reader.f64();  // threshold field, unused in raw mode
      RawRound round;
      round.t = static_cast<int>(t);
      round.per_user.resize(h.users);
      for (auto& g : round.per_user) {
        g.resize(h.param_count);
        for (auto& v : g) v = reader.f64();
      }
      store.raw_rounds.push_back(std::move(round));
    }
    if (!reader.done()) {
      throw ParseError(name + ": trailing bytes after the last round");
    }
    return store;
  }

  if (h.stored_users == 0) throw ParseError(name + ": zero stored users");
  unsigned width = 64u * h.subvec_len;
  std::size_t point_count = 0;
  if (!h.bypass) {
    try {
      const Lattice lat =
          build_lattice(h.lattice_kind, h.lattice_step, h.lattice_radius);
      width = lat.index_bits;
      point_count = lat.points.size();
    } catch (const std::invalid_argument& e) {
      throw ParseError(name + ": invalid lattice parameters: " + e.what());
    }
  }
  (void)point_count;  // index range is validated at decode time

  const std::size_t n_sub = n_subvectors(h);
  const std::size_t bitmap_bytes = (n_sub + 7) / 8;
  for (std::uint32_t r = 0; r < rounds; ++r) {
    reader.set_context("round " + std::to_string(r));
    const std::uint32_t t = reader.u32();
    if (t != r) {
      throw ParseError(name + ": round " + std::to_string(t) +
                       " out of sequence at position " + std::to_string(r));
    }
    EncodedRound round;
    round.t = static_cast<int>(t);
    round.delta = reader.f64();
    std::vector<std::uint32_t> selection;
    try {
      selection = select_users(h.users, h.stored_users, round.t, h.seed,
                               h.with_replacement);
    } catch (const std::invalid_argument& e) {
      throw ParseError(name + ": header selection parameters: " + e.what());
    }
    for (const auto& [user, mult] : selection_distinct(selection)) {
      (void)mult;
      reader.set_context("round " + std::to_string(r) + ", user " +
                         std::to_string(user + 1));
      EncodedSlot slot;
      slot.user = user;
      slot.scale = reader.f64();
      const auto bitmap = reader.take(bitmap_bytes);
      slot.present.resize(n_sub);
      std::size_t stored = 0;
      for (std::size_t m = 0; m < n_sub; ++m) {
        const bool bit = (bitmap[m / 8] >> (m % 8)) & 1u;
        slot.present[m] = bit;
        stored += bit ? 1 : 0;
      }
      for (std::size_t b = n_sub; b < bitmap_bytes * 8; ++b) {
        if ((bitmap[b / 8] >> (b % 8)) & 1u) {
          throw ParseError(name + ": nonzero bitmap padding (round " +
                           std::to_string(r) + ", user " +
                           std::to_string(user + 1) + ")");
        }
      }
      if (h.bypass) {
        slot.raw.resize(stored * h.subvec_len);
        for (auto& v : slot.raw) v = reader.f64();
      } else {
        const std::size_t payload_bytes = (stored * width + 7) / 8;
        const auto payload = reader.take(payload_bytes);
        BitReader bits(payload);
        for (std::size_t i = 0; i < stored; ++i) {
          slot.indices.push_back(static_cast<std::uint32_t>(bits.get(width)));
        }
      }
      round.slots.push_back(std::move(slot));
    }
    store.encoded_rounds.push_back(std::move(round));
  }
  if (!reader.done()) {
    throw ParseError(name + ": trailing bytes after the last round");
  }
  return store;
}

void save_store(const std::filesystem::path& path, const HistoryStore& store) {
  const auto bytes = serialize_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

HistoryStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_store(bytes, path.filename().string());
}

RawHistorySink::RawHistorySink(std::uint32_t users, std::uint64_t param_count) {
  store_.header.mode = StoreMode::Raw;
  store_.header.users = users;
  store_.header.param_count = param_count;
  store_.header.stored_users = static_cast<std::uint16_t>(std::min<std::uint32_t>(users, 0xffff));
}

void RawHistorySink::on_round(const RoundGradients& grads) {
  if (grads.t != static_cast<int>(store_.raw_rounds.size())) {
    throw std::invalid_argument("round " + std::to_string(grads.t) +
                                " out of order");
  }
  if (grads.per_user.size() != store_.header.users) {
    throw std::invalid_argument("gradient count does not match user count");
  }
  for (const ParamVector& g : grads.per_user) {
    if (g.size() != store_.header.param_count) {
      throw std::invalid_argument("gradient length mismatch");
    }
  }
  RawRound round;
  round.t = grads.t;
  round.per_user = grads.per_user;
  store_.raw_rounds.push_back(std::move(round));
}

MeduHistorySink::MeduHistorySink(const CodecConfig& cfg,
                                 std::uint64_t param_count)
    : encoder_(cfg, param_count) {
  store_.header.mode = StoreMode::Medu;
  store_.header.users = cfg.total_users;
  store_.header.param_count = param_count;
  store_.header.subvec_len = cfg.subvec_len;
  store_.header.lattice_kind = cfg.lattice_kind;
  store_.header.bypass = cfg.bypass;
  store_.header.lattice_step = cfg.lattice_step;
  store_.header.lattice_radius = cfg.lattice_radius;
  store_.header.stored_users = static_cast<std::uint16_t>(cfg.stored_users);
  store_.header.with_replacement = cfg.with_replacement;
  store_.header.seed = cfg.seed;
}

void MeduHistorySink::on_round(const RoundGradients& grads) {
  store_.encoded_rounds.push_back(encoder_.encode_round(grads));
}

}  // namespace medu
