#include <cstring>

#include "doctest.h"
#include "medu/bitio.hpp"
#include "medu/codec.hpp"
#include "medu/errors.hpp"
#include "medu/rng.hpp"

using namespace medu;

namespace {

// Independent byte-level writer for the history layout, kept deliberately
// separate from serialize_store so the two can disagree.
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_f64(std::vector<std::uint8_t>& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}

HistoryStore tiny_raw_store() {
  RawHistorySink sink(2, 3);
  sink.on_round({0, {{1.0, 2.0, 3.0}, {-1.0, 0.5, 0.25}}});
  sink.on_round({1, {{0.125, 0.0, -8.0}, {4.0, 5.0, 6.0}}});
  return sink.take();
}

}  // namespace

TEST_CASE("raw store bytes follow the declared layout") {
  const HistoryStore store = tiny_raw_store();
  const auto bytes = serialize_store(store);

  std::vector<std::uint8_t> expect;
  const char magic[8] = {'M', 'E', 'D', 'U', 'H', 'I', 'S', 'T'};
  expect.insert(expect.end(), magic, magic + 8);
  put_u16(expect, 1);       // version
  expect.push_back(0);      // mode raw
  put_u32(expect, 2);       // U
  put_u64(expect, 3);       // M
  put_u16(expect, 1);       // L
  expect.push_back(0);      // lattice kind
  put_f64(expect, 0.0);     // step
  put_f64(expect, 0.0);     // radius
  put_u16(expect, 2);       // stored users
  expect.push_back(0);      // replacement
  put_u64(expect, 0);       // seed
  put_u32(expect, 2);       // rounds
  for (int t = 0; t < 2; ++t) {
    put_u32(expect, static_cast<std::uint32_t>(t));
    put_f64(expect, 0.0);  // threshold, unused in raw mode
    for (const ParamVector& g : store.raw_rounds[t].per_user) {
      for (double v : g) put_f64(expect, v);
    }
  }
  CHECK(bytes == expect);
}

TEST_CASE("encoded store bytes follow the declared layout") {
  // Scalar 5-point codebook: indices are 3-bit fields. One user of M=5, L=1,
  // so the bitmap is 5 bits in one byte.
  HistoryStore store;
  store.header.mode = StoreMode::Medu;
  store.header.users = 3;
  store.header.param_count = 5;
  store.header.subvec_len = 1;
  store.header.lattice_kind = LatticeKind::Scalar;
  store.header.lattice_step = 1.0;
  store.header.lattice_radius = 2.5;
  store.header.stored_users = 1;
  store.header.with_replacement = false;
  store.header.seed = 77;

  const auto selection = select_users(3, 1, 0, 77, false);
  REQUIRE(selection.size() == 1);
  EncodedRound round;
  round.t = 0;
  round.delta = 0.5;
  EncodedSlot slot;
  slot.user = selection[0];
  slot.scale = 2.0;
  slot.present = {true, false, true, true, false};
  slot.indices = {4, 1, 3};
  round.slots.push_back(slot);
  store.encoded_rounds.push_back(round);

  const auto bytes = serialize_store(store);

  std::vector<std::uint8_t> expect;
  const char magic[8] = {'M', 'E', 'D', 'U', 'H', 'I', 'S', 'T'};
  expect.insert(expect.end(), magic, magic + 8);
  put_u16(expect, 1);
  expect.push_back(1);  // mode medu
  put_u32(expect, 3);
  put_u64(expect, 5);
  put_u16(expect, 1);
  expect.push_back(0);  // scalar
  put_f64(expect, 1.0);
  put_f64(expect, 2.5);
  put_u16(expect, 1);
  expect.push_back(0);
  put_u64(expect, 77);
  put_u32(expect, 1);
  // round header
  put_u32(expect, 0);
  put_f64(expect, 0.5);
  // slot: scale, bitmap 0b01101 (LSB-first: bits 0,2,3), indices 4,1,3 in
  // 3-bit LSB-first fields: 100 | 001<<3 | 011<<6 -> 0b11001100, 0b1.
  put_f64(expect, 2.0);
  expect.push_back(0x0d);  // bitmap 0b00001101
  expect.push_back(0xcc);  // 4 | 1<<3 | (3&3)<<6 = 0b11001100
  expect.push_back(0x00);  // third index's high bit is zero, byte-padded
  CHECK(bytes == expect);

  // And the parser inverts it, reconstructing the slot's user from the seed.
  const HistoryStore parsed = parse_store(bytes, "golden");
  REQUIRE(parsed.encoded_rounds.size() == 1);
  const EncodedSlot& back = parsed.encoded_rounds[0].slots.at(0);
  CHECK(back.user == selection[0]);
  CHECK(back.scale == 2.0);
  CHECK(back.present == slot.present);
  CHECK(back.indices == slot.indices);
}

TEST_CASE("serialize/parse round trip is the identity on real stores") {
  RawHistorySink sink(3, 7);
  RngStream stream(123, {});
  for (int t = 0; t < 4; ++t) {
    RoundGradients grads;
    grads.t = t;
    grads.per_user.resize(3);
    for (auto& g : grads.per_user) {
      g.resize(7);
      for (auto& v : g) v = stream.gaussian();
    }
    sink.on_round(grads);
  }
  const HistoryStore raw = sink.take();
  CHECK(serialize_store(parse_store(serialize_store(raw), "raw")) ==
        serialize_store(raw));

  CodecConfig cc;
  cc.total_users = 3;
  cc.stored_users = 2;
  cc.delta = DeltaSchedule::constant(1e-3);
  cc.subvec_len = 1;
  cc.lattice_kind = LatticeKind::Scalar;
  cc.lattice_step = 0.25;
  cc.lattice_radius = 1.0;
  cc.seed = 9;
  const HistoryStore medu = encode_store(raw, cc);
  CHECK(serialize_store(parse_store(serialize_store(medu), "medu")) ==
        serialize_store(medu));
}

TEST_CASE("truncated files name the failing round") {
  RawHistorySink sink(2, 3);
  sink.on_round({0, {{1, 2, 3}, {4, 5, 6}}});
  sink.on_round({1, {{1, 2, 3}, {4, 5, 6}}});
  auto bytes = serialize_store(sink.take());
  bytes.resize(bytes.size() - 10);
  CHECK_THROWS_WITH_AS(parse_store(bytes, "t"), doctest::Contains("round 1"),
                       ParseError);
}

TEST_CASE("bad magic and version are rejected") {
  auto bytes = serialize_store(tiny_raw_store());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_store(bad_magic, "m"), ParseError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(parse_store(bad_version, "v"), ParseError);
}

TEST_CASE("payload bit flips never crash: error or a different gradient") {
  RawHistorySink sink(3, 6);
  RngStream stream(321, {});
  for (int t = 0; t < 3; ++t) {
    RoundGradients grads;
    grads.t = t;
    grads.per_user.resize(3);
    for (auto& g : grads.per_user) {
      g.resize(6);
      for (auto& v : g) v = stream.gaussian();
    }
    sink.on_round(grads);
  }
  CodecConfig cc;
  cc.total_users = 3;
  cc.stored_users = 2;
  cc.delta = DeltaSchedule::constant(1e-2);
  cc.subvec_len = 2;
  cc.lattice_kind = LatticeKind::Hexagonal;
  cc.lattice_step = 0.2;
  cc.lattice_radius = 1.0;
  cc.seed = 5;
  const HistoryStore medu = encode_store(sink.take(), cc);
  const auto clean = serialize_store(medu);
  const std::size_t header_bytes = 8 + 2 + 1 + 4 + 8 + 2 + 1 + 8 + 8 + 2 + 1 + 8 + 4;

  RngStream flip(55, {});
  int decoded_fine = 0, rejected = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto bytes = clean;
    const std::size_t payload = bytes.size() - header_bytes;
    const std::size_t pos = header_bytes + flip.below(payload);
    bytes[pos] ^= static_cast<std::uint8_t>(1u << flip.below(8));
    try {
      const HistoryStore parsed = parse_store(bytes, "fuzz");
      (void)decode_history(parsed, std::nullopt);
      ++decoded_fine;
    } catch (const ParseError&) {
      ++rejected;
    } catch (const DecodeError&) {
      ++rejected;
    }
  }
  CHECK(decoded_fine + rejected == 200);
}
