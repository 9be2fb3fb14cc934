#include <benchmark/benchmark.h>

#include "medu/bounds.hpp"
#include "medu/codec.hpp"
#include "medu/harness.hpp"

namespace {

using namespace medu;

HistoryStore bench_raw(std::uint32_t users, int rounds, std::uint64_t m) {
  RawHistorySink sink(users, m);
  RngStream stream(1, {});
  for (int t = 0; t < rounds; ++t) {
    RoundGradients grads;
    grads.t = t;
    grads.per_user.resize(users);
    for (auto& g : grads.per_user) {
      g.resize(m);
      for (auto& v : g) v = 0.1 * stream.gaussian();
    }
    sink.on_round(grads);
  }
  return sink.take();
}

CodecConfig bench_codec(std::uint32_t users, LatticeKind kind, int rate) {
  CodecConfig cc;
  cc.total_users = users;
  cc.stored_users = users / 2;
  cc.delta = DeltaSchedule::constant(1e-4);
  cc.subvec_len = kind == LatticeKind::Scalar ? 1 : 2;
  cc.lattice_kind = kind;
  const Lattice lat = lattice_for_rate(kind, rate);
  cc.lattice_step = lat.step;
  cc.lattice_radius = lat.radius;
  cc.seed = 2;
  return cc;
}

void BM_NearestPointHex(benchmark::State& state) {
  const Lattice lat = lattice_for_rate(LatticeKind::Hexagonal,
                                       static_cast<int>(state.range(0)));
  RngStream stream(3, {});
  double x[2] = {0.0, 0.0};
  for (auto _ : state) {
    x[0] = stream.uniform(-0.7, 0.7);
    x[1] = stream.uniform(-0.7, 0.7);
    benchmark::DoNotOptimize(nearest_point(lat, x));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_NearestPointHex)->Arg(4)->Arg(6);

void BM_EncodeRound(benchmark::State& state) {
  const std::uint32_t users = 10;
  const std::uint64_t m = static_cast<std::uint64_t>(state.range(0));
  const HistoryStore raw = bench_raw(users, 4, m);
  const CodecConfig cc = bench_codec(users, LatticeKind::Hexagonal, 4);
  for (auto _ : state) {
    MeduEncoder encoder(cc, m);
    for (const RawRound& round : raw.raw_rounds) {
      RoundGradients grads{round.t, round.per_user};
      benchmark::DoNotOptimize(encoder.encode_round(grads));
    }
  }
  state.SetItemsProcessed(state.iterations() * raw.raw_rounds.size());
}
BENCHMARK(BM_EncodeRound)->Arg(256)->Arg(2048);

void BM_DecodeHistory(benchmark::State& state) {
  const std::uint32_t users = 10;
  const std::uint64_t m = static_cast<std::uint64_t>(state.range(0));
  const HistoryStore raw = bench_raw(users, 8, m);
  const HistoryStore medu =
      encode_store(raw, bench_codec(users, LatticeKind::Hexagonal, 4));
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_history(medu, 0));
  }
  state.SetItemsProcessed(state.iterations() * medu.encoded_rounds.size());
}
BENCHMARK(BM_DecodeHistory)->Arg(256)->Arg(2048);

void BM_SerializeStore(benchmark::State& state) {
  const HistoryStore medu = encode_store(
      bench_raw(10, 8, 2048), bench_codec(10, LatticeKind::Scalar, 4));
  for (auto _ : state) {
    benchmark::DoNotOptimize(serialize_store(medu));
  }
}
BENCHMARK(BM_SerializeStore);

void BM_PartialDoubleSum(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        partial_double_sum(static_cast<int>(state.range(0)), 2.0, 1.0, 10.0));
  }
}
BENCHMARK(BM_PartialDoubleSum)->Arg(1000)->Arg(4000);

}  // namespace

BENCHMARK_MAIN();
