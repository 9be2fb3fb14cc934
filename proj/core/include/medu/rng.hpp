#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace medu {

// Every random quantity in the simulator is drawn from a stream addressed by
// (seed, integer key path), e.g. (seed, Dither, t, u, m). Regenerating a
// stream from the same address yields the identical sequence on any platform,
// which is what lets the decoder re-derive selections and dithers from the
// stored seed alone, and makes runs reproducible under any thread count.

enum class StreamTag : std::uint64_t {
  Init = 1,        // weight initialization
  Partition = 2,   // data partitioning
  Batch = 3,       // local SGD shuffling, keyed (t, u)
  Select = 4,      // stored-user selection, keyed (t)
  Dither = 5,      // quantizer dither, keyed (t, u, m)
  Dataset = 6,     // synthetic data generation
  Backdoor = 8,    // poisoning choices
  MonteCarlo = 9,  // tests and bound verification
  Split = 10,      // train/test split
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ stream seeded from an explicit key path.
class RngStream {
 public:
  RngStream() : RngStream(0, {}) {}

  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t key = seed;
    for (std::uint64_t element : path) key = combine(key, element);
    seed_state(key);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1), 53 significant bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unbiased draw from {0, ..., n-1}.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller. The sine partner is discarded so the
  /// stream position depends only on the number of calls.
  double gaussian() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925287 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t combine(std::uint64_t key, std::uint64_t element) {
    return key ^ (element + 0x9e3779b97f4a7c15ULL + (key << 6) + (key >> 2));
  }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  void seed_state(std::uint64_t key) {
    std::uint64_t s = key;
    for (auto& word : state_) word = splitmix64(s);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::array<std::uint64_t, 4> state_{};
};

/// Stream for (seed, tag, rest...).
inline RngStream derive_stream(std::uint64_t seed, StreamTag tag,
                               std::initializer_list<std::uint64_t> rest = {}) {
  std::uint64_t key = seed;
  auto mix = [&key](std::uint64_t element) {
    key ^= element + 0x9e3779b97f4a7c15ULL + (key << 6) + (key >> 2);
  };
  mix(static_cast<std::uint64_t>(tag));
  for (std::uint64_t element : rest) mix(element);
  return RngStream(key, {});
}

}  // namespace medu
