#pragma once

// Counter-based Philox4x32-10 generator with named stream splitting.
//
// Every random quantity in the library is drawn from a (seed, stream,
// substream) triple. The seed is the Philox key; stream and substream occupy
// the two high counter words, so distinct triples never share a counter block
// and any replication can be replayed in isolation.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace flowtarget {

enum class Stream : std::uint32_t {
  instance = 1,
  arrivals = 2,
  restarts = 3,
  observations = 4,
};

class Philox4x32 {
 public:
  using result_type = std::uint32_t;

  Philox4x32(std::uint64_t seed, Stream stream, std::uint32_t substream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        counter_{0, 0, static_cast<std::uint32_t>(stream), substream} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (index_ == 4) {
      block_ = round10(counter_, key_);
      increment();
      index_ = 0;
    }
    return block_[index_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = (*this)();
    const std::uint64_t lo = (*this)();
    return (hi << 32) | lo;
  }

  /// Uniform on [0,1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard (max-)Gumbel draw.
  double gumbel() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(-std::log(u));
  }

  /// Raw block function, exposed for the known-answer test.
  static std::array<std::uint32_t, 4> round10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

  void increment() {
    if (++counter_[0] == 0) ++counter_[1];
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int index_ = 4;
};

}  // namespace flowtarget
