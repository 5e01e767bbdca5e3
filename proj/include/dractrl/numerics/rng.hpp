#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace dractrl {

// Counter-based generator (Philox4x32-10). The output stream is a pure
// function of (seed, stream, position), so independent consumers can draw
// from disjoint streams without coordinating on call order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();
  std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard normal via Box-Muller.
  double normal();

  // Child generator on a stream derived from this one's stream and `id`.
  Rng fork(std::uint64_t id) const;

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Mixes a list of integers into one stream id.
std::uint64_t stream_id(std::initializer_list<std::uint64_t> parts);

}  // namespace dractrl
