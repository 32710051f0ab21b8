#pragma once

// Platform-independent random streams and hashing.
//
// Every random decision in the library (mapping shuffles, weight init,
// dropout masks, noise samples) is drawn from SplitMix64 so that a seed
// fully determines the result on any conforming platform:
//
//   state += 0x9e3779b97f4a7c15
//   z = state
//   z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//   z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//   return z ^ (z >> 31)
//
// Bounded integers use rejection sampling: for a bound n, draws r below
// (2^64 mod n) are rejected and the result is r mod n. Reals in [0, 1)
// take the top 53 bits of one draw.

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace slimlm {

constexpr std::uint64_t kFnvOffsetBasis64 = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime64 = 1099511628211ULL;

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform real in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

 private:
  std::uint64_t state_;
};

// In-place Fisher-Yates: for i = n-1 down to 1, swap v[i] with v[below(i+1)].
template <typename T>
void fisher_yates_shuffle(std::span<T> v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(v[i - 1], v[j]);
  }
}

template <typename T>
void fisher_yates_shuffle(std::vector<T>& v, SplitMix64& rng) {
  fisher_yates_shuffle(std::span<T>(v), rng);
}

// FNV-1a, 64-bit, continuing from `hash`.
inline std::uint64_t fnv1a_bytes(std::span<const unsigned char> bytes,
                                 std::uint64_t hash = kFnvOffsetBasis64) noexcept {
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= kFnvPrime64;
  }
  return hash;
}

// Feeds the 8 little-endian bytes of `value`.
inline std::uint64_t fnv1a_u64(std::uint64_t value, std::uint64_t hash) noexcept {
  for (int i = 0; i < 8; ++i) {
    hash ^= (value >> (8 * i)) & 0xffU;
    hash *= kFnvPrime64;
  }
  return hash;
}

// FNV-1a over the little-endian concatenation (seed, word, position).
inline std::uint64_t slot_hash(std::uint64_t seed, std::uint64_t word,
                               std::uint64_t position) noexcept {
  std::uint64_t h = fnv1a_u64(seed, kFnvOffsetBasis64);
  h = fnv1a_u64(word, h);
  return fnv1a_u64(position, h);
}

inline std::uint64_t fnv1a_string(std::string_view s,
                                  std::uint64_t hash = kFnvOffsetBasis64) noexcept {
  return fnv1a_bytes({reinterpret_cast<const unsigned char*>(s.data()), s.size()}, hash);
}

// Independent child stream for a named purpose ("map-in", "init", ...):
// FNV-1a over the little-endian master seed followed by the tag bytes.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept {
  return fnv1a_string(tag, fnv1a_u64(master, kFnvOffsetBasis64));
}

}  // namespace slimlm
