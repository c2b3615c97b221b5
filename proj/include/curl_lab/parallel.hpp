#pragma once

// Deterministic chunked parallelism. Work is cut into fixed-size chunks whose
// boundaries do not depend on the worker count; each chunk draws from its own
// random substream keyed by (seed, chunk index) and partial results are
// merged in chunk order. Output is therefore bit-identical for any number of
// threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>

namespace curl {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based generator: output i is a keyed hash of i. Satisfies
/// UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key = 0) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    std::uint64_t x = key_ + (++counter_) * 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Generator for substream `chunk` of `seed`.
Rng make_substream(std::uint64_t seed, std::uint64_t chunk) noexcept;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) noexcept { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n), n > 0 (multiply-shift; bias below 2^-40 for
/// the sizes used here).
inline std::size_t uniform_index(Rng& rng, std::size_t n) noexcept {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

/// Worker count: explicit request if > 0, else CURL_LAB_THREADS, else 1.
int resolve_threads(int requested) noexcept;

/// Runs body(chunk) for chunk in [0, num_chunks) on up to `threads` workers.
/// Exceptions from the body are rethrown on the calling thread.
void parallel_for_chunks(std::size_t num_chunks, int threads, const std::function<void(std::size_t)>& body);

/// Running mean / sum of squared deviations (Welford), mergeable.
struct RunningMoments {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) noexcept;
  void merge(const RunningMoments& other) noexcept;
  /// Sample variance with n - 1 in the denominator (0 when count < 2).
  double variance() const noexcept;
};

}  // namespace curl
