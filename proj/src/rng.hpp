#pragma once

#include <cstdint>
#include <span>

namespace dafe {

/// Counter-based pseudo random generator. The full state is
/// (seed, stream, counter) plus one cached Gaussian draw, so streams can be
/// serialized, restored, and forked per worker without sharing.
/// Identical (seed, stream, call sequence) gives bitwise-identical output.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  /// Uniform draw in [0, 1) with 53 random bits.
  double next_double();

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t next_index(std::uint64_t n);

  /// Standard normal via Box-Muller; consumes two uniforms every other call.
  double next_gaussian();

  /// An independent generator with the same seed and a different stream id.
  SeededRng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  struct State {
    std::uint64_t seed;
    std::uint64_t stream;
    std::uint64_t counter;
    double gauss_cache;
    bool has_gauss_cache;
  };
  State state() const;
  static SeededRng from_state(const State& s);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  double gauss_cache_ = 0.0;
  bool has_gauss_cache_ = false;
};

/// Bernoulli draw; p outside [0,1] is a parameter error.
int sample_bernoulli(double p, SeededRng& rng);

/// Gaussian with the given mean and unit variance.
double sample_gaussian(double mean, SeededRng& rng);

/// Categorical draw over non-negative weights (not necessarily normalized).
std::size_t sample_categorical(std::span<const double> weights, SeededRng& rng);

}  // namespace dafe
