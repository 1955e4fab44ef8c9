#include "rng.hpp"

#include <cmath>
#include <numbers>

#include "error.hpp"

namespace dafe {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
  base_ = splitmix64(seed ^ splitmix64(stream * 0xda3e39cb94b95bdbull + 1));
}

std::uint64_t SeededRng::next_u64() {
  ++counter_;
  return splitmix64(base_ + counter_ * 0x9e3779b97f4a7c15ull);
}

double SeededRng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::next_index(std::uint64_t n) {
  if (n == 0) raise(ErrorCode::parameter, "next_index: n must be positive");
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double SeededRng::next_gaussian() {
  if (has_gauss_cache_) {
    has_gauss_cache_ = false;
    return gauss_cache_;
  }
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  gauss_cache_ = radius * std::sin(angle);
  has_gauss_cache_ = true;
  return radius * std::cos(angle);
}

SeededRng SeededRng::fork(std::uint64_t stream) const {
  return SeededRng(seed_, stream);
}

SeededRng::State SeededRng::state() const {
  return State{seed_, stream_, counter_, gauss_cache_, has_gauss_cache_};
}

SeededRng SeededRng::from_state(const State& s) {
  SeededRng rng(s.seed, s.stream);
  rng.counter_ = s.counter;
  rng.gauss_cache_ = s.gauss_cache;
  rng.has_gauss_cache_ = s.has_gauss_cache;
  return rng;
}

int sample_bernoulli(double p, SeededRng& rng) {
  if (!(p >= 0.0 && p <= 1.0))
    raise(ErrorCode::parameter, "bernoulli probability outside [0,1]");
  return rng.next_double() < p ? 1 : 0;
}

double sample_gaussian(double mean, SeededRng& rng) {
  return mean + rng.next_gaussian();
}

std::size_t sample_categorical(std::span<const double> weights, SeededRng& rng) {
  if (weights.empty())
    raise(ErrorCode::parameter, "categorical: empty weight vector");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0))
      raise(ErrorCode::parameter, "categorical: negative or NaN weight");
    total += w;
  }
  if (total <= 0.0)
    raise(ErrorCode::parameter, "categorical: weights sum to zero");
  double u = rng.next_double() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;  // u == total under rounding
}

}  // namespace dafe
