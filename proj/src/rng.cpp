#include "icbir/rng.hpp"

#include <cmath>

#include "icbir/error.hpp"

namespace icbir {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer (Steele, Lea, Flood 2014).
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Rng Rng::fork(std::uint64_t seed, std::uint64_t stream) {
  // Two rounds of mixing keep child streams decorrelated even for
  // consecutive stream ids.
  return Rng(mix64(mix64(seed) ^ mix64(stream ^ 0x517CC1B727220A95ull)));
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) raise(ErrorCode::Parameter, "next_below: bound must be nonzero");
  // Multiply-shift range reduction; bias is < 2^-64 per draw.
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double deterministic_log(double x) {
  if (!(x > 0.0) || std::isinf(x)) {
    raise(ErrorCode::Numeric, "deterministic_log: input must be finite and positive");
  }
  int exponent = 0;
  double m = std::frexp(x, &exponent);  // x = m * 2^e, m in [0.5, 1)
  // Re-center the mantissa into [sqrt(0.5), sqrt(2)) so |t| stays small and
  // the series converges in a dozen terms.
  if (m < 0.70710678118654752440) {
    m *= 2.0;
    exponent -= 1;
  }
  const double t = (m - 1.0) / (m + 1.0);
  const double t2 = t * t;
  double term = t;
  double sum = 0.0;
  for (int k = 1; k < 200; k += 2) {
    const double contribution = term / static_cast<double>(k);
    sum += contribution;
    if (contribution < 1e-18 && contribution > -1e-18) break;
    term *= t2;
  }
  constexpr double kLn2 = 0.69314718055994530941723212145818;
  return 2.0 * sum + static_cast<double>(exponent) * kLn2;
}

double Rng::next_normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method: uniforms are consumed in pairs per attempt, so
  // the draw sequence is a pure function of the seed.
  double u = 0.0, v = 0.0, s = 0.0;
  do {
    u = 2.0 * next_uniform() - 1.0;
    v = 2.0 * next_uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * deterministic_log(s) / s);
  spare_ = v * f;
  have_spare_ = true;
  return u * f;
}

void Rng::fill_normal(std::span<float> out) {
  for (float& value : out) value = static_cast<float>(next_normal());
}

}  // namespace icbir
