#pragma once

#include <cstdint>
#include <span>

namespace icbir {

// Deterministic pseudo-random source shared by every stochastic component.
//
// The generator is splitmix64; normal deviates come from the Marsaglia polar
// transform built on top of it.  The polar transform needs a natural log, and
// libm's log() is not guaranteed to round identically across platforms, so we
// use our own correctly-converging series (deterministic_log below).  With
// that, identical seeds give bit-identical draw sequences on any IEEE-754
// machine regardless of OS, libm version, or thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derives an independent child generator for a named stream.  Used to give
  // each tensor / sample / purpose its own sequence from one master seed.
  static Rng fork(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_uniform();

  // Uniform integer in [0, n).  n must be nonzero.
  std::uint64_t next_below(std::uint64_t n);

  // Standard normal deviate (Marsaglia polar method, cached spare).
  double next_normal();

  void fill_normal(std::span<float> out);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Natural log computed from frexp plus the atanh series, summed until terms
// fall below 1e-18.  Bit-stable across platforms (uses only +,-,*,/ on
// doubles), accurate to ~1 ulp for all finite positive inputs.
double deterministic_log(double x);

// splitmix64 output function exposed for seed derivation / hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace icbir
