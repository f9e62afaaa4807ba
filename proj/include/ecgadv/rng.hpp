#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ecgadv {

/// Seeded random source. Wraps std::mt19937_64 and derives uniform and
/// normal draws by hand so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  /// Standard normal via Box-Muller (the second variate is discarded).
  double normal();

  /// Independent child stream; used to give subsystems their own sequences.
  Rng fork(std::uint64_t salt);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace ecgadv
