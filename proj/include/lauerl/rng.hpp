#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>

namespace lauerl {

// Deterministic random stream. All distribution transforms are implemented
// explicitly (not via std:: distributions) so that a given seed produces the
// same sequence on every build of this project, and so that (seed, engine
// state) captures the full generator state for save/restore.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    const int span = hi - lo + 1;
    int v = lo + static_cast<int>(uniform() * span);
    return v > hi ? hi : v;
  }

  // Standard normal via Box-Muller; two uniforms consumed per call, no
  // cached second value (keeps the engine state the whole state).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent substream identified by index, derived from the construction
  // seed only; does not depend on or advance this generator's state.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t x = seed_ ^ (stream + 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return Rng(x ^ (x >> 31));
  }

  std::uint64_t seed() const { return seed_; }

  void save(std::ostream& os) const { os << seed_ << ' ' << engine_; }
  void load(std::istream& is) { is >> seed_ >> engine_; }

  bool operator==(const Rng& other) const {
    return seed_ == other.seed_ && engine_ == other.engine_;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace lauerl
