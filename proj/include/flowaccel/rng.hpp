#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>

#include "flowaccel/tensor.hpp"

namespace flowaccel {

// Seeded generator with a platform-independent draw sequence.
//
// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
// C++ standard. The standard <random> distributions are implementation
// defined, so the conversions are done here:
//   uniform01: top 53 bits scaled by 2^-53, giving [0, 1).
//   normal:    Box-Muller on (1 - u1, u2); both outputs of a pair are used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  Tensor normal_tensor(Shape shape) {
    Tensor out(std::move(shape));
    for (auto& v : out.data()) v = normal();
    return out;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor out(std::move(shape));
    for (auto& v : out.data()) v = uniform(lo, hi);
    return out;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace flowaccel
