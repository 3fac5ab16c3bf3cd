#pragma once

// Deterministic random streams. Distributions are hand-rolled on top of
// mt19937_64 so sampled sequences are identical across standard libraries
// for a given seed.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace modr::rng {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0, 1)
    return (gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {  // Box-Muller, one draw per two uniforms
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  Eigen::VectorXd normal_vec(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // index sampled proportionally to nonnegative weights
  int categorical(const Eigen::VectorXd& weights) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw std::invalid_argument("categorical: nonpositive weight sum");
    double u = uniform() * total;
    for (int i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return static_cast<int>(weights.size()) - 1;
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace modr::rng
