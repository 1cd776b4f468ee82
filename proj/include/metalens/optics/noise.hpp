#pragma once

#include <cstdint>
#include <limits>

#include "metalens/numerics/tensor.hpp"

namespace metalens::optics {

/// Signal-dependent sensor noise: y = sigma_p * Poisson(x / sigma_p) + N(0, sigma_g^2),
/// clamped at zero.
struct NoiseModel {
  double sigma_g = 1e-5;
  double sigma_p = 4e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// SplitMix64 stream seeded from (seed, counter). One stream per pixel makes
/// the realization independent of traversal order.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t counter);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

 private:
  std::uint64_t state_;
};

/// Seed for the i-th item derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

numerics::Tensor apply_noise(const numerics::Tensor& x, const NoiseModel& model);

}  // namespace metalens::optics
