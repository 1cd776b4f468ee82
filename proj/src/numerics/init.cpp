#include "metalens/numerics/init.hpp"

#include <cmath>
#include <random>

#include "metalens/errors.hpp"

namespace metalens::numerics {

std::uint64_t seed_for(std::uint64_t base, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = base ^ h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Tensor uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw ContractError("uniform_init needs fan_in >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::mt19937_64 rng(seed);
  std::vector<double> v(shape_numel(shape));
  // Explicit 53-bit mapping so values do not depend on the library's distribution.
  for (auto& e : v) e = bound * (2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor constant_param(Shape shape, double value) {
  Tensor t = Tensor::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace metalens::numerics
