#include "metalens/optics/noise.hpp"

#include <cmath>
#include <random>

#include "metalens/errors.hpp"

namespace metalens::optics {

namespace {

std::uint64_t splitmix(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

void NoiseModel::validate() const {
  if (!(sigma_g >= 0.0)) throw ContractError("noise sigma_g must be >= 0");
  if (!(sigma_p > 0.0)) throw ContractError("noise sigma_p must be > 0");
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t s = seed;
  state_ = splitmix(s) ^ (counter * 0xD1B54A32D192ED03ull);
  splitmix(state_);
}

CounterRng::result_type CounterRng::operator()() { return splitmix(state_); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  CounterRng rng(base, index + 1);
  return rng();
}

numerics::Tensor apply_noise(const numerics::Tensor& x, const NoiseModel& model) {
  model.validate();
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0) throw ContractError("apply_noise: negative input intensity");
    CounterRng rng(model.seed, i);
    const double lambda = v[i] / model.sigma_p;
    double y = 0.0;
    if (lambda > 0.0) {
      std::poisson_distribution<long long> shot(lambda);
      y = model.sigma_p * static_cast<double>(shot(rng));
    }
    if (model.sigma_g > 0.0) {
      std::normal_distribution<double> read(0.0, model.sigma_g);
      y += read(rng);
    }
    out[i] = std::max(0.0, y);
  }
  return numerics::Tensor(x.shape(), std::move(out), x.dtype() == numerics::DType::F32 ? numerics::DType::F32
                                                                                        : numerics::DType::F64);
}

}  // namespace metalens::optics
