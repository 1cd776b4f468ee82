#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metalens/numerics/tensor.hpp"

namespace metalens::numerics {

/// A learnable tensor and its hierarchical name ("enc0.block0.sa.wq").
struct NamedParam {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<NamedParam>;

/// Seed for the parameter called `name` under a model seed; stable across
/// platforms and independent of construction order.
std::uint64_t seed_for(std::uint64_t base, std::string_view name);

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], marked as requiring grad.
Tensor uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed);

/// Constant tensor marked as requiring grad.
Tensor constant_param(Shape shape, double value);

}  // namespace metalens::numerics
