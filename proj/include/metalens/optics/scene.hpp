#pragma once

#include <cstdint>

#include "metalens/numerics/tensor.hpp"

namespace metalens::optics {

/// Deterministic RGB test card in [0,1]: ramps, a checkerboard, discs and
/// a radial chirp, so every frequency band carries energy.
numerics::Tensor test_card(std::size_t height, std::size_t width);

/// Random synthetic RGB scene in [0,1]: a smooth background with
/// overlapping coloured shapes and striped textures.
numerics::Tensor random_scene(std::uint64_t seed, std::size_t height, std::size_t width);

}  // namespace metalens::optics
