#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include "metalens/numerics/tensor.hpp"

namespace metalens::numerics {

/// In-place 1-D DFT of arbitrary length. Forward is unscaled; inverse
/// divides by n. Power-of-two lengths use iterative radix-2, all other
/// lengths go through Bluestein's chirp-z reformulation.
void fft1d(std::span<std::complex<double>> data, bool inverse);

/// In-place 2-D DFT of a row-major [rows, cols] plane.
void fft2_inplace(std::span<std::complex<double>> plane, std::size_t rows, std::size_t cols, bool inverse);

/// 2-D DFT over the two trailing axes (leading axes are independent planes).
/// Accepts real or complex input; returns C128. Convention: forward
/// unscaled, inverse scaled by 1/(H*W). NaN input raises NumericError.
Tensor fft2(const Tensor& x);

/// Inverse 2-D DFT returning the real part.
Tensor ifft2(const Tensor& spectrum);

/// Inverse 2-D DFT keeping the complex result.
Tensor ifft2_complex(const Tensor& spectrum);

}  // namespace metalens::numerics
