#pragma once

#include <complex>
#include <vector>

namespace marginfer {

/// In-place radix-2 Cooley-Tukey FFT, X_k = sum_n x_n exp(-2*pi*i*k*n/N).
/// N must be a power of two (ArgumentError otherwise).
void fft(std::vector<std::complex<double>>& data);

/// Inverse transform, x_n = (1/N) sum_k X_k exp(+2*pi*i*k*n/N).
void ifft(std::vector<std::complex<double>>& data);

bool is_power_of_two(std::size_t n);

}  // namespace marginfer
