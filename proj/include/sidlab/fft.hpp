#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sidlab {

// Iterative radix-2 Cooley-Tukey. Size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

inline bool is_power_of_two(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }
int64_t next_power_of_two(int64_t n);

}  // namespace sidlab
