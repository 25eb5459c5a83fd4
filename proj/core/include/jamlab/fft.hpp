#pragma once

#include <cstddef>
#include <vector>

#include "jamlab/signal.hpp"

namespace jamlab::specfeat {

bool is_pow2(std::size_t n);

// Iterative radix-2 FFT, unnormalized forward transform
// X[k] = sum_n x[n] e^{-j 2 pi k n / N}. Inverse applies the 1/N factor.
// Size must be a power of two.
void fft_inplace(std::vector<cplx>& a, bool inverse = false);

std::vector<cplx> fft(std::vector<cplx> a);

}  // namespace jamlab::specfeat
