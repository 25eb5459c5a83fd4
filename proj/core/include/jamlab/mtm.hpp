#pragma once

#include <cstddef>
#include <vector>

#include "jamlab/dpss.hpp"
#include "jamlab/signal.hpp"

namespace jamlab::specfeat {

// Multitaper PSD estimate on the n_fft-point frequency grid, natural DFT
// bin order (bin k is k*fs/n_fft for k < n_fft/2, else k*fs/n_fft - fs).
struct PsdEstimate {
    std::vector<double> values;      // linear power per bin
    std::vector<double> log_values;  // 10*log10(values), floored at -120 dB
    std::vector<double> freq_hz;
};

// Eigencoefficients Y_p = DFT(x .* v_p) evaluated on the n_fft grid; the
// estimate is their mean squared magnitude. n_fft may be smaller than the
// signal length; evaluation on the coarser grid folds the tapered signal
// modulo n_fft, which is exact for these grid frequencies.
PsdEstimate mtm_psd(const IqSignal& x, const DpssTapers& tapers, std::size_t n_fft);

// Center-shifted log PSD mean-pooled to n_bins and standardized to zero
// mean / unit variance. A constant input returns all zeros.
std::vector<double> psd_feature_vector(const PsdEstimate& psd, std::size_t n_bins);

}  // namespace jamlab::specfeat
