#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace jamlab {

using cplx = std::complex<double>;

// Sampling grid of one coherent observation window.
struct SignalConfig {
    double fs = 20e6;          // sample rate, Hz
    double duration = 1e-3;    // seconds
    std::size_t n_samples = 20000;

    // n_samples = floor(fs * duration). Throws std::invalid_argument on
    // fs <= 0 or fewer than 2 samples.
    static SignalConfig make(double fs, double duration);

    bool operator==(const SignalConfig&) const = default;
};

// Complex baseband sample sequence (dimensionless amplitude).
struct IqSignal {
    std::vector<cplx> data;
    SignalConfig config;
};

// Sample-average power (1/N) * sum |x[n]|^2.
double mean_power(const IqSignal& x);

// True when every sample is finite in both parts.
bool all_finite(const IqSignal& x);

}  // namespace jamlab
