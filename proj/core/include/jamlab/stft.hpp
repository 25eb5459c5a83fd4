#pragma once

#include <cstddef>
#include <vector>

#include "jamlab/signal.hpp"

namespace jamlab::specfeat {

struct StftConfig {
    std::size_t n_win = 128;
    std::size_t n_fft = 4096;   // power of two, >= n_win
    std::size_t hop = 11;
    double gamma = 0.9;         // magnitude compression exponent
    double epsilon = 1e-12;     // normalization guard
    std::size_t out_h = 224;
    std::size_t out_w = 224;
    bool periodic_window = true;

    void validate() const;  // throws std::invalid_argument
};

// w[n] = sin^2(pi n / (n_win - 1)) for the symmetric form, denominator
// n_win for the periodic variant.
std::vector<double> hann_window(std::size_t n_win, bool periodic = true);

struct ComplexMatrix {
    std::size_t rows = 0;  // frames
    std::size_t cols = 0;  // frequency bins
    std::vector<cplx> data;

    cplx& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const cplx& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// Frames x[mR .. mR+n_win), windows, zero-pads to n_fft and transforms.
// Frame count M = floor((N - n_win)/R) + 1. Bin k maps to k*fs/n_fft for
// k < n_fft/2, else k*fs/n_fft - fs.
ComplexMatrix stft(const IqSignal& x, const StftConfig& cfg);

inline constexpr double kLogFloorDb = -120.0;

struct Spectrogram {
    std::size_t height = 0;  // frequency rows, low frequency first, DC mid-row
    std::size_t width = 0;   // time columns
    std::vector<double> image_db;  // max-normalized, <= 0, floored at kLogFloorDb
    std::vector<double> freq_hz;   // per row
    std::vector<double> time_s;    // per column
};

// I = 20 log10(|X|^gamma / (max|X|^gamma + eps)), center-shifted so DC is
// the middle row, bilinearly resized to out_h x out_w.
Spectrogram log_magnitude_image(const ComplexMatrix& X, const StftConfig& cfg, double fs);

// Bilinear resampling with half-pixel centers; src is row-major sh x sw.
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t sh,
                                    std::size_t sw, std::size_t dh, std::size_t dw);

}  // namespace jamlab::specfeat
