#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "jamlab/mtm.hpp"
#include "jamlab/stft.hpp"

namespace jamlab::specfeat {

// Lossless binary PGM (P5), min -> black, max -> white. Deterministic:
// re-rendering identical input produces a byte-identical file.
void render_matrix_gray(const std::vector<double>& values, std::size_t h, std::size_t w,
                        const std::string& path);

// Lossless binary PPM (P6) with a perceptually-uniform colormap; for human
// viewing only, classifiers consume the scalar field.
void render_spectrogram(const Spectrogram& gram, const std::string& path);

// Log-PSD curve rasterized onto a blank canvas, written as binary PPM.
void render_psd_curve(const PsdEstimate& psd, std::size_t h, std::size_t w,
                      const std::string& path);

}  // namespace jamlab::specfeat
