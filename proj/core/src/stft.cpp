#include "jamlab/stft.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "jamlab/fft.hpp"

namespace jamlab::specfeat {

void StftConfig::validate() const {
    if (n_win < 2) throw std::invalid_argument("stft: window length must be >= 2");
    if (hop < 1 || hop > n_win) throw std::invalid_argument("stft: hop must be in [1, n_win]");
    if (n_fft < n_win) throw std::invalid_argument("stft: n_fft must be >= n_win");
    if (!is_pow2(n_fft)) throw std::invalid_argument("stft: n_fft must be a power of two");
    if (!(gamma > 0.0)) throw std::invalid_argument("stft: gamma must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("stft: epsilon must be > 0");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("stft: output dims must be >= 1");
}

std::vector<double> hann_window(std::size_t n_win, bool periodic) {
    if (n_win < 2) throw std::invalid_argument("hann_window: length must be >= 2");
    const double denom = periodic ? static_cast<double>(n_win)
                                  : static_cast<double>(n_win - 1);
    std::vector<double> w(n_win);
    for (std::size_t n = 0; n < n_win; ++n) {
        const double s = std::sin(3.141592653589793238462643383279502884 *
                                  static_cast<double>(n) / denom);
        w[n] = s * s;
    }
    return w;
}

ComplexMatrix stft(const IqSignal& x, const StftConfig& cfg) {
    cfg.validate();
    const std::size_t n = x.data.size();
    if (n < cfg.n_win) throw std::invalid_argument("stft: signal shorter than one window");
    const std::size_t frames = (n - cfg.n_win) / cfg.hop + 1;
    const std::vector<double> win = hann_window(cfg.n_win, cfg.periodic_window);

    ComplexMatrix out;
    out.rows = frames;
    out.cols = cfg.n_fft;
    out.data.resize(frames * cfg.n_fft);

    std::vector<cplx> frame(cfg.n_fft);
    for (std::size_t m = 0; m < frames; ++m) {
        const std::size_t start = m * cfg.hop;
        for (std::size_t i = 0; i < cfg.n_win; ++i) frame[i] = x.data[start + i] * win[i];
        std::fill(frame.begin() + static_cast<std::ptrdiff_t>(cfg.n_win), frame.end(),
                  cplx{0.0, 0.0});
        fft_inplace(frame);
        std::copy(frame.begin(), frame.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(m * cfg.n_fft));
    }
    return out;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t sh,
                                    std::size_t sw, std::size_t dh, std::size_t dw) {
    if (sh == 0 || sw == 0 || src.size() != sh * sw) {
        throw std::invalid_argument("resize_bilinear: bad source dims");
    }
    std::vector<double> dst(dh * dw);
    const double sy = static_cast<double>(sh) / static_cast<double>(dh);
    const double sx = static_cast<double>(sw) / static_cast<double>(dw);
    for (std::size_t r = 0; r < dh; ++r) {
        // half-pixel center mapping
        double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t c = 0; c < dw; ++c) {
            double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            const double bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            dst[r * dw + c] = top * (1.0 - wy) + bot * wy;
        }
    }
    return dst;
}

Spectrogram log_magnitude_image(const ComplexMatrix& X, const StftConfig& cfg, double fs) {
    if (X.rows == 0 || X.cols == 0) throw std::invalid_argument("log_magnitude_image: empty STFT");
    const std::size_t frames = X.rows;
    const std::size_t bins = X.cols;

    // |X|^gamma and its maximum
    std::vector<double> mag(frames * bins);
    double peak = 0.0;
    for (std::size_t i = 0; i < mag.size(); ++i) {
        const double a = std::abs(X.data[i]);
        mag[i] = a > 0.0 ? std::pow(a, cfg.gamma) : 0.0;
        peak = std::max(peak, mag[i]);
    }
    const double denom = peak + cfg.epsilon;

    // transpose to [frequency, time] with the center shift: row 0 = -fs/2,
    // row bins/2 = DC
    std::vector<double> grid(bins * frames);
    const std::size_t half = bins / 2;
    for (std::size_t r = 0; r < bins; ++r) {
        const std::size_t k = (r + half) % bins;  // DFT bin for this row
        for (std::size_t m = 0; m < frames; ++m) {
            const double v = mag[m * bins + k] / denom;
            const double db = v > 0.0 ? 20.0 * std::log10(v) : kLogFloorDb;
            grid[r * frames + m] = std::max(db, kLogFloorDb);
        }
    }

    Spectrogram out;
    out.height = cfg.out_h;
    out.width = cfg.out_w;
    out.image_db = resize_bilinear(grid, bins, frames, cfg.out_h, cfg.out_w);

    out.freq_hz.resize(cfg.out_h);
    for (std::size_t r = 0; r < cfg.out_h; ++r) {
        const double frac = (static_cast<double>(r) + 0.5) / static_cast<double>(cfg.out_h);
        out.freq_hz[r] = (frac - 0.5) * fs;
    }
    out.time_s.resize(cfg.out_w);
    const double total_t = frames > 0 ? static_cast<double>((frames - 1) * cfg.hop) / fs : 0.0;
    for (std::size_t c = 0; c < cfg.out_w; ++c) {
        const double frac = cfg.out_w > 1
                                ? static_cast<double>(c) / static_cast<double>(cfg.out_w - 1)
                                : 0.0;
        out.time_s[c] = frac * total_t;
    }
    return out;
}

}  // namespace jamlab::specfeat
