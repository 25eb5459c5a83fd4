#include "jamlab/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace jamlab::specfeat {

namespace {

void write_file(const std::string& path, const std::string& header,
                const std::vector<std::uint8_t>& pixels) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("render: cannot open " + path);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!f) throw std::runtime_error("render: write failed for " + path);
}

// Viridis anchor points, interpolated linearly in RGB.
constexpr std::array<std::array<double, 3>, 9> kViridis = {{
    {0.267004, 0.004874, 0.329415},
    {0.282623, 0.140926, 0.457517},
    {0.253935, 0.265254, 0.529983},
    {0.206756, 0.371758, 0.553117},
    {0.163625, 0.471133, 0.558148},
    {0.127568, 0.566949, 0.550556},
    {0.134692, 0.658636, 0.517649},
    {0.477504, 0.821444, 0.318195},
    {0.993248, 0.906157, 0.143936},
}};

std::array<std::uint8_t, 3> viridis(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * (kViridis.size() - 1);
    const auto i0 = static_cast<std::size_t>(pos);
    const std::size_t i1 = std::min(i0 + 1, kViridis.size() - 1);
    const double f = pos - static_cast<double>(i0);
    std::array<std::uint8_t, 3> rgb{};
    for (std::size_t c = 0; c < 3; ++c) {
        const double v = kViridis[i0][c] * (1.0 - f) + kViridis[i1][c] * f;
        rgb[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return rgb;
}

std::pair<double, double> min_max(const std::vector<double>& values) {
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

}  // namespace

void render_matrix_gray(const std::vector<double>& values, std::size_t h, std::size_t w,
                        const std::string& path) {
    if (h == 0 || w == 0 || values.size() != h * w) {
        throw std::invalid_argument("render_matrix_gray: bad dims");
    }
    const auto [lo, hi] = min_max(values);
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<std::uint8_t> pixels(h * w);
    for (std::size_t i = 0; i < values.size(); ++i) {
        pixels[i] = static_cast<std::uint8_t>(std::lround((values[i] - lo) / span * 255.0));
    }
    write_file(path, "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", pixels);
}

void render_spectrogram(const Spectrogram& gram, const std::string& path) {
    if (gram.height == 0 || gram.width == 0 ||
        gram.image_db.size() != gram.height * gram.width) {
        throw std::invalid_argument("render_spectrogram: bad dims");
    }
    const auto [lo, hi] = min_max(gram.image_db);
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<std::uint8_t> pixels(gram.height * gram.width * 3);
    for (std::size_t r = 0; r < gram.height; ++r) {
        // flip vertically so high frequency renders at the top
        const std::size_t src_row = gram.height - 1 - r;
        for (std::size_t c = 0; c < gram.width; ++c) {
            const double t = (gram.image_db[src_row * gram.width + c] - lo) / span;
            const auto rgb = viridis(t);
            const std::size_t o = (r * gram.width + c) * 3;
            pixels[o] = rgb[0];
            pixels[o + 1] = rgb[1];
            pixels[o + 2] = rgb[2];
        }
    }
    write_file(path,
               "P6\n" + std::to_string(gram.width) + " " + std::to_string(gram.height) + "\n255\n",
               pixels);
}

void render_psd_curve(const PsdEstimate& psd, std::size_t h, std::size_t w,
                      const std::string& path) {
    if (h < 2 || w < 2) throw std::invalid_argument("render_psd_curve: canvas too small");
    const std::size_t n = psd.log_values.size();
    if (n == 0) throw std::invalid_argument("render_psd_curve: empty PSD");

    // center-shifted curve, one value per column
    std::vector<double> curve(w);
    const std::size_t half = n / 2;
    for (std::size_t c = 0; c < w; ++c) {
        const std::size_t i = c * n / w;
        curve[c] = psd.log_values[(i + half) % n];
    }
    const auto [lo, hi] = min_max(curve);
    const double span = hi > lo ? hi - lo : 1.0;

    std::vector<std::uint8_t> pixels(h * w * 3, 255);  // white canvas
    auto row_of = [&](double v) {
        const double t = (v - lo) / span;  // 0 bottom .. 1 top
        const auto r = static_cast<std::size_t>(std::lround((1.0 - t) * static_cast<double>(h - 1)));
        return std::min(r, h - 1);
    };
    std::size_t prev = row_of(curve[0]);
    for (std::size_t c = 0; c < w; ++c) {
        const std::size_t cur = row_of(curve[c]);
        const auto [a, b] = std::minmax(prev, cur);
        for (std::size_t r = a; r <= b; ++r) {
            const std::size_t o = (r * w + c) * 3;
            pixels[o] = 0;
            pixels[o + 1] = 0;
            pixels[o + 2] = 139;  // dark blue trace
        }
        prev = cur;
    }
    write_file(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", pixels);
}

}  // namespace jamlab::specfeat
