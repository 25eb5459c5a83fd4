#include "jamlab/mtm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "jamlab/fft.hpp"
#include "jamlab/stft.hpp"

namespace jamlab::specfeat {

PsdEstimate mtm_psd(const IqSignal& x, const DpssTapers& tapers, std::size_t n_fft) {
    const std::size_t n = x.data.size();
    if (tapers.n != n) throw std::invalid_argument("mtm_psd: taper length != signal length");
    if (!is_pow2(n_fft)) throw std::invalid_argument("mtm_psd: n_fft must be a power of two");

    PsdEstimate out;
    out.values.assign(n_fft, 0.0);

    std::vector<cplx> buf(n_fft);
    for (std::size_t p = 0; p < tapers.k; ++p) {
        const std::vector<double>& v = tapers.tapers[p];
        std::fill(buf.begin(), buf.end(), cplx{0.0, 0.0});
        // fold x.*v into n_fft bins; exact on the k/n_fft frequency grid
        for (std::size_t i = 0; i < n; ++i) buf[i % n_fft] += x.data[i] * v[i];
        fft_inplace(buf);
        for (std::size_t k = 0; k < n_fft; ++k) out.values[k] += std::norm(buf[k]);
    }
    const double inv_k = 1.0 / static_cast<double>(tapers.k);
    for (double& v : out.values) v *= inv_k;

    out.log_values.resize(n_fft);
    for (std::size_t k = 0; k < n_fft; ++k) {
        const double db = out.values[k] > 0.0 ? 10.0 * std::log10(out.values[k]) : kLogFloorDb;
        out.log_values[k] = std::max(db, kLogFloorDb);
    }

    out.freq_hz.resize(n_fft);
    const double fs = x.config.fs;
    for (std::size_t k = 0; k < n_fft; ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(n_fft);
        out.freq_hz[k] = k < n_fft / 2 ? f : f - fs;
    }
    return out;
}

std::vector<double> psd_feature_vector(const PsdEstimate& psd, std::size_t n_bins) {
    const std::size_t n = psd.log_values.size();
    if (n_bins < 1 || n_bins > n) {
        throw std::invalid_argument("psd_feature_vector: n_bins must be in [1, n_fft]");
    }
    // center shift so row 0 is -fs/2
    std::vector<double> shifted(n);
    const std::size_t half = n / 2;
    for (std::size_t r = 0; r < n; ++r) shifted[r] = psd.log_values[(r + half) % n];

    // mean-pool into equal chunks
    std::vector<double> pooled(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        const std::size_t lo = b * n / n_bins;
        const std::size_t hi = (b + 1) * n / n_bins;
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += shifted[i];
        pooled[b] = acc / static_cast<double>(hi - lo);
    }

    double mean = 0.0;
    for (double v : pooled) mean += v;
    mean /= static_cast<double>(n_bins);
    double var = 0.0;
    for (double v : pooled) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n_bins);
    if (var < 1e-24) return std::vector<double>(n_bins, 0.0);
    const double inv_sd = 1.0 / std::sqrt(var);
    for (double& v : pooled) v = (v - mean) * inv_sd;
    return pooled;
}

}  // namespace jamlab::specfeat
