#include "jamlab/fft.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace jamlab::specfeat {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

constexpr double kTwoPi = 2.0 * 3.141592653589793238462643383279502884;

// Forward twiddles e^{-j 2 pi k / n} for k < n/2, cached per size.
const std::vector<cplx>& twiddles(std::size_t n) {
    static std::map<std::size_t, std::vector<cplx>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<cplx> tw(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double ang = -kTwoPi * static_cast<double>(k) / static_cast<double>(n);
        tw[k] = {std::cos(ang), std::sin(ang)};
    }
    return cache.emplace(n, std::move(tw)).first->second;
}

}  // namespace

void fft_inplace(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    if (!is_pow2(n)) throw std::invalid_argument("fft: size must be a power of two");

    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    const std::vector<cplx>& tw = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                cplx w = tw[k * step];
                if (inverse) w = std::conj(w);
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }

    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (cplx& v : a) v *= inv_n;
    }
}

std::vector<cplx> fft(std::vector<cplx> a) {
    fft_inplace(a);
    return a;
}

}  // namespace jamlab::specfeat
