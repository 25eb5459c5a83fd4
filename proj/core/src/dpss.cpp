#include "jamlab/dpss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "jamlab/fft.hpp"
#include "jamlab/rng.hpp"
#include "jamlab/signal.hpp"

namespace jamlab::specfeat {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

struct Tridiag {
    std::vector<double> diag;  // n
    std::vector<double> off;   // n, off[i] couples i-1 and i (off[0] unused)
};

Tridiag slepian_matrix(std::size_t n, double nw) {
    const double w = nw / static_cast<double>(n);
    Tridiag t;
    t.diag.resize(n);
    t.off.resize(n, 0.0);
    const double c = std::cos(2.0 * kPi * w);
    for (std::size_t i = 0; i < n; ++i) {
        const double half = (static_cast<double>(n) - 1.0 - 2.0 * static_cast<double>(i)) / 2.0;
        t.diag[i] = half * half * c;
    }
    for (std::size_t i = 1; i < n; ++i) {
        t.off[i] = static_cast<double>(i) * static_cast<double>(n - i) / 2.0;
    }
    return t;
}

// Sturm count: number of eigenvalues strictly below x.
std::size_t count_below(const Tridiag& t, double x) {
    const std::size_t n = t.diag.size();
    std::size_t cnt = 0;
    double d = t.diag[0] - x;
    if (d < 0.0) ++cnt;
    for (std::size_t i = 1; i < n; ++i) {
        if (d == 0.0) d = 1e-300;
        d = (t.diag[i] - x) - t.off[i] * t.off[i] / d;
        if (d < 0.0) ++cnt;
    }
    return cnt;
}

// Bisection for the eigenvalue with `below` eigenvalues under it
// (the (below+1)-th smallest).
double bisect_eigenvalue(const Tridiag& t, std::size_t below) {
    const std::size_t n = t.diag.size();
    double lo = t.diag[0], hi = t.diag[0];
    for (std::size_t i = 0; i < n; ++i) {
        const double r = std::abs(t.off[i]) + (i + 1 < n ? std::abs(t.off[i + 1]) : 0.0);
        lo = std::min(lo, t.diag[i] - r);
        hi = std::max(hi, t.diag[i] + r);
    }
    const double scale = std::max({std::abs(lo), std::abs(hi), 1.0});
    for (int it = 0; it < 200 && hi - lo > 1e-15 * scale; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (count_below(t, mid) > below) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Solves (T - sigma I) x = rhs by Gaussian elimination with partial
// pivoting over the tridiagonal band (fill-in limited to one extra
// superdiagonal).
std::vector<double> shifted_solve(const Tridiag& t, double sigma, std::vector<double> rhs) {
    const std::size_t n = t.diag.size();
    std::vector<double> a(n), b(n, 0.0), c(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = t.diag[i] - sigma;
        if (i + 1 < n) b[i] = t.off[i + 1];
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double s = t.off[i + 1];  // row i+1 entry under column i
        if (std::abs(a[i]) < std::abs(s)) {
            std::swap(a[i], s);
            std::swap(b[i], a[i + 1]);
            std::swap(c[i], b[i + 1]);
            std::swap(rhs[i], rhs[i + 1]);
        }
        if (a[i] == 0.0) a[i] = 1e-300;
        const double f = s / a[i];
        a[i + 1] -= f * b[i];
        b[i + 1] -= f * c[i];
        rhs[i + 1] -= f * rhs[i];
    }
    std::vector<double> x(n);
    for (std::size_t ri = n; ri-- > 0;) {
        double v = rhs[ri];
        if (ri + 1 < n) v -= b[ri] * x[ri + 1];
        if (ri + 2 < n) v -= c[ri] * x[ri + 2];
        if (a[ri] == 0.0) a[ri] = 1e-300;
        x[ri] = v / a[ri];
    }
    return x;
}

void subtract_projections(std::vector<double>& v,
                          const std::vector<std::vector<double>>& basis) {
    for (const auto& u : basis) {
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += u[i] * v[i];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * u[i];
    }
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// In-band concentration over [-W, W] by exact quadrature of |V(f)|^2:
// lambda = 2W r[0] + 2 sum_l r[l] sin(2 pi W l)/(pi l), with the taper
// autocorrelation r computed through a zero-padded FFT.
double concentration(const std::vector<double>& v, double w) {
    const std::size_t n = v.size();
    std::size_t m = 1;
    while (m < 2 * n) m <<= 1;
    std::vector<cplx> buf(m, cplx{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) buf[i] = cplx{v[i], 0.0};
    fft_inplace(buf);
    for (cplx& z : buf) z = cplx{std::norm(z), 0.0};
    fft_inplace(buf, true);
    double lambda = 2.0 * w * buf[0].real();
    for (std::size_t l = 1; l < n; ++l) {
        lambda += 2.0 * buf[l].real() * std::sin(2.0 * kPi * w * l) / (kPi * static_cast<double>(l));
    }
    return lambda;
}

}  // namespace

DpssTapers dpss_tapers(std::size_t n, double nw, std::size_t k) {
    if (n < 2) throw std::invalid_argument("dpss: n must be >= 2");
    if (!(nw > 0.0) || nw >= static_cast<double>(n) / 2.0) {
        throw std::invalid_argument("dpss: require 0 < nw < n/2");
    }
    if (k < 1 || k > n) throw std::invalid_argument("dpss: taper count out of range");

    const Tridiag t = slepian_matrix(n, nw);
    const double w = nw / static_cast<double>(n);

    DpssTapers out;
    out.n = n;
    out.nw = nw;
    out.k = k;
    out.tapers.reserve(k);
    out.eigenvalues.reserve(k);

    Rng rng(derive_stream(0x64707373u, n, static_cast<std::uint64_t>(nw * 1024.0), k));
    for (std::size_t p = 0; p < k; ++p) {
        const double lam = bisect_eigenvalue(t, n - 1 - p);
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        subtract_projections(v, out.tapers);
        double nv = norm2(v);
        if (nv == 0.0) nv = 1.0;
        for (double& x : v) x /= nv;

        bool converged = false;
        for (int it = 0; it < 50 && !converged; ++it) {
            std::vector<double> next = shifted_solve(t, lam, v);
            subtract_projections(next, out.tapers);
            const double nn = norm2(next);
            if (nn == 0.0 || !std::isfinite(nn)) {
                for (double& x : next) x = rng.uniform(-1.0, 1.0);
            } else {
                for (double& x : next) x /= nn;
                double overlap = 0.0;
                for (std::size_t i = 0; i < n; ++i) overlap += next[i] * v[i];
                converged = std::abs(std::abs(overlap) - 1.0) < 1e-13;
            }
            v = std::move(next);
        }
        if (!converged) {
            std::ostringstream msg;
            msg << "dpss: inverse iteration did not converge (n=" << n << ", nw=" << nw
                << ", taper " << p << ")";
            throw std::runtime_error(msg.str());
        }

        subtract_projections(v, out.tapers);
        const double nv2 = norm2(v);
        if (nv2 == 0.0) throw std::runtime_error("dpss: degenerate eigenvector");
        for (double& x : v) x /= nv2;

        // sign convention
        double s = 0.0;
        if (p % 2 == 0) {
            for (double x : v) s += x;
        } else {
            for (std::size_t i = 0; i < n / 2; ++i) s += v[i];
        }
        if (s < 0.0) {
            for (double& x : v) x = -x;
        }

        out.eigenvalues.push_back(concentration(v, w));
        out.tapers.push_back(std::move(v));
    }
    return out;
}

std::shared_ptr<const DpssTapers> dpss_tapers_cached(std::size_t n, double nw, std::size_t k) {
    using Key = std::tuple<std::size_t, double, std::size_t>;
    static std::map<Key, std::shared_ptr<const DpssTapers>> cache;
    static std::mutex mu;
    const Key key{n, nw, k};
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    auto computed = std::make_shared<const DpssTapers>(dpss_tapers(n, nw, k));
    std::lock_guard<std::mutex> lock(mu);
    auto [it, inserted] = cache.emplace(key, std::move(computed));
    return it->second;
}

}  // namespace jamlab::specfeat
