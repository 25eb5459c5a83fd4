#include "jamlab/signal.hpp"

#include <cmath>
#include <stdexcept>

namespace jamlab {

SignalConfig SignalConfig::make(double fs, double duration) {
    if (!(fs > 0.0)) throw std::invalid_argument("SignalConfig: fs must be > 0");
    const double n = std::floor(fs * duration);
    if (!(n >= 2.0)) throw std::invalid_argument("SignalConfig: need at least 2 samples");
    return SignalConfig{fs, duration, static_cast<std::size_t>(n)};
}

double mean_power(const IqSignal& x) {
    if (x.data.empty()) return 0.0;
    double acc = 0.0;
    for (const cplx& v : x.data) acc += std::norm(v);
    return acc / static_cast<double>(x.data.size());
}

bool all_finite(const IqSignal& x) {
    for (const cplx& v : x.data) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    }
    return true;
}

}  // namespace jamlab
