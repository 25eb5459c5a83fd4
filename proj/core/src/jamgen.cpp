#include "jamlab/jamgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace jamlab::jamgen {

namespace {

constexpr double kTwoPi = 2.0 * 3.141592653589793238462643383279502884;

double nyquist(const SignalConfig& cfg) { return cfg.fs / 2.0; }

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = 3.141592653589793238462643383279502884 * x;
    return std::sin(px) / px;
}

// Hann-windowed-sinc low-pass, 128 taps (order 127), cutoff in cycles/sample.
// A cutoff at or above Nyquist degenerates to the identity tap.
std::vector<double> lowpass_taps(double cutoff_norm) {
    if (cutoff_norm >= 0.5) return {1.0};
    constexpr int kOrder = 127;
    std::vector<double> h(kOrder + 1);
    const double center = kOrder / 2.0;
    for (int i = 0; i <= kOrder; ++i) {
        const double w = std::sin(3.141592653589793238462643383279502884 * i / kOrder);
        h[i] = 2.0 * cutoff_norm * sinc(2.0 * cutoff_norm * (i - center)) * w * w;
    }
    return h;
}

// "Same"-length convolution: output aligned to the filter's group delay,
// edge samples retained with the partial sums they see.
std::vector<cplx> convolve_same(const std::vector<cplx>& v, const std::vector<double>& h) {
    const std::size_t n = v.size();
    const std::size_t delay = (h.size() - 1) / 2;
    std::vector<cplx> y(n, cplx{0.0, 0.0});
    for (std::size_t m = 0; m < n; ++m) {
        cplx acc{0.0, 0.0};
        const std::size_t shifted = m + delay;
        for (std::size_t i = 0; i < h.size(); ++i) {
            if (shifted < i) break;
            const std::size_t src = shifted - i;
            if (src >= n) continue;
            acc += h[i] * v[src];
        }
        y[m] = acc;
    }
    return y;
}

struct ClassEntry {
    std::string name;
    std::vector<PrimitiveKind> kinds;
};

using K = PrimitiveKind;

const std::array<ClassEntry, kNumClasses>& class_table() {
    static const std::array<ClassEntry, kNumClasses> table = {{
        {"STJ", {K::Stj}},
        {"MTJ", {K::Mtj}},
        {"LFM", {K::Lfm}},
        {"Pulse", {K::Pulse}},
        {"PBNJ", {K::Pbnj}},
        {"STJ+LFM", {K::Stj, K::Lfm}},
        {"STJ+Pulse", {K::Stj, K::Pulse}},
        {"STJ+PBNJ", {K::Stj, K::Pbnj}},
        {"MTJ+LFM", {K::Mtj, K::Lfm}},
        {"MTJ+Pulse", {K::Mtj, K::Pulse}},
        {"MTJ+PBNJ", {K::Mtj, K::Pbnj}},
        {"LFM+Pulse", {K::Lfm, K::Pulse}},
        {"LFM+PBNJ", {K::Lfm, K::Pbnj}},
        {"Pulse+PBNJ", {K::Pulse, K::Pbnj}},
        {"STJ+LFM+Pulse", {K::Stj, K::Lfm, K::Pulse}},
        {"STJ+LFM+PBNJ", {K::Stj, K::Lfm, K::Pbnj}},
        {"STJ+Pulse+PBNJ", {K::Stj, K::Pulse, K::Pbnj}},
        {"MTJ+LFM+Pulse", {K::Mtj, K::Lfm, K::Pulse}},
        {"MTJ+LFM+PBNJ", {K::Mtj, K::Lfm, K::Pbnj}},
        {"MTJ+Pulse+PBNJ", {K::Mtj, K::Pulse, K::Pbnj}},
        {"LFM+Pulse+PBNJ", {K::Lfm, K::Pulse, K::Pbnj}},
    }};
    return table;
}

const ClassEntry& class_entry(int class_id) {
    require(class_id >= 1 && class_id <= kNumClasses, "class_id must be in 1..21");
    return class_table()[static_cast<std::size_t>(class_id - 1)];
}

}  // namespace

const char* kind_name(PrimitiveKind k) {
    switch (k) {
        case K::Stj: return "STJ";
        case K::Mtj: return "MTJ";
        case K::Lfm: return "LFM";
        case K::Pulse: return "Pulse";
        case K::Pbnj: return "PBNJ";
    }
    return "?";
}

PrimitiveKind kind_of(const PrimitiveParams& p) {
    return static_cast<PrimitiveKind>(p.index());
}

const std::vector<PrimitiveKind>& class_components(int class_id) {
    return class_entry(class_id).kinds;
}

const std::string& class_name(int class_id) { return class_entry(class_id).name; }

int class_tier(int class_id) {
    return static_cast<int>(class_entry(class_id).kinds.size());
}

int class_id_by_name(const std::string& name) {
    const auto& table = class_table();
    for (int i = 0; i < kNumClasses; ++i) {
        if (table[static_cast<std::size_t>(i)].name == name) return i + 1;
    }
    return 0;
}

IqSignal synth_stj(const StjParams& p, const SignalConfig& cfg) {
    require(std::abs(p.f_c) < nyquist(cfg), "STJ carrier outside Nyquist range");
    IqSignal out{std::vector<cplx>(cfg.n_samples), cfg};
    const double step = kTwoPi * p.f_c / cfg.fs;
    for (std::size_t n = 0; n < cfg.n_samples; ++n) {
        const double phase = step * static_cast<double>(n) + p.phi;
        out.data[n] = {std::cos(phase), std::sin(phase)};
    }
    return out;
}

IqSignal synth_mtj(const MtjParams& p, const SignalConfig& cfg) {
    require(!p.tones.empty(), "MTJ needs at least one tone");
    for (std::size_t a = 0; a < p.tones.size(); ++a) {
        require(std::abs(p.tones[a].f_k) < nyquist(cfg), "MTJ tone outside Nyquist range");
        for (std::size_t b = a + 1; b < p.tones.size(); ++b) {
            require(p.tones[a].f_k != p.tones[b].f_k, "MTJ tone frequencies must be distinct");
        }
    }
    IqSignal out{std::vector<cplx>(cfg.n_samples, cplx{0.0, 0.0}), cfg};
    for (const MtjTone& tone : p.tones) {
        const double step = kTwoPi * tone.f_k / cfg.fs;
        for (std::size_t n = 0; n < cfg.n_samples; ++n) {
            const double phase = step * static_cast<double>(n) + tone.phi_k;
            out.data[n] += cplx{std::cos(phase), std::sin(phase)};
        }
    }
    return out;
}

IqSignal synth_lfm(const LfmParams& p, const SignalConfig& cfg) {
    IqSignal out{std::vector<cplx>(cfg.n_samples), cfg};
    // phase(t) = 2*pi*(f_start*t + mu*t^2/2); instantaneous frequency wraps
    // modulo fs are permitted.
    for (std::size_t n = 0; n < cfg.n_samples; ++n) {
        const double t = static_cast<double>(n) / cfg.fs;
        const double phase = kTwoPi * (p.f_start * t + 0.5 * p.mu * t * t);
        out.data[n] = {std::cos(phase), std::sin(phase)};
    }
    return out;
}

IqSignal synth_pulse(const PulseParams& p, const SignalConfig& cfg) {
    require(std::abs(p.f_c) < nyquist(cfg), "pulse carrier outside Nyquist range");
    const auto n_pri = static_cast<std::size_t>(std::floor(p.pri * cfg.fs));
    const auto n_tau = static_cast<std::size_t>(std::floor(p.tau * cfg.fs));
    require(n_pri >= 1, "pulse PRI shorter than one sample");
    require(n_tau >= 1, "pulse width shorter than one sample");
    require(n_tau < n_pri, "pulse width must be shorter than the PRI");
    IqSignal out{std::vector<cplx>(cfg.n_samples), cfg};
    const double step = kTwoPi * p.f_c / cfg.fs;
    for (std::size_t n = 0; n < cfg.n_samples; ++n) {
        if (n % n_pri < n_tau) {
            const double phase = step * static_cast<double>(n);
            out.data[n] = {std::cos(phase), std::sin(phase)};
        } else {
            out.data[n] = {0.0, 0.0};
        }
    }
    return out;
}

IqSignal synth_pbnj(const PbnjParams& p, const SignalConfig& cfg, Rng& rng) {
    require(p.b_jam > 0.0 && p.b_jam <= cfg.fs, "PBNJ bandwidth must be in (0, fs]");
    require(std::abs(p.f_c) + p.b_jam / 2.0 <= nyquist(cfg) * (1.0 + 1e-12),
            "PBNJ band must fit inside Nyquist");
    std::vector<cplx> noise(cfg.n_samples);
    for (cplx& v : noise) v = rng.cnormal(1.0);
    const std::vector<double> taps = lowpass_taps((p.b_jam / 2.0) / cfg.fs);
    std::vector<cplx> shaped = taps.size() == 1 ? std::move(noise) : convolve_same(noise, taps);
    IqSignal out{std::move(shaped), cfg};
    const double step = kTwoPi * p.f_c / cfg.fs;
    for (std::size_t n = 0; n < cfg.n_samples; ++n) {
        const double phase = step * static_cast<double>(n);
        out.data[n] *= cplx{std::cos(phase), std::sin(phase)};
    }
    return normalize_power(out);
}

IqSignal synth_primitive(const PrimitiveParams& p, const SignalConfig& cfg, Rng& rng) {
    return std::visit(
        [&](const auto& params) -> IqSignal {
            using T = std::decay_t<decltype(params)>;
            if constexpr (std::is_same_v<T, StjParams>) return synth_stj(params, cfg);
            else if constexpr (std::is_same_v<T, MtjParams>) return synth_mtj(params, cfg);
            else if constexpr (std::is_same_v<T, LfmParams>) return synth_lfm(params, cfg);
            else if constexpr (std::is_same_v<T, PulseParams>) return synth_pulse(params, cfg);
            else return synth_pbnj(params, cfg, rng);
        },
        p);
}

IqSignal normalize_power(const IqSignal& x) {
    const double p = mean_power(x);
    if (!(p > 0.0)) throw std::invalid_argument("normalize_power: signal has zero power");
    const double s = 1.0 / std::sqrt(p);
    IqSignal out = x;
    for (cplx& v : out.data) v *= s;
    return out;
}

IqSignal compose_compound(const std::vector<std::pair<IqSignal, double>>& components) {
    require(!components.empty(), "compose_compound: no components");
    const SignalConfig& cfg = components.front().first.config;
    for (const auto& [sig, weight] : components) {
        if (sig.config != cfg || sig.data.size() != components.front().first.data.size()) {
            throw std::invalid_argument("compose_compound: mismatched signal configs");
        }
        require(weight >= 0.0, "compose_compound: negative power weight");
    }
    IqSignal out{std::vector<cplx>(components.front().first.data.size(), cplx{0.0, 0.0}), cfg};
    for (const auto& [sig, weight] : components) {
        const double a = std::sqrt(weight);
        for (std::size_t n = 0; n < out.data.size(); ++n) out.data[n] += a * sig.data[n];
    }
    return out;
}

IqSignal apply_jnr(const IqSignal& j, double jnr_db, double sigma_n_sq) {
    require(sigma_n_sq > 0.0, "apply_jnr: noise variance must be > 0");
    const double p = mean_power(j);
    if (!(p > 0.0)) throw std::invalid_argument("apply_jnr: zero-power jamming signal");
    const double target = std::pow(10.0, jnr_db / 10.0) * sigma_n_sq;
    const double s = std::sqrt(target / p);
    IqSignal out = j;
    for (cplx& v : out.data) v *= s;
    return out;
}

IqSignal add_awgn(const IqSignal& x, const ChannelConfig& ch, Rng& rng) {
    require(ch.noise_variance > 0.0, "add_awgn: noise variance must be > 0");
    IqSignal out = x;
    for (cplx& v : out.data) v += rng.cnormal(ch.noise_variance);
    return out;
}

namespace {

PrimitiveParams sample_primitive(PrimitiveKind kind, double fs, Rng& rng) {
    using namespace ranges;
    switch (kind) {
        case K::Stj:
            return StjParams{rng.uniform(-kToneFreqMaxHz, kToneFreqMaxHz),
                             rng.uniform(0.0, kTwoPi)};
        case K::Mtj: {
            const auto k = static_cast<int>(rng.uniform_int(kMtjTonesMin, kMtjTonesMax));
            const double spacing = rng.uniform(kMtjSpacingMinHz, kMtjSpacingMaxHz);
            const double span = spacing * (k - 1);
            const double f0 = rng.uniform(-kToneFreqMaxHz, kToneFreqMaxHz - span);
            MtjParams p;
            p.tones.reserve(static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) {
                p.tones.push_back({f0 + spacing * i, rng.uniform(0.0, kTwoPi)});
            }
            return p;
        }
        case K::Lfm: {
            const bool up = rng.uniform01() < 0.5;
            const double mu = (up ? 1.0 : -1.0) * kLfmSweepHz / kLfmSweepSeconds;
            // start frequency chosen so the full sweep stays inside the bound
            const double f_start = up ? rng.uniform(-kLfmFreqBoundHz, kLfmFreqBoundHz - kLfmSweepHz)
                                      : rng.uniform(-kLfmFreqBoundHz + kLfmSweepHz, kLfmFreqBoundHz);
            return LfmParams{f_start, mu};
        }
        case K::Pulse:
            return PulseParams{rng.uniform(-kToneFreqMaxHz, kToneFreqMaxHz),
                               kPulsePriSeconds, kPulseDuty * kPulsePriSeconds};
        case K::Pbnj: {
            const double b = rng.uniform(kPbnjBandMinFrac * fs, kPbnjBandMaxFrac * fs);
            const double carrier_bound = fs / 2.0 - b / 2.0;
            return PbnjParams{rng.uniform(-carrier_bound, carrier_bound), b};
        }
    }
    throw std::logic_error("sample_primitive: unknown kind");
}

// Power weights whose pairwise ratios all lie within the dB bound, summing
// to 1. Offsets are drawn uniformly in dB relative to the first component;
// draws violating the remaining pairwise bound are rejected.
std::vector<double> sample_weights(std::size_t count, Rng& rng) {
    using ranges::kPowerRatioBoundDb;
    if (count == 1) return {1.0};
    std::vector<double> offsets_db(count, 0.0);
    for (;;) {
        for (std::size_t i = 1; i < count; ++i) {
            offsets_db[i] = rng.uniform(-kPowerRatioBoundDb, kPowerRatioBoundDb);
        }
        bool ok = true;
        for (std::size_t a = 1; a < count && ok; ++a) {
            for (std::size_t b = a + 1; b < count && ok; ++b) {
                ok = std::abs(offsets_db[a] - offsets_db[b]) <= kPowerRatioBoundDb;
            }
        }
        if (ok) break;
    }
    std::vector<double> w(count);
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        w[i] = std::pow(10.0, offsets_db[i] / 10.0);
        total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
}

}  // namespace

JammingSpec sample_spec(int class_id, double jnr_db, Rng& rng) {
    const auto& kinds = class_components(class_id);
    const double fs = 20e6;  // corpus sample rate the parameter ranges assume
    JammingSpec spec;
    spec.class_id = class_id;
    spec.jnr_db = jnr_db;
    const std::vector<double> weights = sample_weights(kinds.size(), rng);
    spec.components.reserve(kinds.size());
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        spec.components.push_back({sample_primitive(kinds[i], fs, rng), weights[i]});
    }
    return spec;
}

IqSignal synth_spec(const JammingSpec& spec, const SignalConfig& cfg, Rng& rng,
                    double sigma_n_sq) {
    require(!spec.components.empty(), "synth_spec: spec has no components");
    std::vector<std::pair<IqSignal, double>> parts;
    parts.reserve(spec.components.size());
    for (const Component& c : spec.components) {
        parts.emplace_back(normalize_power(synth_primitive(c.params, cfg, rng)), c.power_weight);
    }
    return apply_jnr(compose_compound(parts), spec.jnr_db, sigma_n_sq);
}

IqSignal synth_received(const JammingSpec& spec, const SignalConfig& cfg,
                        const ChannelConfig& ch, Rng& rng) {
    const IqSignal j = synth_spec(spec, cfg, rng, ch.noise_variance);
    return add_awgn(j, ch, rng);
}

}  // namespace jamlab::jamgen
