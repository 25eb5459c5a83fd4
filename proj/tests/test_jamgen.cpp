#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>

#include "jamlab/jamgen.hpp"
#include "jamlab/mtm.hpp"

using namespace jamlab;
using namespace jamlab::jamgen;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

SignalConfig cfg20(std::size_t n) {
    return SignalConfig{20e6, static_cast<double>(n) / 20e6, n};
}

bool bit_identical(const IqSignal& a, const IqSignal& b) {
    if (a.data.size() != b.data.size()) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(cplx)) == 0;
}

}  // namespace

TEST_CASE("class taxonomy covers 5 + 9 + 7") {
    int singles = 0, duals = 0, triples = 0;
    for (int c = 1; c <= kNumClasses; ++c) {
        const int t = class_tier(c);
        singles += t == 1;
        duals += t == 2;
        triples += t == 3;
        const auto& kinds = class_components(c);
        for (std::size_t i = 0; i < kinds.size(); ++i) {
            for (std::size_t j = i + 1; j < kinds.size(); ++j) CHECK(kinds[i] != kinds[j]);
        }
        CHECK(class_id_by_name(class_name(c)) == c);
    }
    CHECK(singles == 5);
    CHECK(duals == 9);
    CHECK(triples == 7);
}

TEST_CASE("stj: DC tone is all ones") {
    const auto x = synth_stj({0.0, 0.0}, cfg20(8));
    REQUIRE(x.data.size() == 8);
    for (const auto& v : x.data) {
        CHECK(v.real() == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(v.imag() == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("stj: quarter-rate tone cycles 1, j, -1, -j") {
    const auto x = synth_stj({5e6, 0.0}, cfg20(8));
    const cplx expect[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    for (std::size_t n = 0; n < 8; ++n) {
        CHECK(std::abs(x.data[n] - expect[n % 4]) < 1e-12);
    }
}

TEST_CASE("stj: constant modulus and exact unit power at the band edge") {
    const auto x = synth_stj({9.5e6, kPi / 3.0}, cfg20(20000));
    for (const auto& v : x.data) CHECK(std::abs(std::norm(v) - 1.0) < 1e-14);
    CHECK(std::abs(mean_power(x) - 1.0) < 1e-12);
}

TEST_CASE("stj: carrier outside Nyquist rejected") {
    CHECK_THROWS_AS(synth_stj({10.1e6, 0.0}, cfg20(16)), std::invalid_argument);
}

TEST_CASE("mtj: single tone degenerates to stj") {
    const auto a = synth_mtj({{{3e6, 0.7}}}, cfg20(256));
    const auto b = synth_stj({3e6, 0.7}, cfg20(256));
    for (std::size_t n = 0; n < 256; ++n) CHECK(std::abs(a.data[n] - b.data[n]) < 1e-15);
}

TEST_CASE("mtj: conjugate pair gives a purely real cosine") {
    const auto x = synth_mtj({{{1e6, 0.0}, {-1e6, 0.0}}}, cfg20(1000));
    for (std::size_t n = 0; n < x.data.size(); ++n) {
        CHECK(std::abs(x.data[n].imag()) < 1e-12);
        const double expect = 2.0 * std::cos(2.0 * kPi * 1e6 * static_cast<double>(n) / 20e6);
        CHECK(x.data[n].real() == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("mtj: six tones average to power ~6") {
    MtjParams p;
    for (int k = 0; k < 6; ++k) p.tones.push_back({-5e6 + 2e6 * k, 0.3 * k});
    const auto x = synth_mtj(p, cfg20(20000));
    // cross terms average toward zero over the window
    CHECK(mean_power(x) == doctest::Approx(6.0).epsilon(0.02));
}

TEST_CASE("mtj: duplicate tone frequencies rejected") {
    CHECK_THROWS_AS(synth_mtj({{{1e6, 0.0}, {1e6, 1.0}}}, cfg20(16)), std::invalid_argument);
}

TEST_CASE("lfm: zero rate degenerates to stj") {
    const auto a = synth_lfm({2e6, 0.0}, cfg20(512));
    const auto b = synth_stj({2e6, 0.0}, cfg20(512));
    for (std::size_t n = 0; n < 512; ++n) CHECK(std::abs(a.data[n] - b.data[n]) < 1e-12);
}

TEST_CASE("lfm: instantaneous frequency is affine with slope mu/fs^2") {
    // finite-difference phase oracle on the standard sweep
    const SignalConfig cfg = cfg20(20000);
    const double mu = 10e6 / 1e-3;
    const auto x = synth_lfm({-5e6, mu}, cfg);
    for (const auto& v : x.data) CHECK(std::abs(std::norm(v) - 1.0) < 1e-12);

    std::vector<double> inst(x.data.size() - 1);  // cycles/sample
    for (std::size_t n = 0; n + 1 < x.data.size(); ++n) {
        inst[n] = std::arg(x.data[n + 1] * std::conj(x.data[n])) / (2.0 * kPi);
    }
    // least-squares slope of inst[n] vs n
    const double m = static_cast<double>(inst.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t n = 0; n < inst.size(); ++n) {
        sx += static_cast<double>(n);
        sy += inst[n];
        sxx += static_cast<double>(n) * static_cast<double>(n);
        sxy += static_cast<double>(n) * inst[n];
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    const double expect = mu / (20e6 * 20e6);
    CHECK(std::abs(slope - expect) / expect < 1e-6);
}

TEST_CASE("lfm: sweep through zero at the predicted instant") {
    const double mu = 1e10;
    const auto x = synth_lfm({-5e6, mu}, cfg20(20000));
    // f(t) = f_start + mu t = 0 at t = 0.5 ms = sample 10000
    const std::size_t n0 = 10000;
    const double f_inst =
        std::arg(x.data[n0] * std::conj(x.data[n0 - 1])) / (2.0 * kPi) * 20e6;
    CHECK(std::abs(f_inst) < 600.0);  // half a sample of sweep is 250 Hz
}

TEST_CASE("pulse: gating definition and counts") {
    const auto x = synth_pulse({0.0, 10.0 / 20e6, 3.0 / 20e6}, cfg20(20));
    std::vector<std::size_t> nonzero;
    for (std::size_t n = 0; n < 20; ++n) {
        if (std::abs(x.data[n]) > 0.0) nonzero.push_back(n);
    }
    CHECK(nonzero == std::vector<std::size_t>{0, 1, 2, 10, 11, 12});
}

TEST_CASE("pulse: standard PRI and duty land at the documented fraction") {
    const SignalConfig cfg = cfg20(20000);
    const PulseParams p{3e6, 1.0 / 6000.0, 0.3 / 6000.0};
    const auto n_pri = static_cast<std::size_t>(std::floor(p.pri * cfg.fs));
    const auto n_tau = static_cast<std::size_t>(std::floor(p.tau * cfg.fs));
    const auto x = synth_pulse(p, cfg);
    // any window of exactly one PRI holds n_tau active samples
    for (std::size_t start = 0; start + n_pri <= 3 * n_pri; start += n_pri) {
        std::size_t on = 0;
        for (std::size_t n = start; n < start + n_pri; ++n) on += std::abs(x.data[n]) > 0.0;
        CHECK(on == n_tau);
    }
    CHECK(static_cast<double>(n_tau) / static_cast<double>(n_pri) ==
          doctest::Approx(0.3).epsilon(0.01));
}

TEST_CASE("pulse: any PRI-length window holds exactly N_tau active samples") {
    const auto x = synth_pulse({0.0, 10.0 / 20e6, 3.0 / 20e6}, cfg20(200));
    for (std::size_t start = 0; start + 10 <= 200; ++start) {
        std::size_t on = 0;
        for (std::size_t n = start; n < start + 10; ++n) on += std::abs(x.data[n]) > 0.0;
        CHECK(on == 3);
    }
}

TEST_CASE("pulse: near-full duty leaves at most N/N_PRI zeros") {
    const auto x = synth_pulse({0.0, 10.0 / 20e6, 9.0 / 20e6}, cfg20(20000));
    std::size_t zeros = 0;
    for (const auto& v : x.data) zeros += std::abs(v) == 0.0;
    CHECK(zeros <= 2000);
}

TEST_CASE("pulse: width >= PRI rejected") {
    CHECK_THROWS_AS(synth_pulse({0.0, 10.0 / 20e6, 10.0 / 20e6}, cfg20(16)),
                    std::invalid_argument);
}

TEST_CASE("pbnj: full-band degenerate case is white within 1 dB band averages") {
    const SignalConfig cfg = cfg20(20000);
    Rng rng(11);
    const auto x = synth_pbnj({0.0, 20e6}, cfg, rng);
    CHECK(mean_power(x) == doctest::Approx(1.0).epsilon(1e-12));
    const auto tapers = specfeat::dpss_tapers_cached(cfg.n_samples, 3.0, 5);
    const auto psd = specfeat::mtm_psd(x, *tapers, 1024);
    // 16 band averages across the whole band
    for (int band = 0; band < 16; ++band) {
        double acc = 0.0;
        for (int i = 0; i < 64; ++i) acc += psd.values[static_cast<std::size_t>(band * 64 + i)];
        const double db = 10.0 * std::log10(acc / 64.0);
        CHECK(std::abs(db) < 1.0);
    }
}

TEST_CASE("pbnj: energy concentrates in the configured band") {
    const SignalConfig cfg = cfg20(20000);
    Rng rng(5);
    const double b_jam = 0.15 * cfg.fs;  // 3 MHz
    const double f_c = 2e6;
    const auto x = synth_pbnj({f_c, b_jam}, cfg, rng);
    const auto tapers = specfeat::dpss_tapers_cached(cfg.n_samples, 3.0, 5);
    const auto psd = specfeat::mtm_psd(x, *tapers, 1024);
    double in_band = 0.0, total = 0.0;
    for (std::size_t k = 0; k < psd.values.size(); ++k) {
        total += psd.values[k];
        if (psd.freq_hz[k] >= f_c - 0.6 * b_jam && psd.freq_hz[k] <= f_c + 0.6 * b_jam) {
            in_band += psd.values[k];
        }
    }
    CHECK(in_band / total >= 0.97);
}

TEST_CASE("pbnj: fixed seed reproduces bit-identical output") {
    const SignalConfig cfg = cfg20(4096);
    Rng r1(42), r2(42);
    const auto a = synth_pbnj({1e6, 4e6}, cfg, r1);
    const auto b = synth_pbnj({1e6, 4e6}, cfg, r2);
    CHECK(bit_identical(a, b));
}

TEST_CASE("pbnj: band spilling over Nyquist rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(synth_pbnj({9e6, 4e6}, cfg20(64), rng), std::invalid_argument);
}

TEST_CASE("compose: single unit component is the identity") {
    const auto a = synth_stj({1e6, 0.2}, cfg20(256));
    const auto out = compose_compound({{a, 1.0}});
    CHECK(bit_identical(a, out));
}

TEST_CASE("compose: equal split uses sqrt(1/2) weights") {
    const auto a = synth_stj({1e6, 0.0}, cfg20(128));
    const auto b = synth_stj({-2e6, 0.0}, cfg20(128));
    const auto out = compose_compound({{a, 0.5}, {b, 0.5}});
    const double r = std::sqrt(0.5);
    for (std::size_t n = 0; n < 128; ++n) {
        CHECK(std::abs(out.data[n] - (r * a.data[n] + r * b.data[n])) < 1e-15);
    }
}

TEST_CASE("compose: 3 dB power ratio splits as the solved weights") {
    // oracle: bisection on p/(1-p) = 10^0.3
    double lo = 0.0, hi = 1.0;
    const double target = std::pow(10.0, 0.3);
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (mid / (1.0 - mid) < target ? lo : hi) = mid;
    }
    const double p_a = 0.5 * (lo + hi);
    CHECK(p_a == doctest::Approx(0.6661).epsilon(2e-4));
    CHECK(1.0 - p_a == doctest::Approx(0.3339).epsilon(2e-4));
    CHECK(p_a / (1.0 - p_a) == doctest::Approx(std::pow(10.0, 0.3)).epsilon(1e-10));
}

TEST_CASE("compose: linearity property") {
    Rng rng(99);
    const SignalConfig cfg = cfg20(512);
    IqSignal a{std::vector<cplx>(512), cfg}, b{std::vector<cplx>(512), cfg};
    for (auto& v : a.data) v = rng.cnormal(1.0);
    for (auto& v : b.data) v = rng.cnormal(1.0);
    const double p = 0.7, q = 1.4;
    const auto out = compose_compound({{a, p}, {b, q}});
    for (std::size_t n = 0; n < 512; ++n) {
        const cplx expect = std::sqrt(p) * a.data[n] + std::sqrt(q) * b.data[n];
        CHECK(std::abs(out.data[n] - expect) < 1e-14);
    }
}

TEST_CASE("compose: mismatched configs rejected") {
    const auto a = synth_stj({1e6, 0.0}, cfg20(128));
    const auto b = synth_stj({1e6, 0.0}, cfg20(256));
    CHECK_THROWS_AS(compose_compound({{a, 1.0}, {b, 1.0}}), std::invalid_argument);
}

TEST_CASE("apply_jnr: scale factors match the analytic values") {
    const auto j = synth_stj({1e6, 0.0}, cfg20(1024));  // unit power
    SUBCASE("0 dB is identity") {
        const auto out = apply_jnr(j, 0.0, 1.0);
        for (std::size_t n = 0; n < 1024; ++n) CHECK(std::abs(out.data[n] - j.data[n]) < 1e-12);
    }
    SUBCASE("10 dB scales by sqrt(10)") {
        const auto out = apply_jnr(j, 10.0, 1.0);
        const double s = std::sqrt(10.0);
        for (std::size_t n = 0; n < 8; ++n) {
            CHECK(std::abs(out.data[n] - s * j.data[n]) < 1e-12);
        }
    }
    SUBCASE("power 4 at 0 dB scales by 0.5") {
        IqSignal four = j;
        for (auto& v : four.data) v *= 2.0;
        const auto out = apply_jnr(four, 0.0, 1.0);
        for (std::size_t n = 0; n < 8; ++n) {
            CHECK(std::abs(out.data[n] - 0.5 * four.data[n]) < 1e-12);
        }
    }
}

TEST_CASE("apply_jnr: recomputed JNR hits the target to 1e-10 dB") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto spec = sample_spec(static_cast<int>(rng.uniform_int(1, 21)),
                                      rng.uniform(-10.0, 10.0), rng);
        const auto j = synth_spec(spec, cfg20(20000), rng);
        const double jnr = 10.0 * std::log10(mean_power(j) / 1.0);
        CHECK(std::abs(jnr - spec.jnr_db) < 1e-10);
    }
}

TEST_CASE("apply_jnr: zero input rejected") {
    IqSignal z{std::vector<cplx>(64, cplx{0, 0}), cfg20(64)};
    CHECK_THROWS_AS(apply_jnr(z, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("add_awgn: calibrated noise power and split variance") {
    const SignalConfig cfg{20e6, 0.05, 1000000};
    IqSignal z{std::vector<cplx>(cfg.n_samples, cplx{0, 0}), cfg};
    Rng rng(17);
    const auto out = add_awgn(z, {1.0, 0}, rng);
    CHECK(mean_power(out) == doctest::Approx(1.0).epsilon(0.01));
    double re = 0.0, im = 0.0;
    for (const auto& v : out.data) {
        re += v.real() * v.real();
        im += v.imag() * v.imag();
    }
    re /= static_cast<double>(cfg.n_samples);
    im /= static_cast<double>(cfg.n_samples);
    CHECK(re == doctest::Approx(0.5).epsilon(0.02));
    CHECK(im == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("add_awgn: vanishing variance leaves the input") {
    const auto x = synth_stj({1e6, 0.0}, cfg20(1024));
    Rng rng(9);
    const auto out = add_awgn(x, {1e-30, 0}, rng);
    for (std::size_t n = 0; n < 1024; ++n) {
        CHECK(std::abs(out.data[n] - x.data[n]) / std::abs(x.data[n]) < 1e-12);
    }
}

TEST_CASE("add_awgn: fixed seed reproduces the noise bitwise") {
    const auto x = synth_stj({1e6, 0.0}, cfg20(512));
    Rng r1(123), r2(123);
    CHECK(bit_identical(add_awgn(x, {1.0, 0}, r1), add_awgn(x, {1.0, 0}, r2)));
}

TEST_CASE("sample_spec: single-class parameter ranges") {
    Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
        const auto stj = sample_spec(1, 0.0, rng);
        const auto& p = std::get<StjParams>(stj.components[0].params);
        CHECK(std::abs(p.f_c) <= 9.5e6);
        CHECK(p.phi >= 0.0);
        CHECK(p.phi < 2.0 * kPi);

        const auto mtj = sample_spec(2, 0.0, rng);
        const auto& t = std::get<MtjParams>(mtj.components[0].params);
        CHECK(t.tones.size() >= 5);
        CHECK(t.tones.size() <= 7);
        const double spacing = t.tones[1].f_k - t.tones[0].f_k;
        CHECK(spacing >= 1.5e6);
        CHECK(spacing <= 3.0e6);
        for (std::size_t i = 0; i < t.tones.size(); ++i) {
            CHECK(std::abs(t.tones[i].f_k) <= 9.5e6);
            if (i > 0) {
                CHECK(t.tones[i].f_k - t.tones[i - 1].f_k ==
                      doctest::Approx(spacing).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("sample_spec: triple compounds keep pairwise ratios within 3 dB") {
    Rng rng(31337);
    const int class_id = class_id_by_name("STJ+LFM+PBNJ");
    REQUIRE(class_id > 0);
    for (int trial = 0; trial < 10000; ++trial) {
        const auto spec = sample_spec(class_id, 0.0, rng);
        REQUIRE(spec.components.size() == 3);
        double sum = 0.0;
        for (const auto& c : spec.components) sum += c.power_weight;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = a + 1; b < 3; ++b) {
                const double ratio_db = 10.0 * std::log10(spec.components[a].power_weight /
                                                          spec.components[b].power_weight);
                CHECK(std::abs(ratio_db) <= 3.0 + 1e-9);
            }
        }
    }
}

TEST_CASE("sample_spec: every class satisfies its ranges over 1000 draws") {
    Rng rng(2024);
    for (int class_id = 1; class_id <= kNumClasses; ++class_id) {
        const auto& kinds = class_components(class_id);
        for (int trial = 0; trial < 1000; ++trial) {
            const auto spec = sample_spec(class_id, -5.0, rng);
            REQUIRE(spec.components.size() == kinds.size());
            double sum = 0.0;
            for (std::size_t i = 0; i < kinds.size(); ++i) {
                CHECK(kind_of(spec.components[i].params) == kinds[i]);
                sum += spec.components[i].power_weight;
                if (const auto* lfm = std::get_if<LfmParams>(&spec.components[i].params)) {
                    CHECK(std::abs(lfm->mu) == doctest::Approx(1e10));
                    const double f_end = lfm->f_start + lfm->mu * 1e-3;
                    CHECK(std::abs(lfm->f_start) <= 10e6);
                    CHECK(std::abs(f_end) <= 10e6 + 1.0);
                } else if (const auto* pb = std::get_if<PbnjParams>(&spec.components[i].params)) {
                    CHECK(pb->b_jam >= 0.10 * 20e6);
                    CHECK(pb->b_jam <= 0.25 * 20e6);
                    CHECK(std::abs(pb->f_c) + pb->b_jam / 2.0 <= 10e6 + 1e-6);
                } else if (const auto* pu = std::get_if<PulseParams>(&spec.components[i].params)) {
                    CHECK(pu->pri == doctest::Approx(1.0 / 6000.0));
                    CHECK(pu->tau == doctest::Approx(0.3 / 6000.0));
                    CHECK(std::abs(pu->f_c) <= 9.5e6);
                }
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("synth pipeline: deterministic and finite for every class") {
    const SignalConfig cfg = cfg20(4096);  // short window keeps this fast
    for (int class_id = 1; class_id <= kNumClasses; ++class_id) {
        Rng ra(derive_stream(1, static_cast<std::uint64_t>(class_id)));
        Rng rb(derive_stream(1, static_cast<std::uint64_t>(class_id)));
        const auto sa = sample_spec(class_id, 5.0, ra);
        const auto sb = sample_spec(class_id, 5.0, rb);
        const auto xa = synth_received(sa, cfg, {1.0, 0}, ra);
        const auto xb = synth_received(sb, cfg, {1.0, 0}, rb);
        CHECK(xa.data.size() == cfg.n_samples);
        CHECK(all_finite(xa));
        CHECK(bit_identical(xa, xb));
    }
}
