#pragma once

#include <string>
#include <variant>
#include <vector>

#include "jamlab/rng.hpp"
#include "jamlab/signal.hpp"

namespace jamlab::jamgen {

enum class PrimitiveKind { Stj, Mtj, Lfm, Pulse, Pbnj };

const char* kind_name(PrimitiveKind k);

// Single-tone: complex exponential at f_c with initial phase phi.
struct StjParams {
    double f_c = 0.0;  // Hz
    double phi = 0.0;  // radians
};

// Multi-tone: unweighted superposition of K distinct tones.
struct MtjTone {
    double f_k = 0.0;
    double phi_k = 0.0;
};
struct MtjParams {
    std::vector<MtjTone> tones;
};

// Linear chirp: instantaneous frequency f_start + mu * t.
struct LfmParams {
    double f_start = 0.0;  // Hz
    double mu = 0.0;       // Hz/s, sign = sweep direction
};

// Gated carrier: on for the first tau seconds of every pri-second interval.
struct PulseParams {
    double f_c = 0.0;
    double pri = 1.0 / 6000.0;  // s
    double tau = 0.3 / 6000.0;  // s
};

// Band-limited complex Gaussian noise centered on f_c.
struct PbnjParams {
    double f_c = 0.0;
    double b_jam = 2e6;  // Hz, two-sided jamming bandwidth
};

using PrimitiveParams = std::variant<StjParams, MtjParams, LfmParams, PulseParams, PbnjParams>;

PrimitiveKind kind_of(const PrimitiveParams& p);

// One weighted component of a (possibly compound) jamming scenario.
struct Component {
    PrimitiveParams params;
    double power_weight = 1.0;  // P_k >= 0
};

// Fully instantiated scenario: class label, components, and target JNR.
struct JammingSpec {
    int class_id = 1;  // 1..21
    std::vector<Component> components;
    double jnr_db = 0.0;
};

struct ChannelConfig {
    double noise_variance = 1.0;  // sigma_n^2, linear power
    std::uint64_t seed = 0;
};

// ---- 21-class taxonomy ------------------------------------------------
// ids 1..5 singles, 6..14 duals, 15..21 triples.
inline constexpr int kNumClasses = 21;

const std::vector<PrimitiveKind>& class_components(int class_id);
const std::string& class_name(int class_id);
int class_tier(int class_id);           // number of components: 1, 2 or 3
int class_id_by_name(const std::string& name);  // 0 when unknown

// ---- primitive synthesizers -------------------------------------------
// Every synthesizer returns exactly cfg.n_samples finite samples.

IqSignal synth_stj(const StjParams& p, const SignalConfig& cfg);
IqSignal synth_mtj(const MtjParams& p, const SignalConfig& cfg);
IqSignal synth_lfm(const LfmParams& p, const SignalConfig& cfg);
IqSignal synth_pulse(const PulseParams& p, const SignalConfig& cfg);
IqSignal synth_pbnj(const PbnjParams& p, const SignalConfig& cfg, Rng& rng);
IqSignal synth_primitive(const PrimitiveParams& p, const SignalConfig& cfg, Rng& rng);

// ---- composition and channel -------------------------------------------

// Scales to unit mean power. Throws on an all-zero input.
IqSignal normalize_power(const IqSignal& x);

// J[n] = sum_k sqrt(P_k) * J_k[n]. Inputs must share a SignalConfig and be
// pre-normalized to unit mean power.
IqSignal compose_compound(const std::vector<std::pair<IqSignal, double>>& components);

// Rescales so that 10*log10(mean|J|^2 / sigma_n_sq) equals jnr_db exactly
// under the sample-average power convention.
IqSignal apply_jnr(const IqSignal& j, double jnr_db, double sigma_n_sq);

// x[n] + w[n] with w ~ CN(0, sigma_n^2) drawn from rng.
IqSignal add_awgn(const IqSignal& x, const ChannelConfig& ch, Rng& rng);

// ---- scenario sampling ---------------------------------------------------

// Default parameter ranges for the generated corpus.
namespace ranges {
inline constexpr double kToneFreqMaxHz = 9.5e6;     // |f_c| bound for STJ/MTJ/Pulse
inline constexpr int kMtjTonesMin = 5;
inline constexpr int kMtjTonesMax = 7;
inline constexpr double kMtjSpacingMinHz = 1.5e6;
inline constexpr double kMtjSpacingMaxHz = 3.0e6;
inline constexpr double kLfmSweepHz = 10e6;         // B_sw
inline constexpr double kLfmSweepSeconds = 1e-3;    // T_sw
inline constexpr double kLfmFreqBoundHz = 10e6;     // sweep kept inside +/- this
inline constexpr double kPulsePriSeconds = 1.0 / 6000.0;
inline constexpr double kPulseDuty = 0.3;
inline constexpr double kPbnjBandMinFrac = 0.10;    // of fs
inline constexpr double kPbnjBandMaxFrac = 0.25;
inline constexpr double kPowerRatioBoundDb = 3.0;   // pairwise |PR| bound
}  // namespace ranges

// Draws all primitive parameters for class_id uniformly from their ranges;
// multi-component power weights satisfy every pairwise ratio in
// [-kPowerRatioBoundDb, +kPowerRatioBoundDb] dB and sum to 1.
JammingSpec sample_spec(int class_id, double jnr_db, Rng& rng);

// Unit-power composition of the spec's components, calibrated to its JNR
// against sigma_n_sq (the pre-noise jamming term).
IqSignal synth_spec(const JammingSpec& spec, const SignalConfig& cfg, Rng& rng,
                    double sigma_n_sq = 1.0);

// synth_spec followed by add_awgn: the classifier input x[n].
IqSignal synth_received(const JammingSpec& spec, const SignalConfig& cfg,
                        const ChannelConfig& ch, Rng& rng);

}  // namespace jamlab::jamgen
