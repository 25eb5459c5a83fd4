#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "jamlab/moe.hpp"
#include "jamlab/mtm.hpp"
#include "jamlab/stft.hpp"

namespace jamlab::dataset {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingSample : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Feature extraction settings per profile. The desk profile keeps training
// CPU-tractable; the full profile carries the reference resolution.
struct FeatureProfile {
    std::string name;
    specfeat::StftConfig stft;
    // Grid spacing fs/n_fft must stay below the taper half-bandwidth
    // nw*fs/N, otherwise narrow tones can fall between grid points.
    std::size_t mtm_nfft = 4096;
    double mtm_nw = 3.0;
    std::size_t mtm_k = 5;
    std::size_t psd_bins = 128;
};

FeatureProfile feature_profile(const std::string& name);  // "desk" or "full"

struct GenConfig {
    std::vector<int> class_ids;       // subset of 1..21
    std::vector<double> jnr_grid_db;  // assigned round-robin over sample index
    int samples_per_class = 200;
    std::uint64_t seed = 0;
    std::string profile = "desk";

    void validate() const;  // throws ConfigError
};

// Strict JSON parse: unknown keys are rejected. jnr_db may be a list or a
// {min, max, step} sweep object.
GenConfig parse_gen_config(const std::string& json_text);
GenConfig load_gen_config(const std::string& path);

struct SampleRecord {
    std::int64_t id = 0;
    int class_id = 1;
    double jnr_db = 0.0;
    std::uint64_t seed = 0;  // derived sample stream
    std::string file;        // shard, relative to the dataset root
    std::int64_t index_in_file = 0;
};

struct Manifest {
    int schema_version = 1;
    std::uint64_t root_seed = 0;
    std::string profile = "desk";
    std::vector<int> class_ids;
    std::vector<std::string> class_names;
    std::vector<double> jnr_grid_db;
    int samples_per_class = 0;
    int image_h = 0, image_w = 0, psd_bins = 0;
    std::vector<SampleRecord> records;
    std::vector<std::pair<std::string, std::uint32_t>> file_checksums;
};

// Synthesizes every sample, extracts both feature domains, writes one shard
// container per class plus manifest.json. Deterministic for a fixed config:
// worker count only affects wall time, never bytes.
Manifest generate(const GenConfig& cfg, const std::string& out_dir, int n_threads = 0);

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

// Re-checks existence and CRC of every shard. Throws on mismatch.
void validate_files(const Manifest& m, const std::string& root_dir);

// Loads every record into memory as model inputs; labels are 0-based
// indices into the manifest's class list.
moe::TrainSet load_tensors(const Manifest& m, const std::string& root_dir);

// Per-sample feature extraction used by generate() and cmd_render.
struct SampleFeatures {
    std::vector<float> spec;  // image_h * image_w
    std::vector<float> psd;   // psd_bins
};
SampleFeatures extract_features(const IqSignal& x, const FeatureProfile& profile);

}  // namespace jamlab::dataset
