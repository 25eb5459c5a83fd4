#include "jamlab/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "jamlab/container.hpp"
#include "jamlab/jamgen.hpp"

namespace jamlab::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

FeatureProfile feature_profile(const std::string& name) {
    FeatureProfile p;
    p.name = name;
    if (name == "desk") {
        p.stft = specfeat::StftConfig{128, 256, 64, 0.9, 1e-12, 64, 64, true};
        p.mtm_nfft = 4096;
    } else if (name == "full") {
        p.stft = specfeat::StftConfig{128, 4096, 11, 0.9, 1e-12, 224, 224, true};
        p.mtm_nfft = 4096;
    } else {
        throw ConfigError("unknown feature profile: " + name);
    }
    p.mtm_nw = 3.0;
    p.mtm_k = 5;
    p.psd_bins = 128;
    return p;
}

void GenConfig::validate() const {
    if (class_ids.empty()) throw ConfigError("gen config: classes must be non-empty");
    for (int c : class_ids) {
        if (c < 1 || c > jamgen::kNumClasses) {
            throw ConfigError("gen config: class id out of range: " + std::to_string(c));
        }
    }
    std::vector<int> sorted = class_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("gen config: duplicate class ids");
    }
    if (jnr_grid_db.empty()) throw ConfigError("gen config: jnr grid must be non-empty");
    if (samples_per_class < 1) throw ConfigError("gen config: samples_per_class must be >= 1");
    feature_profile(profile);
}

namespace {

GenConfig parse_gen_json(const json& doc) {
    static const std::vector<std::string> kKnown = {"classes", "jnr_db", "samples_per_class",
                                                    "seed", "profile"};
    if (!doc.is_object()) throw ConfigError("gen config: root must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        (void)value;
        if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
            throw ConfigError("gen config: unknown key \"" + key + "\"");
        }
    }
    GenConfig cfg;
    try {
        const auto& classes = doc.at("classes");
        for (const auto& c : classes) {
            if (c.is_string()) {
                const int id = jamgen::class_id_by_name(c.get<std::string>());
                if (id == 0) throw ConfigError("gen config: unknown class name " +
                                               c.get<std::string>());
                cfg.class_ids.push_back(id);
            } else {
                cfg.class_ids.push_back(c.get<int>());
            }
        }
        const auto& jnr = doc.at("jnr_db");
        if (jnr.is_array()) {
            for (const auto& v : jnr) cfg.jnr_grid_db.push_back(v.get<double>());
        } else {
            const double lo = jnr.at("min").get<double>();
            const double hi = jnr.at("max").get<double>();
            const double step = jnr.value("step", 1.0);
            if (!(step > 0.0) || hi < lo) throw ConfigError("gen config: bad jnr sweep");
            for (double v = lo; v <= hi + 1e-9; v += step) cfg.jnr_grid_db.push_back(v);
        }
        cfg.samples_per_class = doc.at("samples_per_class").get<int>();
        cfg.seed = doc.value("seed", std::uint64_t{0});
        cfg.profile = doc.value("profile", std::string{"desk"});
    } catch (const json::exception& e) {
        throw ConfigError(std::string{"gen config: "} + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace

GenConfig parse_gen_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string{"gen config: invalid JSON: "} + e.what());
    }
    return parse_gen_json(doc);
}

GenConfig load_gen_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("gen config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_gen_config(text);
}

SampleFeatures extract_features(const IqSignal& x, const FeatureProfile& profile) {
    SampleFeatures out;
    const auto gram = specfeat::log_magnitude_image(specfeat::stft(x, profile.stft),
                                                    profile.stft, x.config.fs);
    out.spec.reserve(gram.image_db.size());
    for (double v : gram.image_db) out.spec.push_back(static_cast<float>(v));

    const auto tapers = specfeat::dpss_tapers_cached(x.data.size(), profile.mtm_nw, profile.mtm_k);
    const auto psd = specfeat::mtm_psd(x, *tapers, profile.mtm_nfft);
    const auto vec = specfeat::psd_feature_vector(psd, profile.psd_bins);
    out.psd.reserve(vec.size());
    for (double v : vec) out.psd.push_back(static_cast<float>(v));
    return out;
}

Manifest generate(const GenConfig& cfg, const std::string& out_dir, int n_threads) {
    cfg.validate();
    const FeatureProfile profile = feature_profile(cfg.profile);
    fs::create_directories(out_dir);

    Manifest m;
    m.root_seed = cfg.seed;
    m.profile = cfg.profile;
    m.class_ids = cfg.class_ids;
    for (int c : cfg.class_ids) m.class_names.push_back(jamgen::class_name(c));
    m.jnr_grid_db = cfg.jnr_grid_db;
    m.samples_per_class = cfg.samples_per_class;
    m.image_h = static_cast<int>(profile.stft.out_h);
    m.image_w = static_cast<int>(profile.stft.out_w);
    m.psd_bins = static_cast<int>(profile.psd_bins);

    if (n_threads <= 0) {
        n_threads = static_cast<int>(std::thread::hardware_concurrency());
        if (const char* env = std::getenv("JAMLAB_THREADS")) {
            const int cap = std::atoi(env);
            if (cap > 0) n_threads = std::min(n_threads, cap);
        }
        n_threads = std::max(n_threads, 1);
    }

    const SignalConfig sig_cfg = SignalConfig::make(20e6, 1e-3);
    // warm the taper cache once instead of racing in workers
    specfeat::dpss_tapers_cached(sig_cfg.n_samples, profile.mtm_nw, profile.mtm_k);

    std::int64_t next_id = 0;
    for (std::size_t ci = 0; ci < cfg.class_ids.size(); ++ci) {
        const int class_id = cfg.class_ids[ci];
        const std::string shard = "data_c" + std::to_string(class_id) + ".jlt";
        io::ContainerWriter writer((fs::path(out_dir) / shard).string());

        const int per_class = cfg.samples_per_class;
        constexpr int kChunk = 64;  // bounded in-flight feature memory
        std::vector<SampleFeatures> slot(static_cast<std::size_t>(kChunk));
        for (int base = 0; base < per_class; base += kChunk) {
            const int count = std::min(kChunk, per_class - base);
            std::atomic<int> cursor{0};
            auto worker = [&]() {
                for (;;) {
                    const int i = cursor.fetch_add(1);
                    if (i >= count) break;
                    const int sample_idx = base + i;
                    const std::size_t jnr_idx =
                        static_cast<std::size_t>(sample_idx) % cfg.jnr_grid_db.size();
                    const std::uint64_t stream =
                        derive_stream(cfg.seed, static_cast<std::uint64_t>(class_id), jnr_idx,
                                      static_cast<std::uint64_t>(sample_idx));
                    Rng rng(stream);
                    const auto spec = jamgen::sample_spec(class_id, cfg.jnr_grid_db[jnr_idx], rng);
                    const auto x = jamgen::synth_received(spec, sig_cfg, {1.0, stream}, rng);
                    slot[static_cast<std::size_t>(i)] = extract_features(x, profile);
                }
            };
            std::vector<std::thread> pool;
            for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
            worker();
            for (auto& t : pool) t.join();

            for (int i = 0; i < count; ++i) {
                const int sample_idx = base + i;
                const std::size_t jnr_idx =
                    static_cast<std::size_t>(sample_idx) % cfg.jnr_grid_db.size();
                const std::int64_t id = next_id + sample_idx;
                io::NamedTensor spec_t;
                spec_t.name = "spec/" + std::to_string(id);
                spec_t.dims = {m.image_h, m.image_w};
                spec_t.data = std::move(slot[static_cast<std::size_t>(i)].spec);
                writer.append(spec_t);
                io::NamedTensor psd_t;
                psd_t.name = "psd/" + std::to_string(id);
                psd_t.dims = {m.psd_bins};
                psd_t.data = std::move(slot[static_cast<std::size_t>(i)].psd);
                writer.append(psd_t);

                SampleRecord rec;
                rec.id = id;
                rec.class_id = class_id;
                rec.jnr_db = cfg.jnr_grid_db[jnr_idx];
                rec.seed = derive_stream(cfg.seed, static_cast<std::uint64_t>(class_id), jnr_idx,
                                         static_cast<std::uint64_t>(sample_idx));
                rec.file = shard;
                rec.index_in_file = 2 * sample_idx;
                m.records.push_back(rec);
            }
        }
        io::Meta meta;
        meta.entries = {{"kind", "dataset_shard"}, {"class_id", std::to_string(class_id)}};
        writer.finish(meta);
        m.file_checksums.emplace_back(shard,
                                      io::crc32_file((fs::path(out_dir) / shard).string()));
        next_id += cfg.samples_per_class;
    }

    save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
    json doc;
    doc["schema_version"] = m.schema_version;
    doc["root_seed"] = m.root_seed;
    doc["profile"] = m.profile;
    doc["class_ids"] = m.class_ids;
    doc["class_names"] = m.class_names;
    doc["jnr_grid_db"] = m.jnr_grid_db;
    doc["samples_per_class"] = m.samples_per_class;
    doc["image_h"] = m.image_h;
    doc["image_w"] = m.image_w;
    doc["psd_bins"] = m.psd_bins;
    json files = json::array();
    for (const auto& [file, crc] : m.file_checksums) {
        files.push_back({{"file", file}, {"crc32", crc}});
    }
    doc["files"] = files;
    json records = json::array();
    for (const auto& r : m.records) {
        records.push_back({{"id", r.id},
                           {"class_id", r.class_id},
                           {"jnr_db", r.jnr_db},
                           {"seed", r.seed},
                           {"file", r.file},
                           {"index_in_file", r.index_in_file}});
    }
    doc["records"] = records;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    f << doc.dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string{"manifest: invalid JSON: "} + e.what());
    }
    Manifest m;
    try {
        m.schema_version = doc.at("schema_version").get<int>();
        m.root_seed = doc.at("root_seed").get<std::uint64_t>();
        m.profile = doc.at("profile").get<std::string>();
        m.class_ids = doc.at("class_ids").get<std::vector<int>>();
        m.class_names = doc.at("class_names").get<std::vector<std::string>>();
        m.jnr_grid_db = doc.at("jnr_grid_db").get<std::vector<double>>();
        m.samples_per_class = doc.at("samples_per_class").get<int>();
        m.image_h = doc.at("image_h").get<int>();
        m.image_w = doc.at("image_w").get<int>();
        m.psd_bins = doc.at("psd_bins").get<int>();
        for (const auto& e : doc.at("files")) {
            m.file_checksums.emplace_back(e.at("file").get<std::string>(),
                                          e.at("crc32").get<std::uint32_t>());
        }
        for (const auto& e : doc.at("records")) {
            SampleRecord r;
            r.id = e.at("id").get<std::int64_t>();
            r.class_id = e.at("class_id").get<int>();
            r.jnr_db = e.at("jnr_db").get<double>();
            r.seed = e.at("seed").get<std::uint64_t>();
            r.file = e.at("file").get<std::string>();
            r.index_in_file = e.at("index_in_file").get<std::int64_t>();
            m.records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string{"manifest: missing field: "} + e.what());
    }
    return m;
}

void validate_files(const Manifest& m, const std::string& root_dir) {
    for (const auto& [file, crc] : m.file_checksums) {
        const std::string full = (fs::path(root_dir) / file).string();
        if (!fs::exists(full)) throw std::runtime_error("manifest: missing shard " + file);
        const std::uint32_t actual = io::crc32_file(full);
        if (actual != crc) {
            throw std::runtime_error("manifest: checksum mismatch for " + file);
        }
    }
}

moe::TrainSet load_tensors(const Manifest& m, const std::string& root_dir) {
    moe::TrainSet set;
    set.image_h = m.image_h;
    set.image_w = m.image_w;
    set.psd_bins = m.psd_bins;

    // class_id -> 0-based label in manifest order
    std::vector<int> label_of(jamgen::kNumClasses + 1, -1);
    for (std::size_t i = 0; i < m.class_ids.size(); ++i) {
        label_of[static_cast<std::size_t>(m.class_ids[i])] = static_cast<int>(i);
    }

    std::map<std::string, io::Container> shards;
    for (const auto& [file, crc] : m.file_checksums) {
        (void)crc;
        shards.emplace(file, io::read_container((fs::path(root_dir) / file).string()));
    }
    // index by tensor name within each shard
    std::map<std::string, const io::NamedTensor*> by_name;
    for (const auto& [file, c] : shards) {
        for (const auto& t : c.tensors) by_name[file + "#" + t.name] = &t;
    }

    for (const auto& r : m.records) {
        const auto* spec = by_name.count(r.file + "#spec/" + std::to_string(r.id))
                               ? by_name[r.file + "#spec/" + std::to_string(r.id)]
                               : nullptr;
        const auto* psd = by_name.count(r.file + "#psd/" + std::to_string(r.id))
                              ? by_name[r.file + "#psd/" + std::to_string(r.id)]
                              : nullptr;
        if (spec == nullptr || psd == nullptr) {
            throw MissingSample("dataset: tensors missing for sample " + std::to_string(r.id));
        }
        set.spec.push_back(spec->data);
        set.psd.push_back(psd->data);
        set.labels.push_back(label_of[static_cast<std::size_t>(r.class_id)]);
        set.tiers.push_back(jamgen::class_tier(r.class_id));
        set.ids.push_back(r.id);
    }
    return set;
}

}  // namespace jamlab::dataset
