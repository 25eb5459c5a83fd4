#include "jamlab/container.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace jamlab::io {

namespace {

constexpr char kRecordMagic[4] = {'J', 'L', 'T', '1'};
constexpr char kTrailerMagic[4] = {'J', 'L', 'T', 'I'};
constexpr std::uint8_t kDtypeF32 = 0;

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int bit = 0; bit < 8; ++bit) {
            c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        }
        table[i] = c;
    }
    return table;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

std::string encode_record(const NamedTensor& t) {
    std::int64_t numel = 1;
    for (std::int64_t d : t.dims) {
        if (d <= 0) throw std::invalid_argument("container: dims must be positive");
        numel *= d;
    }
    if (numel != static_cast<std::int64_t>(t.data.size())) {
        throw std::invalid_argument("container: payload length != product(dims)");
    }
    if (t.dims.size() > 255) throw std::invalid_argument("container: rank too large");
    std::string out;
    out.append(kRecordMagic, 4);
    out.push_back(static_cast<char>(kDtypeF32));
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::int64_t d : t.dims) put_u64(out, static_cast<std::uint64_t>(d));
    const std::size_t payload = t.data.size() * sizeof(float);
    const std::size_t base = out.size();
    out.resize(base + payload);
    // IEEE-754 little-endian payload (host is little-endian)
    std::memcpy(out.data() + base, t.data.data(), payload);
    return out;
}

}  // namespace

std::uint32_t crc32_bytes(const void* data, std::size_t len, std::uint32_t seed) {
    static const auto table = make_crc_table();
    std::uint32_t c = seed ^ 0xffffffffu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

std::uint32_t crc32_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("crc32: cannot open " + path);
    std::uint32_t c = 0;
    std::array<char, 1 << 16> buf;
    while (f) {
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const std::streamsize got = f.gcount();
        if (got > 0) c = crc32_bytes(buf.data(), static_cast<std::size_t>(got), c);
    }
    return c;
}

struct ContainerWriter::Impl {
    std::ofstream file;
    std::string path;
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    bool finished = false;
};

ContainerWriter::ContainerWriter(const std::string& path) : impl_(new Impl) {
    impl_->path = path;
    impl_->file.open(path, std::ios::binary | std::ios::trunc);
    if (!impl_->file) {
        delete impl_;
        throw std::runtime_error("container: cannot open " + path + " for writing");
    }
}

ContainerWriter::~ContainerWriter() { delete impl_; }

void ContainerWriter::append(const NamedTensor& t) {
    if (impl_->finished) throw std::logic_error("container: append after finish");
    const std::string rec = encode_record(t);
    impl_->index.push_back({{"name", t.name}, {"offset", impl_->offset}});
    impl_->file.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    impl_->offset += rec.size();
}

void ContainerWriter::finish(const Meta& meta) {
    if (impl_->finished) return;
    nlohmann::json meta_obj = nlohmann::json::object();
    for (const auto& [k, v] : meta.entries) meta_obj[k] = v;
    const nlohmann::json doc = {{"tensors", impl_->index}, {"meta", meta_obj}};
    const std::string text = doc.dump();
    std::string trailer;
    put_u64(trailer, text.size());
    trailer.append(kTrailerMagic, 4);
    impl_->file.write(text.data(), static_cast<std::streamsize>(text.size()));
    impl_->file.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
    impl_->file.close();
    if (!impl_->file.good() && impl_->file.is_open()) {
        throw std::runtime_error("container: write failed for " + impl_->path);
    }
    impl_->finished = true;
}

void write_container(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const Meta& meta) {
    ContainerWriter w(path);
    for (const NamedTensor& t : tensors) w.append(t);
    w.finish(meta);
}

Container read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("container: cannot open " + path);
    f.seekg(0, std::ios::end);
    const std::int64_t size = f.tellg();
    if (size < 12) throw std::runtime_error("container: truncated file " + path);

    std::array<char, 12> trailer;
    f.seekg(size - 12);
    f.read(trailer.data(), 12);
    if (std::memcmp(trailer.data() + 8, kTrailerMagic, 4) != 0) {
        throw std::runtime_error("container: bad trailer magic in " + path);
    }
    const std::uint64_t json_len = get_u64(trailer.data());
    if (static_cast<std::int64_t>(json_len) > size - 12) {
        throw std::runtime_error("container: index length out of range in " + path);
    }
    std::string text(json_len, '\0');
    f.seekg(size - 12 - static_cast<std::int64_t>(json_len));
    f.read(text.data(), static_cast<std::streamsize>(json_len));

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("container: corrupt index in " + path);
    }

    Container out;
    if (doc.contains("meta")) {
        for (const auto& [k, v] : doc["meta"].items()) {
            out.meta.entries.emplace_back(k, v.get<std::string>());
        }
    }
    for (const auto& entry : doc["tensors"]) {
        const auto offset = entry.at("offset").get<std::uint64_t>();
        f.seekg(static_cast<std::int64_t>(offset));
        std::array<char, 6> head;
        f.read(head.data(), 6);
        if (!f || std::memcmp(head.data(), kRecordMagic, 4) != 0) {
            throw std::runtime_error("container: bad record magic in " + path);
        }
        if (static_cast<std::uint8_t>(head[4]) != kDtypeF32) {
            throw std::runtime_error("container: unsupported dtype in " + path);
        }
        const auto rank = static_cast<std::size_t>(static_cast<unsigned char>(head[5]));
        NamedTensor t;
        t.name = entry.at("name").get<std::string>();
        std::int64_t numel = 1;
        for (std::size_t i = 0; i < rank; ++i) {
            std::array<char, 8> dim_bytes;
            f.read(dim_bytes.data(), 8);
            const auto d = static_cast<std::int64_t>(get_u64(dim_bytes.data()));
            if (d <= 0) throw std::runtime_error("container: bad dim in " + path);
            t.dims.push_back(d);
            numel *= d;
        }
        t.data.resize(static_cast<std::size_t>(numel));
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!f) throw std::runtime_error("container: truncated tensor in " + path);
        out.tensors.push_back(std::move(t));
    }
    return out;
}

}  // namespace jamlab::io
