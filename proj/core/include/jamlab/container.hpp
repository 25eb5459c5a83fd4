#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace jamlab::io {

// CRC-32 (IEEE 802.3 polynomial); detects any single-byte corruption.
std::uint32_t crc32_bytes(const void* data, std::size_t len, std::uint32_t seed = 0);
std::uint32_t crc32_file(const std::string& path);

struct NamedTensor {
    std::string name;
    std::vector<std::int64_t> dims;
    std::vector<float> data;
};

// Free-form string metadata stored in the trailing JSON index.
struct Meta {
    std::vector<std::pair<std::string, std::string>> entries;
};

// Little-endian binary container. Each tensor record is
//   magic "JLT1" | u8 dtype (0 = f32) | u8 rank | u64 dims[rank] | payload
// followed by a trailing JSON index { tensors: [{name, offset}], meta: {} },
// a u64 index length and the trailer magic "JLTI".
struct Container {
    std::vector<NamedTensor> tensors;
    Meta meta;
};

void write_container(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const Meta& meta = {});

Container read_container(const std::string& path);

// Incremental writer with the same format; tensors are appended in call
// order and the index is emitted by finish().
class ContainerWriter {
public:
    explicit ContainerWriter(const std::string& path);
    ~ContainerWriter();

    ContainerWriter(const ContainerWriter&) = delete;
    ContainerWriter& operator=(const ContainerWriter&) = delete;

    void append(const NamedTensor& t);
    void finish(const Meta& meta = {});

private:
    struct Impl;
    Impl* impl_;
};

}  // namespace jamlab::io
