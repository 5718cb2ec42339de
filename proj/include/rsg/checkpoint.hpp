#pragma once

#include "rsg/binio.hpp"
#include "rsg/nn.hpp"

// Checkpoint container: "RSGC" | version u32 | repeated blobs of
// (name length u16, utf-8 name, rank u8, extents u32[], f32 LE data) until
// end of file. Values are stored as f32 regardless of compute precision.

namespace rsg {

constexpr uint32_t kCheckpointVersion = 1;

struct ParamBlob {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

template <typename S>
void save_checkpoint(const std::string& path, const ParamList<S>& params) {
    auto os = binio::open_out(path);
    os.write("RSGC", 4);
    binio::put_u32(os, kCheckpointVersion);
    for (const auto& p : params) {
        if (p.name.size() > 0xFFFF) throw ContractError("checkpoint: name too long");
        binio::put_u16(os, static_cast<uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        binio::put_u8(os, static_cast<uint8_t>(p.tensor.rank()));
        for (int64_t e : p.tensor.shape()) binio::put_u32(os, static_cast<uint32_t>(e));
        std::vector<float> f(p.tensor.values().begin(), p.tensor.values().end());
        binio::put_f32(os, f.data(), f.size());
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline std::vector<ParamBlob> load_checkpoint(const std::string& path) {
    auto is = binio::open_in(path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RSGC", 4) != 0)
        throw FormatError("checkpoint: bad magic");
    uint32_t version = 0;
    if (!binio::get_u32(is, version)) throw FormatError("checkpoint: truncated header");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    std::vector<ParamBlob> blobs;
    while (true) {
        uint16_t name_len = 0;
        if (!binio::get_u16(is, name_len)) {
            if (is.eof()) break;  // clean end
            throw FormatError("checkpoint: truncated blob header");
        }
        ParamBlob b;
        b.name.resize(name_len);
        uint8_t rank = 0;
        if (!is.read(b.name.data(), name_len) || !binio::get_u8(is, rank))
            throw FormatError("checkpoint: truncated blob header");
        int64_t n = 1;
        for (int i = 0; i < rank; ++i) {
            uint32_t e = 0;
            if (!binio::get_u32(is, e)) throw FormatError("checkpoint: truncated extents");
            if (e == 0) throw FormatError("checkpoint: zero extent");
            b.shape.push_back(e);
            n *= e;
        }
        b.data.resize(static_cast<size_t>(n));
        if (!binio::get_f32(is, b.data.data(), b.data.size()))
            throw FormatError("checkpoint: truncated blob data");
        blobs.push_back(std::move(b));
    }
    return blobs;
}

// Strict by-name restore: every blob must land on a parameter of the same
// shape and every parameter must be covered.
template <typename S>
void apply_checkpoint(const std::vector<ParamBlob>& blobs, ParamList<S>& params) {
    if (blobs.size() != params.size())
        throw FormatError("checkpoint: has " + std::to_string(blobs.size()) + " blobs, model has " +
                          std::to_string(params.size()) + " parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        const ParamBlob* found = nullptr;
        for (const auto& b : blobs)
            if (b.name == params[i].name) {
                found = &b;
                break;
            }
        if (!found) throw FormatError("checkpoint: missing parameter " + params[i].name);
        if (found->shape != params[i].tensor.shape())
            throw FormatError("checkpoint: shape mismatch for " + params[i].name);
        auto& dst = params[i].tensor.values();
        for (size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<S>(found->data[k]);
    }
}

}  // namespace rsg
