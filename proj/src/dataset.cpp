#include "rsg/data.hpp"

#include "rsg/binio.hpp"

namespace rsg {

namespace {
constexpr char kMagic[4] = {'R', 'S', 'G', 'X'};
}

void write_dataset(const std::string& path, const Dataset& ds) {
    auto os = binio::open_out(path);
    os.write(kMagic, 4);
    binio::put_u32(os, kDatasetVersion);
    binio::put_u32(os, static_cast<uint32_t>(ds.samples.size()));
    binio::put_u32(os, ds.height);
    binio::put_u32(os, ds.width);
    binio::put_u32(os, ds.num_classes);
    const size_t hw = static_cast<size_t>(ds.height) * ds.width;
    for (const auto& s : ds.samples) {
        if (s.rgb.size() != 3 * hw || s.aux.size() != 3 * hw || s.labels.size() != hw ||
            s.mask.size() != hw)
            throw ContractError("write_dataset: sample extents do not match header");
        binio::put_f32(os, s.rgb.data(), s.rgb.size());
        binio::put_f32(os, s.aux.data(), s.aux.size());
        os.write(reinterpret_cast<const char*>(s.labels.data()),
                 static_cast<std::streamsize>(hw));
        os.write(reinterpret_cast<const char*>(s.mask.data()), static_cast<std::streamsize>(hw));
    }
    if (!os) throw IoError("write_dataset: write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
    auto is = binio::open_in(path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("dataset: bad magic");
    uint32_t version = 0, count = 0, h = 0, w = 0, k = 0;
    if (!binio::get_u32(is, version) || !binio::get_u32(is, count) || !binio::get_u32(is, h) ||
        !binio::get_u32(is, w) || !binio::get_u32(is, k))
        throw FormatError("dataset: truncated header");
    if (version != kDatasetVersion)
        throw FormatError("dataset: unsupported version " + std::to_string(version));
    if (h == 0 || w == 0 || h % 32 || w % 32)
        throw FormatError("dataset: invalid image size " + std::to_string(h) + "x" +
                          std::to_string(w));
    if (k < 2 || k > 255) throw FormatError("dataset: invalid class count " + std::to_string(k));

    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t sample_bytes = 3 * hw * 4 * 2 + hw * 2;
    const int64_t expect = 24 + static_cast<int64_t>(count) * sample_bytes;
    if (binio::file_size(is) != expect)
        throw FormatError("dataset: size mismatch (header says " + std::to_string(expect) +
                          " bytes)");

    Dataset ds;
    ds.height = h;
    ds.width = w;
    ds.num_classes = k;
    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        s.height = static_cast<int>(h);
        s.width = static_cast<int>(w);
        s.rgb.resize(3 * hw);
        s.aux.resize(3 * hw);
        s.labels.resize(hw);
        s.mask.resize(hw);
        if (!binio::get_f32(is, s.rgb.data(), s.rgb.size()) ||
            !binio::get_f32(is, s.aux.data(), s.aux.size()) ||
            !is.read(reinterpret_cast<char*>(s.labels.data()), hw) ||
            !is.read(reinterpret_cast<char*>(s.mask.data()), hw))
            throw FormatError("dataset: truncated sample data");
        for (uint8_t l : s.labels)
            if (l >= k) throw FormatError("dataset: label out of range");
        for (uint8_t m : s.mask)
            if (m > 1) throw FormatError("dataset: mask value out of range");
    }
    return ds;
}

}  // namespace rsg
