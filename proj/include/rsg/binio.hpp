#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rsg/common.hpp"

// Little-endian primitives for the dataset / checkpoint containers.

namespace rsg::binio {

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u8(std::ostream& os, uint8_t v) {
    os.write(reinterpret_cast<const char*>(&v), 1);
}

inline void put_f32(std::ostream& os, const float* p, size_t n) {
    // IEEE-754 little-endian floats; x86 stores them natively
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

inline bool get_u16(std::istream& is, uint16_t& v) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) return false;
    v = static_cast<uint16_t>(b[0] | (b[1] << 8));
    return true;
}

inline bool get_u32(std::istream& is, uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
    return true;
}

inline bool get_u8(std::istream& is, uint8_t& v) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), 1));
}

inline bool get_f32(std::istream& is, float* p, size_t n) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4)));
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

inline int64_t file_size(std::istream& is) {
    auto cur = is.tellg();
    is.seekg(0, std::ios::end);
    auto end = is.tellg();
    is.seekg(cur);
    return static_cast<int64_t>(end);
}

}  // namespace rsg::binio
