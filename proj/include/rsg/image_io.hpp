#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rsg {

// Binary PGM (P5) / PPM (P6), 8-bit. Dependency-free, byte-stable outputs.
void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& gray);
void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb_interleaved);

struct GrayImage {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;
};
GrayImage read_pgm(const std::string& path);

// Linear map of values in (0,1) onto [0,255].
std::vector<uint8_t> quantize01(const std::vector<float>& values);

}  // namespace rsg
