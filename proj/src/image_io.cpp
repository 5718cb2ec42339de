#include "rsg/image_io.hpp"

#include <cmath>

#include "rsg/binio.hpp"

namespace rsg {

void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& gray) {
    if (gray.size() != static_cast<size_t>(width) * height)
        throw DimError("write_pgm: pixel count mismatch");
    auto os = binio::open_out(path);
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!os) throw IoError("write_pgm: write failed: " + path);
}

void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb_interleaved) {
    if (rgb_interleaved.size() != static_cast<size_t>(width) * height * 3)
        throw DimError("write_ppm: pixel count mismatch");
    auto os = binio::open_out(path);
    os << "P6\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb_interleaved.data()),
             static_cast<std::streamsize>(rgb_interleaved.size()));
    if (!os) throw IoError("write_ppm: write failed: " + path);
}

GrayImage read_pgm(const std::string& path) {
    auto is = binio::open_in(path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw FormatError("read_pgm: not a P5 file");
    int w = 0, h = 0, maxv = 0;
    is >> w >> h >> maxv;
    if (!is || w <= 0 || h <= 0 || maxv != 255) throw FormatError("read_pgm: bad header");
    is.get();  // single whitespace after the header
    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<size_t>(w) * h);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
                 static_cast<std::streamsize>(img.pixels.size())))
        throw FormatError("read_pgm: truncated pixel data");
    return img;
}

std::vector<uint8_t> quantize01(const std::vector<float>& values) {
    std::vector<uint8_t> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        float v = values[i];
        if (v < 0) v = 0;
        if (v > 1) v = 1;
        out[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

}  // namespace rsg
