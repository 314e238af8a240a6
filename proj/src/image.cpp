#include "addlab/image.hpp"

#include <fstream>

#include "addlab/errors.hpp"

namespace addlab {

void write_pgm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open for writing: " + path);
    }
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) {
        throw Error("write failed: " + path);
    }
}

void write_ppm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
        throw ConfigError("ppm buffer size does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open for writing: " + path);
    }
    out << "P6\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()),
              static_cast<std::streamsize>(rgb.size()));
    if (!out) {
        throw Error("write failed: " + path);
    }
}

}  // namespace addlab
