#ifndef ADDLAB_IMAGE_HPP
#define ADDLAB_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace addlab {

/// Row-major 8-bit grayscale image.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height bytes

    std::uint8_t at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
};

/// Writes a binary PGM (P5, maxval 255). Header bytes are fixed so equal
/// images produce byte-identical files.
void write_pgm(const std::string& path, const Image& img);

/// Writes a binary PPM (P6, maxval 255) from interleaved RGB bytes.
void write_ppm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& rgb);

}  // namespace addlab

#endif
