#ifndef ADDLAB_CRC32_HPP
#define ADDLAB_CRC32_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace addlab {

// CRC-32 (IEEE 802.3, reflected 0xEDB88320), same parameters as zlib.

/// Incremental checksum accumulator.
class Crc32 {
public:
    void update(const void* data, std::size_t len);
    std::uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

private:
    std::uint32_t state_ = 0xFFFFFFFFu;
};

std::uint32_t crc32(const void* data, std::size_t len);
std::uint32_t crc32(const std::vector<std::uint8_t>& bytes);
std::uint32_t crc32(const std::string& s);

/// Checksum of a whole file's bytes.
std::uint32_t crc32_file(const std::string& path);

}  // namespace addlab

#endif
