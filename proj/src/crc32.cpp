#include "addlab/crc32.hpp"

#include <array>
#include <fstream>

#include "addlab/errors.hpp"

namespace addlab {

namespace {

std::array<std::uint32_t, 256> make_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        }
        table[i] = c;
    }
    return table;
}

const std::array<std::uint32_t, 256>& table() {
    static const auto t = make_table();
    return t;
}

}  // namespace

void Crc32::update(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    const auto& t = table();
    std::uint32_t c = state_;
    for (std::size_t i = 0; i < len; ++i) {
        c = t[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    }
    state_ = c;
}

std::uint32_t crc32(const void* data, std::size_t len) {
    Crc32 c;
    c.update(data, len);
    return c.value();
}

std::uint32_t crc32(const std::vector<std::uint8_t>& bytes) {
    return crc32(bytes.data(), bytes.size());
}

std::uint32_t crc32(const std::string& s) { return crc32(s.data(), s.size()); }

std::uint32_t crc32_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open file: " + path);
    }
    Crc32 c;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        c.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return c.value();
}

}  // namespace addlab
