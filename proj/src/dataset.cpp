#include "addlab/dataset.hpp"

#include <cstring>
#include <fstream>

#include "addlab/crc32.hpp"
#include "addlab/errors.hpp"
#include "addlab/parallel.hpp"

namespace addlab {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'D', 'I'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> packed_header(const ImageSet& set) {
    std::vector<std::uint8_t> h;
    h.insert(h.end(), kMagic, kMagic + 4);
    put_u16(h, kVersion);
    put_u16(h, static_cast<std::uint16_t>(set.n_max));
    put_u16(h, static_cast<std::uint16_t>(set.render_cfg.width));
    put_u16(h, static_cast<std::uint16_t>(set.render_cfg.height));
    h.push_back(set.render_cfg.ink);
    h.push_back(set.render_cfg.background);
    put_u32(h, static_cast<std::uint32_t>(set.examples.size()));
    return h;
}

std::vector<std::uint8_t> record_prefix(const Example& ex) {
    std::vector<std::uint8_t> r;
    put_u16(r, static_cast<std::uint16_t>(ex.key.n));
    put_u16(r, static_cast<std::uint16_t>(ex.key.m));
    put_u16(r, static_cast<std::uint16_t>(ex.label));
    return r;
}

}  // namespace

int class_size(int k, int n_max) {
    if (k < 0 || k > 2 * n_max) {
        throw ConfigError("label " + std::to_string(k) +
                          " out of range 0.." + std::to_string(2 * n_max));
    }
    return std::min(k, 2 * n_max - k) + 1;
}

ImageSet build_image_set(int n_max, const RenderConfig& cfg) {
    if (n_max < 1) {
        throw ConfigError("build_image_set: n_max must be >= 1");
    }
    ImageSet set;
    set.n_max = n_max;
    set.render_cfg = cfg;
    if (set.render_cfg.scale == 0) {
        set.render_cfg.scale = auto_scale(n_max, cfg);
    }
    const std::size_t side = static_cast<std::size_t>(n_max) + 1;
    set.examples.resize(side * side);
    parallel_for(side * side, [&](std::size_t i) {
        AdditionKey key{static_cast<int>(i / side),
                        static_cast<int>(i % side)};
        Example& ex = set.examples[i];
        ex.key = key;
        ex.label = label_of(key);
        ex.image = render_formula(key, set.render_cfg, n_max);
    });
    return set;
}

std::uint32_t content_digest(const ImageSet& set) {
    Crc32 crc;
    auto header = packed_header(set);
    crc.update(header.data(), header.size());
    for (const auto& ex : set.examples) {
        auto prefix = record_prefix(ex);
        crc.update(prefix.data(), prefix.size());
        crc.update(ex.image.pixels.data(), ex.image.pixels.size());
    }
    return crc.value();
}

void write_packed(const ImageSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open for writing: " + path);
    }
    Crc32 crc;
    auto emit = [&](const void* data, std::size_t len) {
        crc.update(data, len);
        out.write(static_cast<const char*>(data),
                  static_cast<std::streamsize>(len));
    };
    auto header = packed_header(set);
    emit(header.data(), header.size());
    for (const auto& ex : set.examples) {
        auto prefix = record_prefix(ex);
        emit(prefix.data(), prefix.size());
        emit(ex.image.pixels.data(), ex.image.pixels.size());
    }
    std::vector<std::uint8_t> tail;
    put_u32(tail, crc.value());
    out.write(reinterpret_cast<const char*>(tail.data()),
              static_cast<std::streamsize>(tail.size()));
    if (!out) {
        throw Error("write failed: " + path);
    }
}

ImageSet read_packed(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open file: " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());

    constexpr std::size_t header_size = 4 + 2 + 2 + 2 + 2 + 1 + 1 + 4;
    if (bytes.size() < header_size) {
        throw FormatError(FormatError::Defect::truncated,
                          "truncated file: header incomplete");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(FormatError::Defect::bad_magic, "bad magic");
    }
    const std::uint16_t version = get_u16(bytes.data() + 4);
    if (version != kVersion) {
        throw FormatError(FormatError::Defect::version_mismatch,
                          "unsupported version " + std::to_string(version));
    }
    ImageSet set;
    set.n_max = get_u16(bytes.data() + 6);
    set.render_cfg.width = get_u16(bytes.data() + 8);
    set.render_cfg.height = get_u16(bytes.data() + 10);
    set.render_cfg.ink = bytes[12];
    set.render_cfg.background = bytes[13];
    const std::uint32_t count = get_u32(bytes.data() + 14);

    const std::size_t pixel_count =
        static_cast<std::size_t>(set.render_cfg.width) *
        set.render_cfg.height;
    const std::size_t record_size = 6 + pixel_count;

    const std::size_t expected =
        static_cast<std::size_t>(set.n_max + 1) * (set.n_max + 1);
    if (count != expected) {
        throw FormatError(FormatError::Defect::schema,
                          "record count " + std::to_string(count) +
                              " does not cover the closed set (expected " +
                              std::to_string(expected) + ")");
    }
    const std::size_t body = bytes.size() - header_size;
    if (body < count * record_size + 4) {
        std::size_t complete = body / record_size;
        throw FormatError(FormatError::Defect::truncated,
                          "truncated at record " + std::to_string(complete));
    }

    const std::uint32_t stored_crc =
        get_u32(bytes.data() + header_size + count * record_size);
    const std::uint32_t actual_crc =
        crc32(bytes.data(), header_size + count * record_size);
    if (stored_crc != actual_crc) {
        throw FormatError(FormatError::Defect::checksum_mismatch,
                          "checksum mismatch");
    }

    set.examples.resize(count);
    const std::uint8_t* p = bytes.data() + header_size;
    for (std::uint32_t i = 0; i < count; ++i, p += record_size) {
        Example& ex = set.examples[i];
        ex.key.n = get_u16(p);
        ex.key.m = get_u16(p + 2);
        ex.label = get_u16(p + 4);
        if (ex.label != ex.key.n + ex.key.m || !set.contains(ex.key) ||
            set.index_of(ex.key) != i) {
            throw FormatError(FormatError::Defect::schema,
                              "record " + std::to_string(i) +
                                  " violates canonical key order or label");
        }
        ex.image.width = set.render_cfg.width;
        ex.image.height = set.render_cfg.height;
        ex.image.pixels.assign(p + 6, p + 6 + pixel_count);
    }
    return set;
}

}  // namespace addlab
