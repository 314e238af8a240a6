#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "addlab/dataset.hpp"
#include "addlab/errors.hpp"

using namespace addlab;

namespace {

// independent enumeration oracle for class_size
int count_pairs_with_sum(int k, int n_max) {
    int count = 0;
    for (int n = 0; n <= n_max; ++n) {
        for (int m = 0; m <= n_max; ++m) {
            if (n + m == k) ++count;
        }
    }
    return count;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p,
                 const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("closed set sizes and labels") {
    RenderConfig cfg = RenderConfig::preset(64);

    ImageSet s9 = build_image_set(9, cfg);
    CHECK(s9.size() == 100);
    CHECK(s9.class_count() == 19);

    ImageSet s29 = build_image_set(29, cfg);
    CHECK(s29.size() == 900);
    CHECK(s29.class_count() == 59);

    for (const auto& ex : s29.examples) {
        CHECK(ex.label == ex.key.n + ex.key.m);
    }
    // canonical order
    CHECK(s29.examples.front().key == AdditionKey{0, 0});
    CHECK(s29.examples.back().key == AdditionKey{29, 29});
    CHECK(s29.at({3, 7}).key == AdditionKey{3, 7});
}

TEST_CASE("label_of") {
    CHECK(label_of({6, 19}) == 25);
    CHECK(label_of({0, 0}) == 0);
    CHECK(label_of({99, 99}) == 198);
}

TEST_CASE("class_size") {
    CHECK(class_size(10, 99) == 11);
    CHECK(class_size(0, 9) == 1);
    CHECK(class_size(18, 9) == 1);
    CHECK(class_size(5, 9) == count_pairs_with_sum(5, 9));
    CHECK(class_size(5, 9) == 6);
    CHECK_THROWS_AS(class_size(19, 9), ConfigError);
    CHECK_THROWS_AS(class_size(-1, 9), ConfigError);

    for (int n_max : {9, 29, 99, 299}) {
        long long sum = 0;
        for (int k = 0; k <= 2 * n_max; ++k) {
            sum += class_size(k, n_max);
        }
        CHECK(sum == static_cast<long long>(n_max + 1) * (n_max + 1));
    }
}

TEST_CASE("packed round trip") {
    auto path = temp_file("addlab_roundtrip.apack");
    ImageSet set = build_image_set(9, RenderConfig::preset(64));
    write_packed(set, path.string());
    ImageSet loaded = read_packed(path.string());

    CHECK(loaded.n_max == set.n_max);
    CHECK(loaded.render_cfg.width == set.render_cfg.width);
    CHECK(loaded.render_cfg.height == set.render_cfg.height);
    CHECK(loaded.render_cfg.ink == set.render_cfg.ink);
    CHECK(loaded.render_cfg.background == set.render_cfg.background);
    REQUIRE(loaded.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(loaded.examples[i].key == set.examples[i].key);
        CHECK(loaded.examples[i].label == set.examples[i].label);
        CHECK(loaded.examples[i].image.pixels ==
              set.examples[i].image.pixels);
    }
    CHECK(content_digest(loaded) == content_digest(set));

    // writing the loaded set again reproduces identical bytes
    auto path2 = temp_file("addlab_roundtrip2.apack");
    write_packed(loaded, path2.string());
    CHECK(read_bytes(path) == read_bytes(path2));

    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("packed files catch corruption") {
    auto path = temp_file("addlab_corrupt.apack");
    ImageSet set = build_image_set(2, RenderConfig::preset(64));
    write_packed(set, path.string());
    const auto good = read_bytes(path);

    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        bytes[1] = 'X';
        write_bytes(path, bytes);
        CHECK_THROWS_WITH_AS(read_packed(path.string()), "bad magic",
                             FormatError);
        try {
            read_packed(path.string());
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::bad_magic);
        }
    }

    SUBCASE("version mismatch") {
        auto bytes = good;
        bytes[4] = 9;
        write_bytes(path, bytes);
        try {
            read_packed(path.string());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::version_mismatch);
        }
    }

    SUBCASE("truncated mid-record") {
        // cut inside record 4 (record = 6 + 64*64 bytes, header = 18)
        const std::size_t record = 6 + 64 * 64;
        auto bytes = good;
        bytes.resize(18 + 4 * record + record / 2);
        write_bytes(path, bytes);
        try {
            read_packed(path.string());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::truncated);
            CHECK(std::string(e.what()).find("record 4") !=
                  std::string::npos);
        }
    }

    SUBCASE("checksum mismatch") {
        auto bytes = good;
        bytes[500] ^= 0x40;  // flip a pixel bit
        write_bytes(path, bytes);
        try {
            read_packed(path.string());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::checksum_mismatch);
        }
    }

    std::filesystem::remove(path);
}

TEST_CASE("build rejects bad input") {
    CHECK_THROWS_AS(build_image_set(0, RenderConfig::preset(64)),
                    ConfigError);
    RenderConfig tiny;
    tiny.width = 8;
    tiny.height = 8;
    tiny.margin = 1;
    CHECK_THROWS_AS(build_image_set(9, tiny), ConfigError);
}
