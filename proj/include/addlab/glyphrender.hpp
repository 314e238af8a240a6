#ifndef ADDLAB_GLYPHRENDER_HPP
#define ADDLAB_GLYPHRENDER_HPP

#include <array>
#include <cstdint>
#include <string>

#include "addlab/image.hpp"

namespace addlab {

inline constexpr int kGlyphCols = 5;
inline constexpr int kGlyphRows = 7;

/// One fixed 5x7 dot-matrix glyph. rows[r] holds the ink flags of row r in
/// its low 5 bits, bit 4 being the leftmost column.
struct GlyphBitmap {
    char ch = 0;
    std::array<std::uint8_t, kGlyphRows> rows{};

    bool ink(int row, int col) const {
        return (rows[row] >> (kGlyphCols - 1 - col)) & 1u;
    }
};

/// Canvas geometry and pixel palette for formula rendering.
struct RenderConfig {
    int width = 64;
    int height = 64;
    int margin = 2;
    int gap_cells = 1;             // glyph-columns between adjacent glyphs
    std::uint8_t ink = 0;          // pixel value of ink cells
    std::uint8_t background = 255; // pixel value everywhere else
    int scale = 0;                 // block-replication factor; 0 = auto

    /// Square canvas preset; 64 and 224 are the stock sizes.
    static RenderConfig preset(int size);
};

/// Identifies one formula image: the ordered pair (n, m) of "n+m".
/// (n, m) and its dual (m, n) are distinct keys.
struct AdditionKey {
    int n = 0;
    int m = 0;

    friend bool operator==(const AdditionKey&, const AdditionKey&) = default;
    friend auto operator<=>(const AdditionKey&, const AdditionKey&) = default;
};

/// The fixed bitmap for one of '0'..'9', '+'. Throws ConfigError for any
/// other character.
const GlyphBitmap& glyph_for(char c);

/// The formula string "n+m": decimal digits, no leading zeros, no spaces.
std::string formula_string(const AdditionKey& key);

/// Largest integer scale s >= 1 at which the longest formula of a set with
/// maximum integer n_max ("n_max+n_max") fits inside the canvas margins.
/// Throws ConfigError when not even s = 1 fits.
int auto_scale(int n_max, const RenderConfig& cfg);

/// Rasterizes "n+m" centered on the canvas. When cfg.scale is 0 the scale is
/// resolved for n_max; pass the owning set's maximum integer so every image
/// of the set shares one layout. Output is bit-deterministic.
Image render_formula(const AdditionKey& key, const RenderConfig& cfg,
                     int n_max);

/// Convenience overload: resolves auto scale against max(key.n, key.m).
Image render_formula(const AdditionKey& key, const RenderConfig& cfg);

}  // namespace addlab

#endif
