#include "addlab/glyphrender.hpp"

#include <algorithm>

#include "addlab/errors.hpp"

namespace addlab {

namespace {

// Classic 5x7 dot-matrix digits. '1' carries a full-width base and '0' has
// no slash, so every digit inks all 5 columns and mirror-symmetric formulas
// ("0+0", "8+8") stay pixel-symmetric.
constexpr std::array<GlyphBitmap, 11> kFont = {{
    {'0', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x1F}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
}};

int text_cell_width(int glyph_count, int gap_cells) {
    return kGlyphCols * glyph_count + gap_cells * (glyph_count - 1);
}

void validate_palette(const RenderConfig& cfg) {
    if (cfg.ink == cfg.background) {
        throw ConfigError("render config: ink equals background");
    }
    if (cfg.width <= 0 || cfg.height <= 0 || cfg.margin < 0 ||
        cfg.gap_cells < 0) {
        throw ConfigError("render config: non-positive canvas or negative "
                          "margin/gap");
    }
}

}  // namespace

RenderConfig RenderConfig::preset(int size) {
    RenderConfig cfg;
    cfg.width = size;
    cfg.height = size;
    cfg.margin = std::max(1, size / 28);  // 8 at 224, 2 at 64
    return cfg;
}

const GlyphBitmap& glyph_for(char c) {
    for (const auto& g : kFont) {
        if (g.ch == c) return g;
    }
    throw ConfigError(std::string("unsupported glyph '") + c + "'");
}

std::string formula_string(const AdditionKey& key) {
    if (key.n < 0 || key.m < 0) {
        throw ConfigError("addition key operands must be non-negative");
    }
    return std::to_string(key.n) + "+" + std::to_string(key.m);
}

int auto_scale(int n_max, const RenderConfig& cfg) {
    if (n_max < 0) {
        throw ConfigError("auto_scale: n_max must be non-negative");
    }
    validate_palette(cfg);
    const int glyphs =
        static_cast<int>(formula_string({n_max, n_max}).size());
    const int cells = text_cell_width(glyphs, cfg.gap_cells);
    const int free_w = cfg.width - 2 * cfg.margin;
    const int free_h = cfg.height - 2 * cfg.margin;
    const int s = std::min(free_w / cells, free_h / kGlyphRows);
    if (s < 1) {
        throw ConfigError("canvas too small for N=" + std::to_string(n_max) +
                          " (needs " + std::to_string(cells) + "x" +
                          std::to_string(kGlyphRows) +
                          " cells inside the margins)");
    }
    return s;
}

Image render_formula(const AdditionKey& key, const RenderConfig& cfg,
                     int n_max) {
    validate_palette(cfg);
    const int s = cfg.scale > 0 ? cfg.scale : auto_scale(n_max, cfg);
    const std::string text = formula_string(key);
    const int glyphs = static_cast<int>(text.size());
    const int cells = text_cell_width(glyphs, cfg.gap_cells);
    const int block_w = cells * s;
    const int block_h = kGlyphRows * s;
    if (block_w > cfg.width - 2 * cfg.margin ||
        block_h > cfg.height - 2 * cfg.margin) {
        throw ConfigError("formula '" + text +
                          "' does not fit the canvas at scale " +
                          std::to_string(s));
    }

    Image img;
    img.width = cfg.width;
    img.height = cfg.height;
    img.pixels.assign(static_cast<std::size_t>(cfg.width) * cfg.height,
                      cfg.background);

    // Centered; when the free space is odd the extra pixel goes right/bottom.
    const int x0 = (cfg.width - block_w) / 2;
    const int y0 = (cfg.height - block_h) / 2;

    for (int gi = 0; gi < glyphs; ++gi) {
        const GlyphBitmap& g = glyph_for(text[gi]);
        const int gx = x0 + gi * (kGlyphCols + cfg.gap_cells) * s;
        for (int r = 0; r < kGlyphRows; ++r) {
            for (int c = 0; c < kGlyphCols; ++c) {
                if (!g.ink(r, c)) continue;
                const int px = gx + c * s;
                const int py = y0 + r * s;
                for (int dy = 0; dy < s; ++dy) {
                    auto* row = img.pixels.data() +
                                static_cast<std::size_t>(py + dy) * cfg.width;
                    std::fill(row + px, row + px + s, cfg.ink);
                }
            }
        }
    }
    return img;
}

Image render_formula(const AdditionKey& key, const RenderConfig& cfg) {
    return render_formula(key, cfg, std::max(key.n, key.m));
}

}  // namespace addlab
