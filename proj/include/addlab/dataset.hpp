#ifndef ADDLAB_DATASET_HPP
#define ADDLAB_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "addlab/glyphrender.hpp"
#include "addlab/image.hpp"

namespace addlab {

struct Example {
    AdditionKey key;
    int label = 0;  // n + m
    Image image;
};

/// The closed image set for a maximum integer N: all (N+1)^2 formulas,
/// sorted lexicographically by (n, m). Labels span 0..2N, so the class
/// count is 2N+1.
struct ImageSet {
    int n_max = 0;
    RenderConfig render_cfg;  // scale resolved (never 0) once built/loaded
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    int class_count() const { return 2 * n_max + 1; }

    /// Index of a key in the canonical (n, m) order.
    std::size_t index_of(const AdditionKey& key) const {
        return static_cast<std::size_t>(key.n) * (n_max + 1) + key.m;
    }

    const Example& at(const AdditionKey& key) const {
        return examples[index_of(key)];
    }

    bool contains(const AdditionKey& key) const {
        return key.n >= 0 && key.n <= n_max && key.m >= 0 && key.m <= n_max;
    }
};

/// The sum label of a key.
inline int label_of(const AdditionKey& key) { return key.n + key.m; }

/// Number of ordered pairs (n, m) with n+m = k in the set with maximum
/// integer n_max; equals min(k, 2N-k) + 1. Throws on k outside 0..2N.
int class_size(int k, int n_max);

/// Renders every formula of the closed set. Rendering is parallelized but
/// record order is canonical regardless of scheduling.
ImageSet build_image_set(int n_max, const RenderConfig& cfg);

/// Content digest of the canonical packed serialization (header + records).
/// Two sets digest equal iff they would produce identical .apack bytes.
std::uint32_t content_digest(const ImageSet& set);

// Packed ".apack" container, little-endian throughout:
//   magic "ADDI", u16 version=1, u16 N, u16 width, u16 height,
//   u8 ink, u8 background, u32 count,
//   count records of { u16 n, u16 m, u16 label, width*height u8 pixels }
//   in (n, m) lexicographic order, then CRC32 of all preceding bytes.
void write_packed(const ImageSet& set, const std::string& path);
ImageSet read_packed(const std::string& path);

}  // namespace addlab

#endif
