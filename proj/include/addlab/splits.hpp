#ifndef ADDLAB_SPLITS_HPP
#define ADDLAB_SPLITS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "addlab/dataset.hpp"

namespace addlab {

enum class Role : std::uint8_t { Train, Test };

/// Closed interval of integers [lo, hi] within [0, N].
struct Interval {
    int lo = 0;
    int hi = 0;

    friend bool operator==(const Interval&, const Interval&) = default;
};

struct SplitProtocol {
    enum class Variant {
        Commutativity,    // train one orientation, test the dual
        RandomPair,       // (n,m) and (m,n) coupled into the same side
        UniformRandom,    // unconstrained random test subset
        IntegerExclusion, // every formula touching E goes to test
    };

    Variant variant = Variant::UniformRandom;
    double train_fraction = 0.0;      // Commutativity, RandomPair
    double test_fraction = 0.0;       // UniformRandom
    std::vector<Interval> intervals;  // IntegerExclusion

    std::string name() const;

    friend bool operator==(const SplitProtocol&, const SplitProtocol&) =
        default;
};

/// A total partition of the closed set into train and test roles.
struct SplitManifest {
    int n_max = 0;
    SplitProtocol protocol;
    std::uint64_t seed = 0;
    std::vector<Role> assignment;  // indexed canonically, (N+1)^2 entries

    Role role_of(const AdditionKey& key) const {
        return assignment[static_cast<std::size_t>(key.n) * (n_max + 1) +
                          key.m];
    }

    std::vector<AdditionKey> keys_with(Role role) const;
    std::size_t count(Role role) const;
    std::size_t total() const { return assignment.size(); }

    friend bool operator==(const SplitManifest&, const SplitManifest&) =
        default;
};

/// Diagonal keys (n,n) go to test; a seeded sample of unordered off-diagonal
/// pairs contributes one coin-picked orientation to train, the dual to test.
/// The pair budget round(f * |set|) is capped by the N(N+1)/2 available
/// pairs, so f = 0.5 selects every pair.
SplitManifest commutativity_split(const ImageSet& set, double train_fraction,
                                  std::uint64_t seed);

/// Diagonal keys go to test; sampled unordered pairs contribute BOTH
/// orientations to train until |train| = round(f * |set|) rounded down to an
/// even key count. At least one off-diagonal pair must remain for test.
SplitManifest random_pair_split(const ImageSet& set, double train_fraction,
                                std::uint64_t seed);

/// Unconstrained: a seeded uniform sample of round(f * |set|) keys is test,
/// the rest train.
SplitManifest uniform_random_split(const ImageSet& set, double test_fraction,
                                   std::uint64_t seed);

/// Deterministic: (n, m) is test iff n or m falls in one of the intervals.
/// Intervals must be sorted, non-overlapping and within [0, N], and must not
/// cover all of [0, N].
SplitManifest integer_exclusion_split(const ImageSet& set,
                                      const std::vector<Interval>& intervals);

/// Applies the protocol carried by a SplitProtocol value.
SplitManifest make_split(const ImageSet& set, const SplitProtocol& protocol,
                         std::uint64_t seed);

// JSON manifest document: {schema_version, n_max, protocol:{name, params},
// seed, train:[[n,m],...], test:[[n,m],...]}, arrays sorted
// lexicographically. Load validates exact coverage of the closed set.
void save_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest load_manifest(const std::string& path);

std::string manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const std::string& text);

/// Parses "33-37,62-68" / "42" style interval lists.
std::vector<Interval> parse_intervals(const std::string& text);

}  // namespace addlab

#endif
