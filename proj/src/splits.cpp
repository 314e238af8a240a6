#include "addlab/splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "addlab/errors.hpp"
#include "addlab/rng.hpp"

namespace addlab {

namespace {

using nlohmann::json;

std::size_t round_half_up(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

std::vector<std::pair<int, int>> off_diagonal_pairs(int n_max) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(n_max) * (n_max + 1) / 2);
    for (int a = 0; a <= n_max; ++a) {
        for (int b = a + 1; b <= n_max; ++b) {
            pairs.emplace_back(a, b);
        }
    }
    return pairs;
}

SplitManifest blank_manifest(const ImageSet& set, SplitProtocol protocol,
                             std::uint64_t seed, Role fill) {
    SplitManifest m;
    m.n_max = set.n_max;
    m.protocol = std::move(protocol);
    m.seed = seed;
    m.assignment.assign(set.size(), fill);
    return m;
}

void assign(SplitManifest& m, int n, int mm, Role role) {
    m.assignment[static_cast<std::size_t>(n) * (m.n_max + 1) + mm] = role;
}

}  // namespace

std::string SplitProtocol::name() const {
    switch (variant) {
        case Variant::Commutativity: return "commutativity";
        case Variant::RandomPair: return "random_pair";
        case Variant::UniformRandom: return "uniform_random";
        case Variant::IntegerExclusion: return "integer_exclusion";
    }
    return "?";
}

std::vector<AdditionKey> SplitManifest::keys_with(Role role) const {
    std::vector<AdditionKey> keys;
    const int side = n_max + 1;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] == role) {
            keys.push_back({static_cast<int>(i) / side,
                            static_cast<int>(i) % side});
        }
    }
    return keys;
}

std::size_t SplitManifest::count(Role role) const {
    return static_cast<std::size_t>(
        std::count(assignment.begin(), assignment.end(), role));
}

SplitManifest commutativity_split(const ImageSet& set, double train_fraction,
                                  std::uint64_t seed) {
    const int n_max = set.n_max;
    const std::size_t max_pairs =
        static_cast<std::size_t>(n_max) * (n_max + 1) / 2;
    if (!(train_fraction > 0.0 && train_fraction <= 0.5)) {
        throw ConfigError(
            "commutativity split: train_fraction must be in (0, 0.5]; at "
            "most " +
            std::to_string(max_pairs) + " keys can be trained for N=" +
            std::to_string(n_max));
    }
    SplitProtocol protocol;
    protocol.variant = SplitProtocol::Variant::Commutativity;
    protocol.train_fraction = train_fraction;

    // One train key per chosen pair; the budget cannot exceed the number of
    // unordered off-diagonal pairs (the diagonal is forced into test).
    const std::size_t requested = round_half_up(train_fraction * set.size());
    const std::size_t chosen = std::min(requested, max_pairs);

    auto pairs = off_diagonal_pairs(n_max);
    RandomStream rng(seed);
    rng.choose_prefix(pairs, chosen);
    std::vector<std::pair<int, int>> picked(pairs.begin(),
                                            pairs.begin() + chosen);
    std::sort(picked.begin(), picked.end());

    SplitManifest m = blank_manifest(set, protocol, seed, Role::Test);
    for (const auto& [a, b] : picked) {
        if (rng.coin()) {
            assign(m, a, b, Role::Train);
        } else {
            assign(m, b, a, Role::Train);
        }
    }
    return m;
}

SplitManifest random_pair_split(const ImageSet& set, double train_fraction,
                                std::uint64_t seed) {
    const int n_max = set.n_max;
    const std::size_t max_pairs =
        static_cast<std::size_t>(n_max) * (n_max + 1) / 2;
    const double max_fraction =
        static_cast<double>(n_max) / (n_max + 1);  // all off-diagonal keys
    if (!(train_fraction > 0.0 && train_fraction <= max_fraction)) {
        throw ConfigError(
            "random pair split: train_fraction must be in (0, " +
            std::to_string(max_fraction) + "] for N=" +
            std::to_string(n_max));
    }
    std::size_t target_keys = round_half_up(train_fraction * set.size());
    target_keys -= target_keys % 2;  // pairs are atomic
    const std::size_t pair_count = target_keys / 2;
    if (pair_count < 1 || pair_count > max_pairs - 1) {
        throw ConfigError(
            "random pair split: fraction " + std::to_string(train_fraction) +
            " leaves no off-diagonal pair on one side; achievable pair "
            "counts are 1.." +
            std::to_string(max_pairs - 1) + " of " +
            std::to_string(max_pairs));
    }

    SplitProtocol protocol;
    protocol.variant = SplitProtocol::Variant::RandomPair;
    protocol.train_fraction = train_fraction;

    auto pairs = off_diagonal_pairs(n_max);
    RandomStream rng(seed);
    rng.choose_prefix(pairs, pair_count);

    SplitManifest m = blank_manifest(set, protocol, seed, Role::Test);
    for (std::size_t i = 0; i < pair_count; ++i) {
        assign(m, pairs[i].first, pairs[i].second, Role::Train);
        assign(m, pairs[i].second, pairs[i].first, Role::Train);
    }
    return m;
}

SplitManifest uniform_random_split(const ImageSet& set, double test_fraction,
                                   std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw ConfigError(
            "uniform random split: test_fraction must be in [0, 1)");
    }
    const std::size_t test_count = round_half_up(test_fraction * set.size());
    if (test_count >= set.size()) {
        throw ConfigError("uniform random split: empty training set");
    }

    SplitProtocol protocol;
    protocol.variant = SplitProtocol::Variant::UniformRandom;
    protocol.test_fraction = test_fraction;

    std::vector<std::size_t> indices(set.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    RandomStream rng(seed);
    rng.choose_prefix(indices, test_count);

    SplitManifest m = blank_manifest(set, protocol, seed, Role::Train);
    for (std::size_t i = 0; i < test_count; ++i) {
        m.assignment[indices[i]] = Role::Test;
    }
    return m;
}

SplitManifest integer_exclusion_split(const ImageSet& set,
                                      const std::vector<Interval>& intervals) {
    const int n_max = set.n_max;
    if (intervals.empty()) {
        throw ConfigError("integer exclusion split: no intervals given");
    }
    int covered = 0;
    int prev_hi = -1;
    for (const auto& iv : intervals) {
        if (iv.lo > iv.hi || iv.lo < 0 || iv.hi > n_max) {
            throw ConfigError("integer exclusion split: interval [" +
                              std::to_string(iv.lo) + "," +
                              std::to_string(iv.hi) + "] not within [0," +
                              std::to_string(n_max) + "]");
        }
        if (iv.lo <= prev_hi) {
            throw ConfigError(
                "integer exclusion split: intervals must be sorted and "
                "non-overlapping");
        }
        prev_hi = iv.hi;
        covered += iv.hi - iv.lo + 1;
    }
    if (covered > n_max) {
        throw ConfigError("integer exclusion split: empty training set");
    }

    auto excluded = [&](int v) {
        for (const auto& iv : intervals) {
            if (v >= iv.lo && v <= iv.hi) return true;
        }
        return false;
    };

    SplitProtocol protocol;
    protocol.variant = SplitProtocol::Variant::IntegerExclusion;
    protocol.intervals = intervals;

    SplitManifest m = blank_manifest(set, protocol, 0, Role::Train);
    for (int n = 0; n <= n_max; ++n) {
        for (int mm = 0; mm <= n_max; ++mm) {
            if (excluded(n) || excluded(mm)) {
                assign(m, n, mm, Role::Test);
            }
        }
    }
    return m;
}

SplitManifest make_split(const ImageSet& set, const SplitProtocol& protocol,
                         std::uint64_t seed) {
    switch (protocol.variant) {
        case SplitProtocol::Variant::Commutativity:
            return commutativity_split(set, protocol.train_fraction, seed);
        case SplitProtocol::Variant::RandomPair:
            return random_pair_split(set, protocol.train_fraction, seed);
        case SplitProtocol::Variant::UniformRandom:
            return uniform_random_split(set, protocol.test_fraction, seed);
        case SplitProtocol::Variant::IntegerExclusion:
            return integer_exclusion_split(set, protocol.intervals);
    }
    throw ConfigError("unknown split protocol");
}

std::string manifest_to_json(const SplitManifest& manifest) {
    json params;
    switch (manifest.protocol.variant) {
        case SplitProtocol::Variant::Commutativity:
        case SplitProtocol::Variant::RandomPair:
            params["train_fraction"] = manifest.protocol.train_fraction;
            break;
        case SplitProtocol::Variant::UniformRandom:
            params["test_fraction"] = manifest.protocol.test_fraction;
            break;
        case SplitProtocol::Variant::IntegerExclusion: {
            json ivs = json::array();
            for (const auto& iv : manifest.protocol.intervals) {
                ivs.push_back({iv.lo, iv.hi});
            }
            params["intervals"] = ivs;
            break;
        }
    }
    auto key_array = [&](Role role) {
        json arr = json::array();
        for (const auto& k : manifest.keys_with(role)) {
            arr.push_back({k.n, k.m});
        }
        return arr;
    };
    json doc;
    doc["schema_version"] = 1;
    doc["n_max"] = manifest.n_max;
    doc["protocol"] = {{"name", manifest.protocol.name()},
                       {"params", params}};
    doc["seed"] = manifest.seed;
    doc["train"] = key_array(Role::Train);
    doc["test"] = key_array(Role::Test);
    return doc.dump(2) + "\n";
}

SplitManifest manifest_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Defect::schema,
                          std::string("manifest is not valid JSON: ") +
                              e.what());
    }
    try {
        if (doc.at("schema_version").get<int>() != 1) {
            throw FormatError(FormatError::Defect::version_mismatch,
                              "unsupported manifest schema_version");
        }
        SplitManifest m;
        m.n_max = doc.at("n_max").get<int>();
        if (m.n_max < 1) {
            throw FormatError(FormatError::Defect::schema, "bad n_max");
        }
        m.seed = doc.at("seed").get<std::uint64_t>();

        const std::string name = doc.at("protocol").at("name");
        const json& params = doc.at("protocol").at("params");
        if (name == "commutativity") {
            m.protocol.variant = SplitProtocol::Variant::Commutativity;
            m.protocol.train_fraction = params.at("train_fraction");
        } else if (name == "random_pair") {
            m.protocol.variant = SplitProtocol::Variant::RandomPair;
            m.protocol.train_fraction = params.at("train_fraction");
        } else if (name == "uniform_random") {
            m.protocol.variant = SplitProtocol::Variant::UniformRandom;
            m.protocol.test_fraction = params.at("test_fraction");
        } else if (name == "integer_exclusion") {
            m.protocol.variant = SplitProtocol::Variant::IntegerExclusion;
            for (const auto& iv : params.at("intervals")) {
                m.protocol.intervals.push_back(
                    {iv.at(0).get<int>(), iv.at(1).get<int>()});
            }
        } else {
            throw FormatError(FormatError::Defect::schema,
                              "unknown protocol name: " + name);
        }

        const std::size_t side = static_cast<std::size_t>(m.n_max) + 1;
        m.assignment.assign(side * side, Role::Train);
        std::vector<bool> seen(side * side, false);
        auto absorb = [&](const json& arr, Role role) {
            for (const auto& e : arr) {
                const int n = e.at(0).get<int>();
                const int mm = e.at(1).get<int>();
                if (n < 0 || n > m.n_max || mm < 0 || mm > m.n_max) {
                    throw FormatError(FormatError::Defect::schema,
                                      "key (" + std::to_string(n) + "," +
                                          std::to_string(mm) +
                                          ") outside [0,N]^2");
                }
                const std::size_t idx =
                    static_cast<std::size_t>(n) * side + mm;
                if (seen[idx]) {
                    throw FormatError(FormatError::Defect::schema,
                                      "duplicate key (" + std::to_string(n) +
                                          "," + std::to_string(mm) + ")");
                }
                seen[idx] = true;
                m.assignment[idx] = role;
            }
        };
        absorb(doc.at("train"), Role::Train);
        absorb(doc.at("test"), Role::Test);
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (!seen[i]) {
                throw FormatError(
                    FormatError::Defect::schema,
                    "incomplete cover: key (" +
                        std::to_string(i / side) + "," +
                        std::to_string(i % side) + ") missing");
            }
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Defect::schema,
                          std::string("manifest schema mismatch: ") +
                              e.what());
    }
}

void save_manifest(const SplitManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open for writing: " + path);
    }
    out << manifest_to_json(manifest);
    if (!out) {
        throw Error("write failed: " + path);
    }
}

SplitManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open file: " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return manifest_from_json(text);
}

std::vector<Interval> parse_intervals(const std::string& text) {
    std::vector<Interval> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string item = text.substr(
            pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!item.empty()) {
            std::size_t dash = item.find('-');
            try {
                if (dash == std::string::npos) {
                    int v = std::stoi(item);
                    out.push_back({v, v});
                } else {
                    out.push_back({std::stoi(item.substr(0, dash)),
                                   std::stoi(item.substr(dash + 1))});
                }
            } catch (const std::exception&) {
                throw ConfigError("cannot parse interval list item '" + item +
                                  "'");
            }
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) {
        throw ConfigError("empty interval list");
    }
    return out;
}

}  // namespace addlab
