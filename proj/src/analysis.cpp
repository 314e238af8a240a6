#include "addlab/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <json.hpp>

#include "addlab/errors.hpp"
#include "addlab/image.hpp"

namespace addlab {

namespace {

using nlohmann::json;

// TrainRight, TrainWrong, TestRight, TestWrong
constexpr std::array<std::array<std::uint8_t, 3>, 4> kMapColors = {{
    {200, 200, 200},
    {255, 0, 0},
    {135, 206, 250},
    {0, 0, 139},
}};

std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

void require_cover(const TrialResult& trial, int n_max,
                   const std::string& what) {
    const std::size_t side = static_cast<std::size_t>(n_max) + 1;
    if (trial.predictions.size() != side * side) {
        throw ConfigError(what + ": trial does not cover the closed set (" +
                          std::to_string(trial.predictions.size()) + " of " +
                          std::to_string(side * side) + " keys)");
    }
    for (std::size_t i = 0; i < trial.predictions.size(); ++i) {
        const AdditionKey& k = trial.predictions[i].key;
        if (static_cast<std::size_t>(k.n) * side + k.m != i) {
            throw ConfigError(what + ": predictions are not in canonical "
                                     "key order");
        }
    }
}

}  // namespace

std::size_t LearningMap::count(CellState s) const {
    return static_cast<std::size_t>(
        std::count(cells.begin(), cells.end(), s));
}

LearningMap learning_map(const SplitManifest& manifest,
                         const TrialResult& trial) {
    require_cover(trial, manifest.n_max, "learning_map");
    LearningMap map;
    map.n_max = manifest.n_max;
    map.cells.resize(trial.predictions.size());
    for (std::size_t i = 0; i < trial.predictions.size(); ++i) {
        const Prediction& p = trial.predictions[i];
        if (manifest.role_of(p.key) != p.role) {
            throw ConfigError("learning_map: trial roles disagree with the "
                              "manifest");
        }
        const bool right = p.predicted == p.label;
        map.cells[i] = p.role == Role::Train
                           ? (right ? CellState::TrainRight
                                    : CellState::TrainWrong)
                           : (right ? CellState::TestRight
                                    : CellState::TestWrong);
    }
    return map;
}

void render_map(const LearningMap& map, const std::string& path,
                int cell_size) {
    if (cell_size < 1) {
        throw ConfigError("render_map: cell_size must be positive");
    }
    const int side = map.n_max + 1;
    const int wh = side * cell_size;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(wh) * wh * 3);
    for (int py = 0; py < wh; ++py) {
        const int m = map.n_max - py / cell_size;  // row 0 encodes m = N
        for (int px = 0; px < wh; ++px) {
            const int n = px / cell_size;
            const auto& color =
                kMapColors[static_cast<int>(map.at({n, m}))];
            const std::size_t o =
                (static_cast<std::size_t>(py) * wh + px) * 3;
            rgb[o] = color[0];
            rgb[o + 1] = color[1];
            rgb[o + 2] = color[2];
        }
    }
    write_ppm(path, wh, wh, rgb);
}

std::int64_t ErrorHistogram::total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

ErrorHistogram error_histogram(const std::vector<TrialResult>& trials,
                               int n_max) {
    if (trials.empty()) {
        throw ConfigError("error_histogram: no trials");
    }
    ErrorHistogram hist;
    hist.n_max = n_max;
    hist.trials = static_cast<int>(trials.size());
    hist.counts.assign(2 * n_max + 1, 0);
    for (const auto& trial : trials) {
        require_cover(trial, n_max, "error_histogram");
        for (const auto& p : trial.predictions) {
            if (p.role == Role::Test && p.predicted != p.label) {
                ++hist.counts[p.label];
            }
        }
    }
    return hist;
}

std::string histogram_csv(const ErrorHistogram& hist) {
    std::string csv = "label,count\n";
    for (std::size_t k = 0; k < hist.counts.size(); ++k) {
        csv += std::to_string(k) + "," + std::to_string(hist.counts[k]) +
               "\n";
    }
    return csv;
}

CarryReport carry_loss_report(const TrialResult& trial) {
    CarryReport report;
    for (const auto& p : trial.predictions) {
        if (p.role != Role::Test || p.predicted == p.label) continue;
        ++report.total_errors;
        ++report.diff_histogram[p.predicted - p.label];
    }
    auto it = report.diff_histogram.find(-10);
    report.lost_ten = it == report.diff_histogram.end() ? 0 : it->second;
    return report;
}

std::string carry_report_to_json(const CarryReport& report) {
    json diffs = json::array();
    for (const auto& [diff, count] : report.diff_histogram) {
        diffs.push_back({diff, count});
    }
    json doc = {{"total_errors", report.total_errors},
                {"lost_ten", report.lost_ten},
                {"diffs", diffs}};
    return doc.dump(2) + "\n";
}

ProbeReport probe(const Checkpoint& ckpt, const ImageSet& set,
                  const AdditionKey& key) {
    if (!set.contains(key)) {
        throw ConfigError("probe: key (" + std::to_string(key.n) + "," +
                          std::to_string(key.m) + ") outside the image set");
    }
    EvalResult eval = evaluate(ckpt, set, {key});
    // evaluate checked the digest; now fetch the full spectrum
    const Example& ex = set.at(key);
    Tensor batch({1, 1, ex.image.height, ex.image.width});
    for (std::size_t i = 0; i < ex.image.pixels.size(); ++i) {
        batch.data[i] = pixel_to_input(ex.image.pixels[i], set.render_cfg);
    }
    Tensor logits = forward(ckpt.spec, ckpt.params, batch);
    ProbeReport report;
    report.key = key;
    report.label = label_of(key);
    report.ranking = predict_topk(
        std::span<const float>(logits.data.data(), logits.data.size()),
        static_cast<int>(logits.data.size()));
    for (std::size_t i = 0; i < report.ranking.size(); ++i) {
        if (report.ranking[i].first == report.label) {
            report.true_rank = static_cast<int>(i);
            break;
        }
    }
    (void)eval;
    return report;
}

std::string probe_to_json(const ProbeReport& report) {
    json ranking = json::array();
    for (const auto& [cls, p] : report.ranking) {
        ranking.push_back({cls, p});
    }
    json doc = {{"key", {report.key.n, report.key.m}},
                {"label", report.label},
                {"true_rank", report.true_rank},
                {"ranking", ranking}};
    return doc.dump() + "\n";
}

std::string probe_table(const ProbeReport& report, int k) {
    const int rows = std::min<int>(k, static_cast<int>(report.ranking.size()));
    std::string out = "probe " + std::to_string(report.key.n) + "+" +
                      std::to_string(report.key.m) + " (label " +
                      std::to_string(report.label) + ", rank " +
                      std::to_string(report.true_rank) + ")\n";
    out += "class,probability\n";
    for (int i = 0; i < rows; ++i) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%d,%.7f\n",
                      report.ranking[i].first,
                      static_cast<double>(report.ranking[i].second));
        out += buf;
    }
    return out;
}

std::vector<CoverageRow> class_coverage(const SplitManifest& manifest) {
    const int n_max = manifest.n_max;
    std::vector<CoverageRow> rows(2 * n_max + 1);
    for (int k = 0; k <= 2 * n_max; ++k) {
        rows[k].label = k;
        rows[k].class_total = class_size(k, n_max);
    }
    for (const auto& key : manifest.keys_with(Role::Train)) {
        rows[label_of(key)].train_combos.push_back(key);
    }
    for (auto& row : rows) {
        row.ratio =
            static_cast<double>(row.train_combos.size()) / row.class_total;
        row.zero_coverage = row.train_combos.empty();
    }
    return rows;
}

std::string coverage_to_json(const std::vector<CoverageRow>& rows) {
    json arr = json::array();
    for (const auto& row : rows) {
        json combos = json::array();
        for (const auto& k : row.train_combos) {
            combos.push_back({k.n, k.m});
        }
        arr.push_back({{"label", row.label},
                       {"train_combos", combos},
                       {"class_size", row.class_total},
                       {"ratio", row.ratio},
                       {"zero_coverage", row.zero_coverage}});
    }
    return json({{"classes", arr}}).dump() + "\n";
}

std::vector<SweepRow> sweep_train_fraction(
    const ImageSet& set, SplitProtocol::Variant family,
    const std::vector<double>& fractions, const NetworkSpec& spec,
    const TrainConfig& cfg, int trials) {
    if (!std::is_sorted(fractions.begin(), fractions.end())) {
        throw ConfigError("sweep: fractions must be sorted ascending");
    }
    std::vector<SweepRow> rows;
    for (double f : fractions) {
        SplitProtocol protocol;
        protocol.variant = family;
        switch (family) {
            case SplitProtocol::Variant::Commutativity:
            case SplitProtocol::Variant::RandomPair:
                protocol.train_fraction = f;
                break;
            case SplitProtocol::Variant::UniformRandom:
                protocol.test_fraction = 1.0 - f;
                break;
            case SplitProtocol::Variant::IntegerExclusion:
                throw ConfigError(
                    "sweep: integer exclusion has no train fraction");
        }
        TrialsOutcome outcome = run_trials(set, protocol, spec, cfg, trials);
        SweepRow row;
        row.fraction = f;
        row.train_ratio =
            static_cast<double>(outcome.manifests[0].count(Role::Train)) /
            set.size();
        row.test_ratio =
            static_cast<double>(outcome.manifests[0].count(Role::Test)) /
            set.size();
        row.mean_test_top1 = outcome.mean_test_top1;
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string csv = "fraction,train_ratio,test_ratio,mean_test_top1\n";
    for (const auto& row : rows) {
        csv += fmt_double(row.fraction) + "," +
               fmt_double(row.train_ratio) + "," +
               fmt_double(row.test_ratio) + "," +
               fmt_double(row.mean_test_top1) + "\n";
    }
    return csv;
}

std::optional<double> find_min_fraction(const std::vector<SweepRow>& rows,
                                        double target_acc) {
    for (const auto& row : rows) {
        if (!std::isnan(row.mean_test_top1) &&
            row.mean_test_top1 >= target_acc) {
            return row.fraction;
        }
    }
    return std::nullopt;
}

}  // namespace addlab
