#ifndef ADDLAB_ANALYSIS_HPP
#define ADDLAB_ANALYSIS_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "addlab/training.hpp"

namespace addlab {

enum class CellState : std::uint8_t {
    TrainRight,
    TrainWrong,
    TestRight,
    TestWrong,
};

/// (N+1)x(N+1) grid of per-key outcomes from one trial.
struct LearningMap {
    int n_max = 0;
    std::vector<CellState> cells;  // canonical (n, m) index order

    CellState at(const AdditionKey& key) const {
        return cells[static_cast<std::size_t>(key.n) * (n_max + 1) + key.m];
    }

    std::size_t count(CellState s) const;
};

LearningMap learning_map(const SplitManifest& manifest,
                         const TrialResult& trial);

/// Renders the map as a PPM (P6) with one cell_size x cell_size block per
/// cell; n grows rightward, m grows upward (origin bottom-left).
/// Colors: TrainRight grey, TrainWrong red, TestRight light blue,
/// TestWrong dark blue.
void render_map(const LearningMap& map, const std::string& path,
                int cell_size = 4);

/// Test errors accumulated over trials, bucketed by true label.
struct ErrorHistogram {
    int n_max = 0;
    int trials = 0;
    std::vector<std::int64_t> counts;  // indexed by label, 0..2N

    std::int64_t total() const;
};

ErrorHistogram error_histogram(const std::vector<TrialResult>& trials,
                               int n_max);

std::string histogram_csv(const ErrorHistogram& hist);

/// Signed prediction offsets of wrong test answers; the -10 bucket is the
/// carry failure signature.
struct CarryReport {
    std::int64_t total_errors = 0;
    std::map<int, std::int64_t> diff_histogram;  // (predicted - true) -> count
    std::int64_t lost_ten = 0;
};

CarryReport carry_loss_report(const TrialResult& trial);

std::string carry_report_to_json(const CarryReport& report);

/// Full probability spectrum of one key under a trained checkpoint.
struct ProbeReport {
    AdditionKey key;
    int label = 0;
    int true_rank = 0;  // 0 = the true label got the highest probability
    std::vector<std::pair<int, float>> ranking;  // all classes, descending
};

ProbeReport probe(const Checkpoint& ckpt, const ImageSet& set,
                  const AdditionKey& key);

std::string probe_to_json(const ProbeReport& report);
/// Fig-style text table of the top k rows.
std::string probe_table(const ProbeReport& report, int k);

struct CoverageRow {
    int label = 0;
    std::vector<AdditionKey> train_combos;
    int class_total = 0;  // class_size(label)
    double ratio = 0.0;
    bool zero_coverage = false;
};

/// Which combinations of each class survive in the training side.
std::vector<CoverageRow> class_coverage(const SplitManifest& manifest);

std::string coverage_to_json(const std::vector<CoverageRow>& rows);

struct SweepRow {
    double fraction = 0.0;     // requested training fraction
    double train_ratio = 0.0;  // realized |train| / |set|
    double test_ratio = 0.0;
    double mean_test_top1 = 0.0;  // NaN when the test side is empty
};

/// Runs T trials per fraction under the protocol family (train fraction for
/// commutativity / random pair; 1 - fraction becomes the uniform test
/// fraction) and tabulates mean test accuracy.
std::vector<SweepRow> sweep_train_fraction(
    const ImageSet& set, SplitProtocol::Variant family,
    const std::vector<double>& fractions, const NetworkSpec& spec,
    const TrainConfig& cfg, int trials);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Smallest swept fraction whose mean test accuracy reaches the target.
std::optional<double> find_min_fraction(const std::vector<SweepRow>& rows,
                                        double target_acc);

}  // namespace addlab

#endif
