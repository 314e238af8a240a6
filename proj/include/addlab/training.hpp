#ifndef ADDLAB_TRAINING_HPP
#define ADDLAB_TRAINING_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "addlab/dataset.hpp"
#include "addlab/network.hpp"
#include "addlab/splits.hpp"

namespace addlab {

struct EarlyStop {
    double train_acc_target = 1.0;
    int patience = 3;  // consecutive epochs at the target before stopping
};

struct OptimizerConfig {
    enum class Kind { SGD, Adam };

    Kind kind = Kind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;  // SGD
    double beta1 = 0.9;     // Adam
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    OptimizerConfig optimizer;
    std::uint64_t seed = 1;
    bool deterministic = true;
    std::optional<EarlyStop> early_stop = EarlyStop{};
};

std::string train_config_to_json(const TrainConfig& cfg);
std::uint32_t train_config_digest(const TrainConfig& cfg);

struct Checkpoint {
    NetworkSpec spec;
    Parameters params;
    int n_max = 0;
    std::uint32_t render_digest = 0;        // content digest of the image set
    std::uint32_t config_digest = 0;        // digest of the train config
    int epoch = 0;                          // epochs actually run
};

struct Prediction {
    AdditionKey key;
    Role role = Role::Train;
    int label = 0;
    int predicted = 0;
    float p_top1 = 0.0f;
    std::uint32_t prob_digest = 0;  // CRC32 of the probability vector bytes

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;       // mean batch loss over the epoch
    double train_acc = 0.0;  // top-1 on the training set after the epoch

    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

/// Everything one trained network said about the closed set.
struct TrialResult {
    std::uint64_t seed = 0;
    int epochs_run = 0;
    std::vector<Prediction> predictions;  // canonical key order, covers the set
    double train_top1 = 0.0;
    double test_top1 = 0.0;  // NaN when the test side is empty
    std::vector<EpochStats> history;

    friend bool operator==(const TrialResult&, const TrialResult&) = default;
};

/// Minibatch-optimizes the spec on the manifest's training side only and
/// returns the checkpoint plus predictions for every key of the set.
/// Throws DivergenceError on a non-finite loss.
std::pair<Checkpoint, TrialResult> train(const ImageSet& set,
                                         const SplitManifest& manifest,
                                         const NetworkSpec& spec,
                                         const TrainConfig& cfg);

/// Network input for one stored pixel: ink maps to 1, background to 0.
/// A bright constant background would otherwise dominate every activation
/// and stall the optimizer, so inputs are ink-weighted regardless of the
/// set's palette.
inline float pixel_to_input(std::uint8_t v, const RenderConfig& cfg) {
    return static_cast<float>(static_cast<int>(v) - cfg.background) /
           (static_cast<int>(cfg.ink) - cfg.background);
}

struct EvalRow {
    AdditionKey key;
    int predicted = 0;
    bool correct = false;
    float p_top1 = 0.0f;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    double accuracy = 0.0;
};

/// Batch inference over the given keys. The checkpoint must have been
/// trained on a set with the same content digest. Throws on an empty key
/// list.
EvalResult evaluate(const Checkpoint& ckpt, const ImageSet& set,
                    const std::vector<AdditionKey>& keys);

struct TrialsOutcome {
    std::vector<TrialResult> trials;
    std::vector<SplitManifest> manifests;  // one per trial
    double mean_test_top1 = 0.0;
    double min_test_top1 = 0.0;
    double max_test_top1 = 0.0;
};

/// Runs T independent trials; trial t derives its seed from cfg.seed via
/// SplitMix64 and uses it for both split resampling (when the protocol is
/// randomized) and parameter init.
TrialsOutcome run_trials(const ImageSet& set, const SplitProtocol& protocol,
                         const NetworkSpec& spec, const TrainConfig& cfg,
                         int trials);

// Checkpoint container: magic "ADDN", u16 version, u32 JSON header length,
// JSON header {spec, n_max, render_digest, train_config_digest, epoch},
// per-parameter u8 rank + u32 dims + f32 little-endian values, CRC32 tail.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// CSV: trial,seed,epochs_run,train_top1,test_top1
std::string trials_csv(const TrialsOutcome& outcome);

/// JSON per-example prediction dump for one trial.
std::string predictions_to_json(const TrialResult& trial, int n_max);

/// Parses a prediction dump back; n_max is returned through the out
/// parameter. History and probability digests are not part of the dump.
TrialResult predictions_from_json(const std::string& text, int* n_max);

}  // namespace addlab

#endif
