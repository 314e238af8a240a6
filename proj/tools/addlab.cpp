// addlab: synthesize addition-formula image sets, split them, train the
// small CNN, and run the generalization analyses — every subcommand writes
// a run manifest beside its outputs so runs can be reproduced and audited.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "addlab/analysis.hpp"
#include "addlab/crc32.hpp"
#include "addlab/errors.hpp"
#include "addlab/parallel.hpp"
#include "addlab/rng.hpp"
#include "addlab/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace addlab;

namespace {

constexpr const char* kArtifactVersion = "addlab 1.0.0";

using Clock = std::chrono::steady_clock;

std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", v);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw Error("cannot open for writing: " + tmp.string());
        }
        out << text;
        if (!out) {
            throw Error("write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open file: " + path.string());
    }
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

/// Book-keeping for one command invocation; flushed as the run manifest.
struct RunLog {
    std::string command;
    json config = json::object();
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    Clock::time_point start = Clock::now();

    void note_input(const std::string& path) { inputs.push_back(path); }
    void note_output(const std::string& path) { outputs.push_back(path); }

    /// Writes <beside>.run.json (or <beside>/run_manifest.json for a
    /// directory) listing config digest and per-file checksums.
    void flush(const fs::path& beside, bool is_dir) const {
        json digest_list = json::array();
        for (const auto& p : inputs) {
            digest_list.push_back(
                {{"path", p}, {"crc32", hex32(crc32_file(p))}});
        }
        json out_list = json::array();
        for (const auto& p : outputs) {
            out_list.push_back(
                {{"path", p}, {"crc32", hex32(crc32_file(p))}});
        }
        const double ms = std::chrono::duration<double, std::milli>(
                              Clock::now() - start)
                              .count();
        json doc = {{"artifact_version", kArtifactVersion},
                    {"command", command},
                    {"config", config},
                    {"config_digest", hex32(crc32(config.dump()))},
                    {"seeds", seeds},
                    {"inputs", digest_list},
                    {"outputs", out_list},
                    {"wall_clock_ms", ms}};
        const fs::path path = is_dir ? beside / "run_manifest.json"
                                     : fs::path(beside.string() +
                                                ".run.json");
        write_text_atomic(path, doc.dump(2) + "\n");
    }
};

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

// ---------- shared option bundles ----------

struct RenderFlags {
    int size = 64;
    int margin = -1;  // -1: derived from size
    int gap = 1;
    int ink = 0;
    int background = 255;
    int scale = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--size", size, "canvas width and height")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--margin", margin,
                        "border pixels (default size/28, at least 1)");
        cmd->add_option("--gap", gap, "glyph-columns between glyphs");
        cmd->add_option("--ink", ink, "ink pixel value")
            ->check(CLI::Range(0, 255));
        cmd->add_option("--background", background, "background pixel value")
            ->check(CLI::Range(0, 255));
        cmd->add_option("--scale", scale,
                        "integer glyph scale (0 = fit automatically)");
    }

    RenderConfig config() const {
        RenderConfig cfg = RenderConfig::preset(size);
        if (margin >= 0) cfg.margin = margin;
        cfg.gap_cells = gap;
        cfg.ink = static_cast<std::uint8_t>(ink);
        cfg.background = static_cast<std::uint8_t>(background);
        cfg.scale = scale;
        return cfg;
    }

    json to_json() const {
        RenderConfig cfg = config();
        return {{"size", size},        {"margin", cfg.margin},
                {"gap", cfg.gap_cells}, {"ink", ink},
                {"background", background}, {"scale", scale}};
    }
};

struct ProtocolFlags {
    std::string protocol;
    double train_frac = 0.5;
    double test_frac = 0.2;
    std::string intervals;

    void attach(CLI::App* cmd) {
        cmd->add_option("--protocol", protocol,
                        "commutativity | random-pair | uniform | exclusion")
            ->required()
            ->check(CLI::IsMember(
                {"commutativity", "random-pair", "uniform", "exclusion"}));
        cmd->add_option("--train-frac", train_frac,
                        "training fraction of the whole set");
        cmd->add_option("--test-frac", test_frac,
                        "test fraction (uniform protocol)");
        cmd->add_option("--intervals", intervals,
                        "excluded integers, e.g. 33-37,62-68");
    }

    SplitProtocol build() const {
        SplitProtocol p;
        if (protocol == "commutativity") {
            p.variant = SplitProtocol::Variant::Commutativity;
            p.train_fraction = train_frac;
        } else if (protocol == "random-pair") {
            p.variant = SplitProtocol::Variant::RandomPair;
            p.train_fraction = train_frac;
        } else if (protocol == "uniform") {
            p.variant = SplitProtocol::Variant::UniformRandom;
            p.test_fraction = test_frac;
        } else {
            p.variant = SplitProtocol::Variant::IntegerExclusion;
            p.intervals = parse_intervals(intervals);
        }
        return p;
    }

    json to_json() const {
        json j = {{"protocol", protocol}};
        if (protocol == "uniform") {
            j["test_frac"] = test_frac;
        } else if (protocol == "exclusion") {
            j["intervals"] = intervals;
        } else {
            j["train_frac"] = train_frac;
        }
        return j;
    }
};

struct TrainFlags {
    int epochs = 50;
    int batch = 32;
    std::string optimizer = "adam";
    double lr = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    bool nondeterministic = false;
    bool no_early_stop = false;
    double stop_target = 1.0;
    int stop_patience = 3;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
        cmd->add_option("--batch", batch)->check(CLI::PositiveNumber);
        cmd->add_option("--optimizer", optimizer)
            ->check(CLI::IsMember({"adam", "sgd"}));
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--momentum", momentum, "SGD momentum");
        cmd->add_option("--beta1", beta1);
        cmd->add_option("--beta2", beta2);
        cmd->add_option("--adam-eps", adam_eps);
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_flag("--nondeterministic", nondeterministic,
                      "do not pin reduction order");
        cmd->add_flag("--no-early-stop", no_early_stop);
        cmd->add_option("--stop-target", stop_target,
                        "train accuracy that arms early stopping");
        cmd->add_option("--stop-patience", stop_patience,
                        "epochs the target must be sustained");
    }

    TrainConfig config() const {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.optimizer.kind = optimizer == "sgd" ? OptimizerConfig::Kind::SGD
                                                : OptimizerConfig::Kind::Adam;
        cfg.optimizer.lr = lr;
        cfg.optimizer.momentum = momentum;
        cfg.optimizer.beta1 = beta1;
        cfg.optimizer.beta2 = beta2;
        cfg.optimizer.eps = adam_eps;
        cfg.seed = seed;
        cfg.deterministic = !nondeterministic;
        if (no_early_stop) {
            cfg.early_stop.reset();
        } else {
            cfg.early_stop = EarlyStop{stop_target, stop_patience};
        }
        return cfg;
    }

    json to_json() const {
        return json::parse(train_config_to_json(config()));
    }
};

NetworkSpec default_arch(const ImageSet& set) {
    return small_cnn(set.render_cfg.width, set.class_count());
}

ImageSet load_omega(RunLog& log, const std::string& path) {
    log.note_input(path);
    return read_packed(path);
}

// ---------- subcommand payloads ----------

int cmd_gen(RunLog& log, int n_max, const RenderFlags& rf,
            const std::string& out) {
    ImageSet set = build_image_set(n_max, rf.config());
    write_packed(set, out);
    log.note_output(out);
    log.flush(out, false);
    std::cout << "wrote " << out << ": " << set.size() << " records, N="
              << n_max << ", classes 0.." << 2 * n_max << "\n";
    return 0;
}

int cmd_render(RunLog& log, int n, int m, int n_max, const RenderFlags& rf,
               const std::string& out) {
    const int limit = n_max >= 0 ? n_max : std::max(n, m);
    Image img = render_formula({n, m}, rf.config(), limit);
    write_pgm(out, img);
    log.note_output(out);
    log.flush(out, false);
    std::cout << "wrote " << out << " (" << img.width << "x" << img.height
              << ")\n";
    return 0;
}

int cmd_split(RunLog& log, const std::string& omega_path,
              const ProtocolFlags& pf, std::uint64_t seed,
              const std::string& out) {
    ImageSet set = load_omega(log, omega_path);
    SplitManifest manifest = make_split(set, pf.build(), seed);
    save_manifest(manifest, out);
    log.seeds.push_back(seed);
    log.note_output(out);
    log.flush(out, false);
    std::cout << "wrote " << out << ": train " << manifest.count(Role::Train)
              << ", test " << manifest.count(Role::Test) << "\n";
    return 0;
}

int cmd_train(RunLog& log, const std::string& omega_path,
              const std::string& split_path, const TrainFlags& tf,
              const std::string& ckpt_out, const std::string& csv_out,
              const std::string& pred_out) {
    ImageSet set = load_omega(log, omega_path);
    log.note_input(split_path);
    SplitManifest manifest = load_manifest(split_path);
    NetworkSpec spec = default_arch(set);
    TrainConfig cfg = tf.config();
    log.seeds.push_back(cfg.seed);

    auto [ckpt, result] = train(set, manifest, spec, cfg);
    save_checkpoint(ckpt, ckpt_out);
    log.note_output(ckpt_out);
    if (!csv_out.empty()) {
        TrialsOutcome one;
        one.trials.push_back(result);
        write_text_atomic(csv_out, trials_csv(one));
        log.note_output(csv_out);
    }
    if (!pred_out.empty()) {
        write_text_atomic(pred_out, predictions_to_json(result, set.n_max));
        log.note_output(pred_out);
    }
    log.flush(ckpt_out, false);
    std::cout << "epochs " << result.epochs_run << ", train_top1 "
              << result.train_top1 << ", test_top1 " << result.test_top1
              << "\n";
    return 0;
}

int cmd_eval(RunLog& log, const std::string& ckpt_path,
             const std::string& omega_path, const std::string& split_path,
             const std::string& role, const std::string& out) {
    log.note_input(ckpt_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ImageSet set = load_omega(log, omega_path);

    std::vector<AdditionKey> keys;
    if (role == "all") {
        for (const auto& ex : set.examples) keys.push_back(ex.key);
    } else {
        if (split_path.empty()) {
            throw ConfigError("--split is required for --keys train|test");
        }
        log.note_input(split_path);
        SplitManifest manifest = load_manifest(split_path);
        keys = manifest.keys_with(role == "train" ? Role::Train : Role::Test);
    }
    EvalResult eval = evaluate(ckpt, set, keys);
    if (!out.empty()) {
        std::string csv = "n,m,label,predicted,correct,p_top1\n";
        for (const auto& row : eval.rows) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%d,%.7f\n",
                          row.key.n, row.key.m, label_of(row.key),
                          row.predicted, row.correct ? 1 : 0,
                          static_cast<double>(row.p_top1));
            csv += buf;
        }
        write_text_atomic(out, csv);
        log.note_output(out);
        log.flush(out, false);
    }
    std::cout << "keys " << keys.size() << ", accuracy " << eval.accuracy
              << "\n";
    return 0;
}

void write_trials_artifacts(RunLog& log, const fs::path& dir,
                            const ImageSet& set, const TrialsOutcome& outcome,
                            const SplitProtocol& protocol) {
    fs::create_directories(dir);
    const std::string csv_path = (dir / "trials.csv").string();
    write_text_atomic(csv_path, trials_csv(outcome));
    log.note_output(csv_path);
    for (std::size_t t = 0; t < outcome.trials.size(); ++t) {
        const std::string split_path =
            (dir / ("split_" + std::to_string(t) + ".json")).string();
        save_manifest(outcome.manifests[t], split_path);
        log.note_output(split_path);
        const std::string pred_path =
            (dir / ("pred_" + std::to_string(t) + ".json")).string();
        write_text_atomic(pred_path,
                          predictions_to_json(outcome.trials[t], set.n_max));
        log.note_output(pred_path);
    }
    json agg = {{"trials", outcome.trials.size()},
                {"protocol", outcome.manifests[0].protocol.name()},
                {"n_max", set.n_max},
                {"mean_test_top1", outcome.mean_test_top1},
                {"min_test_top1", outcome.min_test_top1},
                {"max_test_top1", outcome.max_test_top1}};
    (void)protocol;
    const std::string agg_path = (dir / "aggregate.json").string();
    write_text_atomic(agg_path, agg.dump(2) + "\n");
    log.note_output(agg_path);
}

int cmd_trials(RunLog& log, const std::string& omega_path,
               const ProtocolFlags& pf, const TrainFlags& tf, int count,
               const std::string& out_dir, bool save_ckpts) {
    ImageSet set = load_omega(log, omega_path);
    NetworkSpec spec = default_arch(set);
    TrainConfig cfg = tf.config();
    SplitProtocol protocol = pf.build();
    for (int t = 0; t < count; ++t) {
        log.seeds.push_back(derive_seed(cfg.seed, t));
    }
    TrialsOutcome outcome = run_trials(set, protocol, spec, cfg, count);
    const fs::path dir(out_dir);
    write_trials_artifacts(log, dir, set, outcome, protocol);
    if (save_ckpts) {
        // re-train would be wasteful; checkpoints come from the trial runs
        // only when requested at this level, so re-derive them
        for (int t = 0; t < count; ++t) {
            TrainConfig trial_cfg = cfg;
            trial_cfg.seed = derive_seed(cfg.seed, t);
            auto [ckpt, result] =
                train(set, outcome.manifests[t], spec, trial_cfg);
            const std::string p =
                (dir / ("ckpt_" + std::to_string(t) + ".bin")).string();
            save_checkpoint(ckpt, p);
            log.note_output(p);
        }
    }
    log.flush(dir, true);
    std::cout << "trials " << count << ", mean test_top1 "
              << outcome.mean_test_top1 << " (min " << outcome.min_test_top1
              << ", max " << outcome.max_test_top1 << ")\n";
    return 0;
}

int cmd_sweep(RunLog& log, const std::string& omega_path,
              const std::string& family, const std::string& fractions_text,
              const TrainFlags& tf, int count, const std::string& out,
              double target_acc) {
    ImageSet set = load_omega(log, omega_path);
    NetworkSpec spec = default_arch(set);
    TrainConfig cfg = tf.config();
    log.seeds.push_back(cfg.seed);

    SplitProtocol::Variant variant;
    if (family == "commutativity") {
        variant = SplitProtocol::Variant::Commutativity;
    } else if (family == "random-pair") {
        variant = SplitProtocol::Variant::RandomPair;
    } else {
        variant = SplitProtocol::Variant::UniformRandom;
    }
    std::vector<double> fractions;
    for (const auto& item : CLI::detail::split(fractions_text, ',')) {
        fractions.push_back(std::stod(item));
    }
    auto rows = sweep_train_fraction(set, variant, fractions, spec, cfg,
                                     count);
    write_text_atomic(out, sweep_csv(rows));
    log.note_output(out);

    if (target_acc > 0) {
        auto found = find_min_fraction(rows, target_acc);
        json summary = {{"target_acc", target_acc},
                        {"min_fraction", found ? json(*found) : json()}};
        const std::string summary_path =
            out.substr(0, out.find_last_of('.')) + "_summary.json";
        write_text_atomic(summary_path, summary.dump(2) + "\n");
        log.note_output(summary_path);
        std::cout << "min fraction for >= " << target_acc << ": "
                  << (found ? std::to_string(*found) : "none") << "\n";
    }
    log.flush(out, false);
    return 0;
}

int cmd_map(RunLog& log, const std::string& split_path,
            const std::string& pred_path, const std::string& out,
            int cell_size) {
    log.note_input(split_path);
    log.note_input(pred_path);
    SplitManifest manifest = load_manifest(split_path);
    int n_max = 0;
    TrialResult trial = predictions_from_json(slurp(pred_path), &n_max);
    if (n_max != manifest.n_max) {
        throw ConfigError("prediction dump N does not match the manifest");
    }
    LearningMap map = learning_map(manifest, trial);
    render_map(map, out, cell_size);
    log.note_output(out);
    log.flush(out, false);
    std::cout << "wrote " << out << ": train wrong "
              << map.count(CellState::TrainWrong) << ", test wrong "
              << map.count(CellState::TestWrong) << "\n";
    return 0;
}

int cmd_hist(RunLog& log, const std::vector<std::string>& pred_paths,
             const std::string& out) {
    std::vector<TrialResult> trials;
    int n_max = -1;
    for (const auto& p : pred_paths) {
        log.note_input(p);
        int nm = 0;
        trials.push_back(predictions_from_json(slurp(p), &nm));
        if (n_max < 0) n_max = nm;
        if (nm != n_max) {
            throw ConfigError("prediction dumps disagree on N");
        }
    }
    ErrorHistogram hist = error_histogram(trials, n_max);
    write_text_atomic(out, histogram_csv(hist));
    log.note_output(out);
    log.flush(out, false);
    std::cout << "wrote " << out << ": " << hist.total()
              << " test errors over " << hist.trials << " trials\n";
    return 0;
}

int cmd_carry(RunLog& log, const std::string& pred_path,
              const std::string& out) {
    log.note_input(pred_path);
    int n_max = 0;
    TrialResult trial = predictions_from_json(slurp(pred_path), &n_max);
    CarryReport report = carry_loss_report(trial);
    write_text_atomic(out, carry_report_to_json(report));
    log.note_output(out);
    log.flush(out, false);
    std::cout << "wrote " << out << ": " << report.total_errors
              << " errors, lost-ten " << report.lost_ten << "\n";
    return 0;
}

int cmd_probe(RunLog& log, const std::string& ckpt_path,
              const std::string& omega_path, int n, int m, int top,
              const std::string& out) {
    log.note_input(ckpt_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ImageSet set = load_omega(log, omega_path);
    ProbeReport report = probe(ckpt, set, {n, m});
    std::cout << probe_table(report, top);
    if (!out.empty()) {
        write_text_atomic(out, probe_to_json(report));
        log.note_output(out);
        log.flush(out, false);
    }
    return 0;
}

int cmd_coverage(RunLog& log, const std::string& split_path,
                 const std::string& out) {
    log.note_input(split_path);
    SplitManifest manifest = load_manifest(split_path);
    auto rows = class_coverage(manifest);
    write_text_atomic(out, coverage_to_json(rows));
    log.note_output(out);
    log.flush(out, false);
    int zero = 0;
    for (const auto& row : rows) zero += row.zero_coverage ? 1 : 0;
    std::cout << "wrote " << out << ": " << zero
              << " zero-coverage classes of " << rows.size() << "\n";
    return 0;
}

int cmd_gradcheck(int seeds, double eps32, double eps64,
                  const std::string& mode) {
    const NetworkSpec spec = toy_spec(8, 3);
    double worst32 = 0.0, worst64 = 0.0;
    for (int s = 0; s < seeds; ++s) {
        if (mode != "64") {
            const double e = grad_check(spec, s + 1, eps32, Precision::f32);
            worst32 = std::max(worst32, e);
            std::cout << "seed " << s + 1 << " f32 max rel err " << e << "\n";
        }
        if (mode != "32") {
            const double e = grad_check(spec, s + 1, eps64, Precision::f64);
            worst64 = std::max(worst64, e);
            std::cout << "seed " << s + 1 << " f64 max rel err " << e << "\n";
        }
    }
    if (mode != "64") std::cout << "worst f32: " << worst32 << "\n";
    if (mode != "32") std::cout << "worst f64: " << worst64 << "\n";
    return 0;
}

// ---------- experiment recipes ----------

struct ReproParams {
    int n_max;
    int size;
    int trials;
};

int cmd_repro(RunLog& log, const std::string& experiment,
              const std::string& scale, std::uint64_t seed,
              std::string out_dir) {
    const bool desk = scale == "desk";
    if (!desk) {
        std::cerr << "warning: --scale full trains on up to 10,000 images "
                     "and can run for hours on a CPU\n";
    }
    if (out_dir.empty()) {
        const json key = {{"experiment", experiment},
                          {"scale", scale},
                          {"seed", seed}};
        out_dir = "runs/" + experiment + "-" + scale + "-" +
                  hex32(crc32(key.dump()));
    }
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    log.seeds.push_back(seed);

    RenderFlags rf;
    rf.size = 64;
    TrainFlags tf;
    tf.seed = seed;

    auto build_set = [&](int n_max) {
        ImageSet set = build_image_set(n_max, rf.config());
        const std::string omega_path =
            (dir / ("omega" + std::to_string(n_max) + ".apack")).string();
        write_packed(set, omega_path);
        log.note_output(omega_path);
        return set;
    };

    auto run_single = [&](const ImageSet& set, const SplitManifest& manifest,
                          const std::string& stem) {
        NetworkSpec spec = default_arch(set);
        TrainConfig cfg = tf.config();
        auto [ckpt, result] = train(set, manifest, spec, cfg);
        const std::string split_path = (dir / (stem + "_split.json")).string();
        save_manifest(manifest, split_path);
        log.note_output(split_path);
        const std::string ckpt_path = (dir / (stem + "_ckpt.bin")).string();
        save_checkpoint(ckpt, ckpt_path);
        log.note_output(ckpt_path);
        const std::string pred_path = (dir / (stem + "_pred.json")).string();
        write_text_atomic(pred_path,
                          predictions_to_json(result, set.n_max));
        log.note_output(pred_path);
        const std::string map_path = (dir / (stem + "_map.ppm")).string();
        render_map(learning_map(manifest, result), map_path);
        log.note_output(map_path);
        return std::make_pair(std::move(ckpt), std::move(result));
    };

    if (experiment == "exp1") {
        // commutativity split, dual images always held out
        const ReproParams p = desk ? ReproParams{29, 64, 3}
                                   : ReproParams{99, 64, 10};
        ImageSet set = build_set(p.n_max);
        NetworkSpec spec = default_arch(set);
        SplitProtocol protocol;
        protocol.variant = SplitProtocol::Variant::Commutativity;
        protocol.train_fraction = 0.5;
        TrainConfig cfg = tf.config();
        TrialsOutcome outcome =
            run_trials(set, protocol, spec, cfg, p.trials);
        write_trials_artifacts(log, dir, set, outcome, protocol);

        const std::string map_path = (dir / "map_trial0.ppm").string();
        render_map(learning_map(outcome.manifests[0], outcome.trials[0]),
                   map_path);
        log.note_output(map_path);

        const std::string hist_path = (dir / "hist.csv").string();
        write_text_atomic(hist_path, histogram_csv(error_histogram(
                                         outcome.trials, set.n_max)));
        log.note_output(hist_path);

        const std::string cov_path = (dir / "coverage_trial0.json").string();
        write_text_atomic(cov_path,
                          coverage_to_json(class_coverage(
                              outcome.manifests[0])));
        log.note_output(cov_path);
        std::cout << "exp1 mean test_top1 " << outcome.mean_test_top1
                  << "\n";
    } else if (experiment == "exp2") {
        // coupled-pair exclusion: how much of the set must be trained
        const ReproParams p = desk ? ReproParams{9, 64, 3}
                                   : ReproParams{29, 64, 10};
        ImageSet set = build_set(p.n_max);
        NetworkSpec spec = default_arch(set);
        const std::vector<double> fractions =
            desk ? std::vector<double>{0.5, 0.7, 0.86}
                 : std::vector<double>{0.5, 0.6, 0.7, 0.8, 0.86};
        auto rows = sweep_train_fraction(
            set, SplitProtocol::Variant::RandomPair, fractions, spec,
            tf.config(), p.trials);
        const std::string sweep_path = (dir / "sweep.csv").string();
        write_text_atomic(sweep_path, sweep_csv(rows));
        log.note_output(sweep_path);
        auto found = find_min_fraction(rows, 0.9);
        json summary = {{"target_acc", 0.9},
                        {"min_fraction", found ? json(*found) : json()}};
        const std::string summary_path = (dir / "sweep_summary.json").string();
        write_text_atomic(summary_path, summary.dump(2) + "\n");
        log.note_output(summary_path);
        std::cout << "exp2 min fraction for 90%: "
                  << (found ? std::to_string(*found) : "none") << "\n";
    } else if (experiment == "exp3") {
        // unconstrained random split: accuracy versus test share
        const ReproParams p = desk ? ReproParams{9, 64, 3}
                                   : ReproParams{29, 64, 10};
        ImageSet set = build_set(p.n_max);
        NetworkSpec spec = default_arch(set);
        const std::vector<double> fractions = {0.2, 0.5, 0.8};
        auto rows = sweep_train_fraction(
            set, SplitProtocol::Variant::UniformRandom, fractions, spec,
            tf.config(), p.trials);
        const std::string sweep_path = (dir / "sweep.csv").string();
        write_text_atomic(sweep_path, sweep_csv(rows));
        log.note_output(sweep_path);
        std::cout << "exp3 rows " << rows.size() << "\n";
    } else if (experiment == "exp4") {
        // one excluded integer is still calculated correctly
        const int n_max = desk ? 29 : 99;
        const int excluded = desk ? 13 : 42;
        ImageSet set = build_set(n_max);
        SplitManifest manifest =
            integer_exclusion_split(set, {{excluded, excluded}});
        auto [ckpt, result] = run_single(set, manifest, "exp4");
        const std::string carry_path = (dir / "exp4_carry.json").string();
        write_text_atomic(carry_path,
                          carry_report_to_json(carry_loss_report(result)));
        log.note_output(carry_path);
        json summary = {{"excluded", excluded},
                        {"train_top1", result.train_top1},
                        {"test_top1", result.test_top1},
                        {"epochs_run", result.epochs_run}};
        const std::string sum_path = (dir / "exp4_summary.json").string();
        write_text_atomic(sum_path, summary.dump(2) + "\n");
        log.note_output(sum_path);
        std::cout << "exp4 excluded-integer test_top1 " << result.test_top1
                  << "\n";
    } else {  // exp5
        // consecutive exclusion: an unseen tens digit collapses the net
        const int n_max = desk ? 29 : 99;
        const Interval stroke = desk ? Interval{20, 29} : Interval{60, 69};
        ImageSet set = build_set(n_max);
        SplitManifest manifest = integer_exclusion_split(set, {stroke});
        auto [ckpt, result] = run_single(set, manifest, "exp5");
        const std::string carry_path = (dir / "exp5_carry.json").string();
        write_text_atomic(carry_path,
                          carry_report_to_json(carry_loss_report(result)));
        log.note_output(carry_path);
        const AdditionKey probe_key =
            desk ? AdditionKey{26, 25} : AdditionKey{66, 65};
        ProbeReport report = probe(ckpt, set, probe_key);
        const std::string probe_path = (dir / "exp5_probe.json").string();
        write_text_atomic(probe_path, probe_to_json(report));
        log.note_output(probe_path);
        std::cout << probe_table(report, 5);
        json summary = {{"interval", {stroke.lo, stroke.hi}},
                        {"train_top1", result.train_top1},
                        {"test_top1", result.test_top1},
                        {"epochs_run", result.epochs_run}};
        const std::string sum_path = (dir / "exp5_summary.json").string();
        write_text_atomic(sum_path, summary.dump(2) + "\n");
        log.note_output(sum_path);
        std::cout << "exp5 collapse-interval test_top1 " << result.test_top1
                  << "\n";
    }

    log.flush(dir, true);
    std::cout << "run directory: " << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"addlab: arithmetic-addition image classification lab"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    unsigned workers = 0;
    if (const char* env = std::getenv("ADDLAB_WORKERS")) {
        workers = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
    }
    app.add_option("--workers", workers,
                   "worker threads (0 = hardware concurrency)");

    RunLog log;
    log.command = join_args(argc, argv);

    // gen
    auto* gen = app.add_subcommand("gen", "build and pack a closed image set");
    int gen_n_max = 9;
    RenderFlags gen_rf;
    std::string gen_out;
    gen->add_option("--n-max", gen_n_max, "maximum integer N")
        ->required()
        ->check(CLI::PositiveNumber);
    gen_rf.attach(gen);
    gen->add_option("--out", gen_out, "output .apack path")->required();

    // render
    auto* render = app.add_subcommand("render",
                                      "rasterize one formula to a PGM");
    int render_n = 0, render_m = 0, render_n_max = -1;
    RenderFlags render_rf;
    std::string render_out;
    render->add_option("--n", render_n)->required();
    render->add_option("--m", render_m)->required();
    render->add_option("--n-max", render_n_max,
                       "scale for this set maximum (default max(n,m))");
    render_rf.attach(render);
    render->add_option("--out", render_out)->required();

    // split
    auto* split = app.add_subcommand("split", "partition a set into "
                                              "train/test");
    std::string split_omega, split_out;
    ProtocolFlags split_pf;
    std::uint64_t split_seed = 1;
    split->add_option("--omega", split_omega, ".apack input")->required();
    split_pf.attach(split);
    split->add_option("--seed", split_seed);
    split->add_option("--out", split_out)->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train on a split");
    std::string train_omega, train_split, train_ckpt, train_csv, train_pred;
    TrainFlags train_tf;
    train_cmd->add_option("--omega", train_omega)->required();
    train_cmd->add_option("--split", train_split)->required();
    train_tf.attach(train_cmd);
    train_cmd->add_option("--ckpt", train_ckpt, "checkpoint output")
        ->required();
    train_cmd->add_option("--csv", train_csv, "single-row trials csv");
    train_cmd->add_option("--pred", train_pred, "prediction dump output");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_omega, eval_split, eval_out;
    std::string eval_role = "all";
    eval_cmd->add_option("--ckpt", eval_ckpt)->required();
    eval_cmd->add_option("--omega", eval_omega)->required();
    eval_cmd->add_option("--split", eval_split);
    eval_cmd->add_option("--keys", eval_role, "all | train | test")
        ->check(CLI::IsMember({"all", "train", "test"}));
    eval_cmd->add_option("--out", eval_out, "per-key csv");

    // trials
    auto* trials_cmd = app.add_subcommand("trials",
                                          "independent repetitions");
    std::string trials_omega, trials_dir;
    ProtocolFlags trials_pf;
    TrainFlags trials_tf;
    int trials_count = 10;
    bool trials_ckpts = false;
    trials_cmd->add_option("--omega", trials_omega)->required();
    trials_pf.attach(trials_cmd);
    trials_tf.attach(trials_cmd);
    trials_cmd->add_option("--trials", trials_count)
        ->check(CLI::PositiveNumber);
    trials_cmd->add_option("--out-dir", trials_dir)->required();
    trials_cmd->add_flag("--save-ckpts", trials_ckpts);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep",
                                         "accuracy vs training fraction");
    std::string sweep_omega, sweep_family = "uniform", sweep_fracs, sweep_out;
    TrainFlags sweep_tf;
    int sweep_count = 3;
    double sweep_target = 0.0;
    sweep_cmd->add_option("--omega", sweep_omega)->required();
    sweep_cmd->add_option("--family", sweep_family,
                          "commutativity | random-pair | uniform")
        ->check(CLI::IsMember({"commutativity", "random-pair", "uniform"}));
    sweep_cmd->add_option("--fractions", sweep_fracs,
                          "ascending training fractions, e.g. 0.5,0.7,0.86")
        ->required();
    sweep_tf.attach(sweep_cmd);
    sweep_cmd->add_option("--trials", sweep_count);
    sweep_cmd->add_option("--target-acc", sweep_target,
                          "also report the smallest fraction reaching this");
    sweep_cmd->add_option("--out", sweep_out)->required();

    // map
    auto* map_cmd = app.add_subcommand("map", "render a learning map");
    std::string map_split, map_pred, map_out;
    int map_cell = 4;
    map_cmd->add_option("--split", map_split)->required();
    map_cmd->add_option("--pred", map_pred)->required();
    map_cmd->add_option("--cell-size", map_cell)->check(CLI::PositiveNumber);
    map_cmd->add_option("--out", map_out)->required();

    // hist
    auto* hist_cmd = app.add_subcommand("hist", "accumulated test-error "
                                                "histogram");
    std::vector<std::string> hist_preds;
    std::string hist_out;
    hist_cmd->add_option("--pred", hist_preds, "prediction dumps")
        ->required()
        ->expected(-1);
    hist_cmd->add_option("--out", hist_out)->required();

    // carry
    auto* carry_cmd = app.add_subcommand("carry", "carry-over failure "
                                                  "report");
    std::string carry_pred, carry_out;
    carry_cmd->add_option("--pred", carry_pred)->required();
    carry_cmd->add_option("--out", carry_out)->required();

    // probe
    auto* probe_cmd = app.add_subcommand("probe", "full probability "
                                                  "spectrum of one formula");
    std::string probe_ckpt, probe_omega, probe_out;
    int probe_n = 0, probe_m = 0, probe_top = 5;
    probe_cmd->add_option("--ckpt", probe_ckpt)->required();
    probe_cmd->add_option("--omega", probe_omega)->required();
    probe_cmd->add_option("--n", probe_n)->required();
    probe_cmd->add_option("--m", probe_m)->required();
    probe_cmd->add_option("--top", probe_top);
    probe_cmd->add_option("--out", probe_out);

    // coverage
    auto* cov_cmd = app.add_subcommand("coverage", "per-class training "
                                                   "combinations");
    std::string cov_split, cov_out;
    cov_cmd->add_option("--split", cov_split)->required();
    cov_cmd->add_option("--out", cov_out)->required();

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference "
                                                     "gradient verification");
    int grad_seeds = 10;
    double grad_eps32 = 1e-3, grad_eps64 = 1e-5;
    std::string grad_mode = "both";
    grad_cmd->add_option("--seeds", grad_seeds)->check(CLI::PositiveNumber);
    grad_cmd->add_option("--eps", grad_eps32, "step for the 32-bit check");
    grad_cmd->add_option("--eps64", grad_eps64, "step for the 64-bit check");
    grad_cmd->add_option("--mode", grad_mode)
        ->check(CLI::IsMember({"both", "32", "64"}));

    // repro
    auto* repro = app.add_subcommand("repro", "end-to-end experiment "
                                              "recipes");
    std::string repro_id, repro_scale = "desk", repro_out;
    std::uint64_t repro_seed = 1;
    repro->add_option("experiment", repro_id, "exp1..exp5")
        ->required()
        ->check(CLI::IsMember({"exp1", "exp2", "exp3", "exp4", "exp5"}));
    repro->add_option("--scale", repro_scale)
        ->check(CLI::IsMember({"desk", "full"}));
    repro->add_option("--seed", repro_seed);
    repro->add_option("--out", repro_out, "run directory (default: digest-"
                                          "named under runs/)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    set_worker_count(workers);

    try {
        if (gen->parsed()) {
            log.config = {{"n_max", gen_n_max}, {"render", gen_rf.to_json()}};
            return cmd_gen(log, gen_n_max, gen_rf, gen_out);
        }
        if (render->parsed()) {
            log.config = {{"n", render_n},
                          {"m", render_m},
                          {"n_max", render_n_max},
                          {"render", render_rf.to_json()}};
            return cmd_render(log, render_n, render_m, render_n_max,
                              render_rf, render_out);
        }
        if (split->parsed()) {
            log.config = {{"protocol", split_pf.to_json()},
                          {"seed", split_seed}};
            return cmd_split(log, split_omega, split_pf, split_seed,
                             split_out);
        }
        if (train_cmd->parsed()) {
            log.config = {{"train", train_tf.to_json()}};
            return cmd_train(log, train_omega, train_split, train_tf,
                             train_ckpt, train_csv, train_pred);
        }
        if (eval_cmd->parsed()) {
            log.config = {{"keys", eval_role}};
            return cmd_eval(log, eval_ckpt, eval_omega, eval_split,
                            eval_role, eval_out);
        }
        if (trials_cmd->parsed()) {
            log.config = {{"protocol", trials_pf.to_json()},
                          {"train", trials_tf.to_json()},
                          {"trials", trials_count}};
            return cmd_trials(log, trials_omega, trials_pf, trials_tf,
                              trials_count, trials_dir, trials_ckpts);
        }
        if (sweep_cmd->parsed()) {
            log.config = {{"family", sweep_family},
                          {"fractions", sweep_fracs},
                          {"train", sweep_tf.to_json()},
                          {"trials", sweep_count}};
            return cmd_sweep(log, sweep_omega, sweep_family, sweep_fracs,
                             sweep_tf, sweep_count, sweep_out, sweep_target);
        }
        if (map_cmd->parsed()) {
            log.config = {{"cell_size", map_cell}};
            return cmd_map(log, map_split, map_pred, map_out, map_cell);
        }
        if (hist_cmd->parsed()) {
            log.config = {{"preds", hist_preds.size()}};
            return cmd_hist(log, hist_preds, hist_out);
        }
        if (carry_cmd->parsed()) {
            return cmd_carry(log, carry_pred, carry_out);
        }
        if (probe_cmd->parsed()) {
            log.config = {{"n", probe_n}, {"m", probe_m}, {"top", probe_top}};
            return cmd_probe(log, probe_ckpt, probe_omega, probe_n, probe_m,
                             probe_top, probe_out);
        }
        if (cov_cmd->parsed()) {
            return cmd_coverage(log, cov_split, cov_out);
        }
        if (grad_cmd->parsed()) {
            return cmd_gradcheck(grad_seeds, grad_eps32, grad_eps64,
                                 grad_mode);
        }
        if (repro->parsed()) {
            log.config = {{"experiment", repro_id},
                          {"scale", repro_scale},
                          {"seed", repro_seed}};
            return cmd_repro(log, repro_id, repro_scale, repro_seed,
                             repro_out);
        }
        std::cerr << "usage error: no subcommand\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
