#include "addlab/training.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "addlab/crc32.hpp"
#include "addlab/errors.hpp"
#include "addlab/rng.hpp"

namespace addlab {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'A', 'D', 'D', 'N'};
constexpr std::uint16_t kVersion = 1;
constexpr int kEvalBatch = 64;

std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

// ---------- optimizer ----------

struct OptState {
    // one flat buffer per parameter tensor, weights then bias per layer
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;  // Adam second moment / unused for SGD
    long long step = 0;
};

OptState make_opt_state(const Parameters& params, OptimizerConfig::Kind kind) {
    OptState s;
    for (const auto& pt : params.layers) {
        s.m.emplace_back(pt.weight.numel(), 0.0f);
        s.m.emplace_back(pt.bias.numel(), 0.0f);
        if (kind == OptimizerConfig::Kind::Adam) {
            s.v.emplace_back(pt.weight.numel(), 0.0f);
            s.v.emplace_back(pt.bias.numel(), 0.0f);
        }
    }
    return s;
}

void opt_step(Parameters& params, const Gradients& grads,
              const OptimizerConfig& cfg, OptState& state) {
    ++state.step;
    std::size_t t = 0;
    auto apply = [&](std::vector<float>& theta,
                     const std::vector<float>& g) {
        if (cfg.kind == OptimizerConfig::Kind::SGD) {
            auto& vel = state.m[t];
            const float mu = static_cast<float>(cfg.momentum);
            const float lr = static_cast<float>(cfg.lr);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                vel[i] = mu * vel[i] + g[i];
                theta[i] -= lr * vel[i];
            }
        } else {
            auto& m = state.m[t];
            auto& v = state.v[t];
            const float b1 = static_cast<float>(cfg.beta1);
            const float b2 = static_cast<float>(cfg.beta2);
            const float eps = static_cast<float>(cfg.eps);
            const double corr1 = 1.0 - std::pow(cfg.beta1, state.step);
            const double corr2 = 1.0 - std::pow(cfg.beta2, state.step);
            const float alpha =
                static_cast<float>(cfg.lr * std::sqrt(corr2) / corr1);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                theta[i] -= alpha * m[i] / (std::sqrt(v[i]) + eps);
            }
        }
        ++t;
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        apply(params.layers[l].weight.data, grads.layers[l].weight.data);
        apply(params.layers[l].bias.data, grads.layers[l].bias.data);
    }
}

// ---------- batch assembly / inference ----------

Tensor assemble_batch(const ImageSet& set,
                      const std::vector<AdditionKey>& keys, std::size_t from,
                      std::size_t count) {
    const int h = set.render_cfg.height;
    const int w = set.render_cfg.width;
    Tensor batch({static_cast<int>(count), 1, h, w});
    for (std::size_t i = 0; i < count; ++i) {
        const Example& ex = set.at(keys[from + i]);
        float* dst = batch.data.data() +
                     i * static_cast<std::size_t>(h) * w;
        for (std::size_t p = 0; p < ex.image.pixels.size(); ++p) {
            dst[p] = pixel_to_input(ex.image.pixels[p], set.render_cfg);
        }
    }
    return batch;
}

struct RowOutcome {
    int predicted = 0;
    float p_top1 = 0.0f;
    std::uint32_t prob_digest = 0;
};

/// Forward over keys in fixed-size chunks; per-image values are independent
/// of the chunking.
std::vector<RowOutcome> infer(const NetworkSpec& spec,
                              const Parameters& params, const ImageSet& set,
                              const std::vector<AdditionKey>& keys,
                              bool want_digest) {
    std::vector<RowOutcome> out(keys.size());
    const int classes = spec.layers.back().dense.out_dim;
    for (std::size_t from = 0; from < keys.size(); from += kEvalBatch) {
        const std::size_t count =
            std::min<std::size_t>(kEvalBatch, keys.size() - from);
        Tensor batch = assemble_batch(set, keys, from, count);
        Tensor logits = forward(spec, params, batch);
        for (std::size_t i = 0; i < count; ++i) {
            std::span<const float> row(
                logits.data.data() + i * static_cast<std::size_t>(classes),
                static_cast<std::size_t>(classes));
            auto probs = softmax_row(row);
            int best = 0;
            for (int c = 1; c < classes; ++c) {
                if (probs[c] > probs[best]) best = c;
            }
            RowOutcome& r = out[from + i];
            r.predicted = best;
            r.p_top1 = probs[best];
            if (want_digest) {
                r.prob_digest =
                    crc32(probs.data(), probs.size() * sizeof(float));
            }
        }
    }
    return out;
}

double accuracy_on(const NetworkSpec& spec, const Parameters& params,
                   const ImageSet& set,
                   const std::vector<AdditionKey>& keys) {
    auto rows = infer(spec, params, set, keys, false);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (rows[i].predicted == label_of(keys[i])) ++correct;
    }
    return static_cast<double>(correct) / keys.size();
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> param_shapes(
    const NetworkSpec& spec) {
    std::vector<std::pair<std::vector<int>, std::vector<int>>> shapes;
    for (const auto& layer : spec.layers) {
        if (layer.kind == LayerSpec::Kind::Conv2d) {
            const auto& c = layer.conv;
            shapes.push_back({{c.out_ch, c.in_ch, c.kernel, c.kernel},
                              {c.out_ch}});
        } else if (layer.kind == LayerSpec::Kind::Dense) {
            const auto& d = layer.dense;
            shapes.push_back({{d.out_dim, d.in_dim}, {d.out_dim}});
        }
    }
    return shapes;
}

// ---------- binary helpers ----------

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

// ---------- config ----------

std::string train_config_to_json(const TrainConfig& cfg) {
    json opt;
    if (cfg.optimizer.kind == OptimizerConfig::Kind::SGD) {
        opt = {{"kind", "sgd"},
               {"lr", cfg.optimizer.lr},
               {"momentum", cfg.optimizer.momentum}};
    } else {
        opt = {{"kind", "adam"},
               {"lr", cfg.optimizer.lr},
               {"beta1", cfg.optimizer.beta1},
               {"beta2", cfg.optimizer.beta2},
               {"eps", cfg.optimizer.eps}};
    }
    json doc = {{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"optimizer", opt},
                {"seed", cfg.seed},
                {"deterministic", cfg.deterministic}};
    if (cfg.early_stop) {
        doc["early_stop"] = {
            {"train_acc_target", cfg.early_stop->train_acc_target},
            {"patience", cfg.early_stop->patience}};
    }
    return doc.dump();
}

std::uint32_t train_config_digest(const TrainConfig& cfg) {
    return crc32(train_config_to_json(cfg));
}

// ---------- train / evaluate / trials ----------

std::pair<Checkpoint, TrialResult> train(const ImageSet& set,
                                         const SplitManifest& manifest,
                                         const NetworkSpec& spec,
                                         const TrainConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.optimizer.lr > 0)) {
        throw ConfigError("train config: epochs/batch_size/lr out of range");
    }
    if (manifest.n_max != set.n_max ||
        manifest.total() != set.size()) {
        throw ConfigError("manifest does not cover the image set (n_max " +
                          std::to_string(manifest.n_max) + " vs " +
                          std::to_string(set.n_max) + ")");
    }
    const int classes = output_classes(spec);
    if (classes != set.class_count()) {
        throw ConfigError("spec output " + std::to_string(classes) +
                          " does not match class count " +
                          std::to_string(set.class_count()));
    }
    if (spec.in_ch != 1 || spec.in_h != set.render_cfg.height ||
        spec.in_w != set.render_cfg.width) {
        throw ConfigError("spec input does not match the set's image size");
    }
    const std::vector<AdditionKey> train_keys = manifest.keys_with(Role::Train);
    if (train_keys.empty()) {
        throw ConfigError("empty training set");
    }

    Parameters params = init_params(spec, derive_seed(cfg.seed, 1));
    RandomStream shuffle_rng(derive_seed(cfg.seed, 2));
    OptState opt = make_opt_state(params, cfg.optimizer.kind);

    TrialResult result;
    result.seed = cfg.seed;

    std::vector<AdditionKey> order = train_keys;
    int streak = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t from = 0; from < order.size();
             from += cfg.batch_size) {
            const std::size_t count = std::min<std::size_t>(
                cfg.batch_size, order.size() - from);
            // test isolation: only train-role keys may reach the loss
            for (std::size_t i = 0; i < count; ++i) {
                if (manifest.role_of(order[from + i]) != Role::Train) {
                    throw Error("internal: test key entered a train batch");
                }
            }
            Tensor batch = assemble_batch(set, order, from, count);
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                labels[i] = label_of(order[from + i]);
            }
            ForwardCache cache;
            Tensor logits = forward(spec, params, batch, &cache);
            LossResult loss = loss_softmax_xent(logits, labels);
            if (!std::isfinite(loss.loss)) {
                throw DivergenceError(
                    epoch, batches,
                    "training diverged (non-finite loss) at epoch " +
                        std::to_string(epoch) + ", batch " +
                        std::to_string(batches));
            }
            Gradients grads = backward(spec, params, cache, loss.dlogits);
            opt_step(params, grads, cfg.optimizer, opt);
            loss_sum += loss.loss;
            ++batches;
        }
        const double train_acc = accuracy_on(spec, params, set, train_keys);
        result.history.push_back({epoch, loss_sum / batches, train_acc});
        result.epochs_run = epoch;
        if (cfg.early_stop) {
            if (train_acc >= cfg.early_stop->train_acc_target) {
                ++streak;
            } else {
                streak = 0;
            }
            if (streak >= cfg.early_stop->patience) break;
        }
    }

    // predictions for every key of the closed set, canonical order
    std::vector<AdditionKey> all_keys;
    all_keys.reserve(set.size());
    for (const auto& ex : set.examples) all_keys.push_back(ex.key);
    auto rows = infer(spec, params, set, all_keys, true);
    result.predictions.resize(all_keys.size());
    std::size_t train_total = 0, train_right = 0;
    std::size_t test_total = 0, test_right = 0;
    for (std::size_t i = 0; i < all_keys.size(); ++i) {
        Prediction& p = result.predictions[i];
        p.key = all_keys[i];
        p.role = manifest.role_of(p.key);
        p.label = label_of(p.key);
        p.predicted = rows[i].predicted;
        p.p_top1 = rows[i].p_top1;
        p.prob_digest = rows[i].prob_digest;
        const bool right = p.predicted == p.label;
        if (p.role == Role::Train) {
            ++train_total;
            train_right += right ? 1 : 0;
        } else {
            ++test_total;
            test_right += right ? 1 : 0;
        }
    }
    result.train_top1 = static_cast<double>(train_right) / train_total;
    result.test_top1 =
        test_total == 0
            ? std::numeric_limits<double>::quiet_NaN()
            : static_cast<double>(test_right) / test_total;

    Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.params = std::move(params);
    ckpt.n_max = set.n_max;
    ckpt.render_digest = content_digest(set);
    ckpt.config_digest = train_config_digest(cfg);
    ckpt.epoch = result.epochs_run;
    return {std::move(ckpt), std::move(result)};
}

EvalResult evaluate(const Checkpoint& ckpt, const ImageSet& set,
                    const std::vector<AdditionKey>& keys) {
    if (keys.empty()) {
        throw ConfigError("empty key set");
    }
    if (ckpt.n_max != set.n_max || ckpt.render_digest != content_digest(set)) {
        throw ConfigError(
            "checkpoint/set mismatch (render config digest differs)");
    }
    for (const auto& k : keys) {
        if (!set.contains(k)) {
            throw ConfigError("key (" + std::to_string(k.n) + "," +
                              std::to_string(k.m) +
                              ") outside the image set");
        }
    }
    auto rows = infer(ckpt.spec, ckpt.params, set, keys, false);
    EvalResult r;
    r.rows.resize(keys.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        EvalRow& row = r.rows[i];
        row.key = keys[i];
        row.predicted = rows[i].predicted;
        row.correct = rows[i].predicted == label_of(keys[i]);
        row.p_top1 = rows[i].p_top1;
        correct += row.correct ? 1 : 0;
    }
    r.accuracy = static_cast<double>(correct) / keys.size();
    return r;
}

TrialsOutcome run_trials(const ImageSet& set, const SplitProtocol& protocol,
                         const NetworkSpec& spec, const TrainConfig& cfg,
                         int trials) {
    if (trials < 1) {
        throw ConfigError("run_trials: need at least one trial");
    }
    TrialsOutcome out;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = derive_seed(cfg.seed, t);
        SplitManifest manifest = make_split(set, protocol, trial_seed);
        TrainConfig trial_cfg = cfg;
        trial_cfg.seed = trial_seed;
        auto [ckpt, result] = train(set, manifest, spec, trial_cfg);
        out.manifests.push_back(std::move(manifest));
        out.trials.push_back(std::move(result));
    }
    double sum = 0.0;
    double mn = std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    bool any_nan = false;
    for (const auto& trial : out.trials) {
        if (std::isnan(trial.test_top1)) {
            any_nan = true;
            continue;
        }
        sum += trial.test_top1;
        mn = std::min(mn, trial.test_top1);
        mx = std::max(mx, trial.test_top1);
    }
    if (any_nan) {
        out.mean_test_top1 = out.min_test_top1 = out.max_test_top1 =
            std::numeric_limits<double>::quiet_NaN();
    } else {
        out.mean_test_top1 = sum / trials;
        out.min_test_top1 = mn;
        out.max_test_top1 = mx;
    }
    return out;
}

// ---------- checkpoint io ----------

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header = {{"spec", json::parse(spec_to_json(ckpt.spec))},
                   {"n_max", ckpt.n_max},
                   {"render_digest", ckpt.render_digest},
                   {"train_config_digest", ckpt.config_digest},
                   {"epoch", ckpt.epoch}};
    const std::string hs = header.dump();

    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    put_u16(bytes, kVersion);
    put_u32(bytes, static_cast<std::uint32_t>(hs.size()));
    bytes.insert(bytes.end(), hs.begin(), hs.end());
    for (const auto& pt : ckpt.params.layers) {
        for (const Tensor* t : {&pt.weight, &pt.bias}) {
            bytes.push_back(static_cast<std::uint8_t>(t->shape.size()));
            for (int d : t->shape) {
                put_u32(bytes, static_cast<std::uint32_t>(d));
            }
            for (float v : t->data) {
                put_f32(bytes, v);
            }
        }
    }
    put_u32(bytes, crc32(bytes));

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open for writing: " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("write failed: " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open file: " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 10) {
        throw FormatError(FormatError::Defect::truncated,
                          "truncated checkpoint: header incomplete");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(FormatError::Defect::bad_magic, "bad magic");
    }
    const std::uint16_t version = get_u16(bytes.data() + 4);
    if (version != kVersion) {
        throw FormatError(FormatError::Defect::version_mismatch,
                          "unsupported version " + std::to_string(version));
    }
    const std::uint32_t header_len = get_u32(bytes.data() + 6);
    if (bytes.size() < 10 + static_cast<std::size_t>(header_len) + 4) {
        throw FormatError(FormatError::Defect::truncated,
                          "truncated checkpoint: header exceeds file");
    }
    const std::uint32_t stored_crc = get_u32(bytes.data() + bytes.size() - 4);
    const std::uint32_t actual_crc = crc32(bytes.data(), bytes.size() - 4);
    if (stored_crc != actual_crc) {
        throw FormatError(FormatError::Defect::checksum_mismatch,
                          "checksum mismatch");
    }

    Checkpoint ckpt;
    try {
        const json header = json::parse(
            bytes.begin() + 10, bytes.begin() + 10 + header_len);
        ckpt.spec = spec_from_json(header.at("spec").dump());
        ckpt.n_max = header.at("n_max");
        ckpt.render_digest = header.at("render_digest");
        ckpt.config_digest = header.at("train_config_digest");
        ckpt.epoch = header.at("epoch");
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Defect::schema,
                          std::string("checkpoint header schema mismatch: ") +
                              e.what());
    }

    const auto expected = param_shapes(ckpt.spec);
    std::size_t pos = 10 + header_len;
    const std::size_t end = bytes.size() - 4;
    auto read_tensor = [&](const std::vector<int>& want,
                           const std::string& what) {
        if (pos + 1 > end) {
            throw FormatError(FormatError::Defect::truncated,
                              "truncated checkpoint at " + what);
        }
        const int rank = bytes[pos++];
        if (rank != static_cast<int>(want.size())) {
            throw FormatError(FormatError::Defect::shape,
                              what + ": rank " + std::to_string(rank) +
                                  " does not match the spec");
        }
        std::vector<int> dims(rank);
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            if (pos + 4 > end) {
                throw FormatError(FormatError::Defect::truncated,
                                  "truncated checkpoint at " + what);
            }
            dims[d] = static_cast<int>(get_u32(bytes.data() + pos));
            pos += 4;
            numel *= static_cast<std::size_t>(dims[d]);
        }
        if (dims != want) {
            throw FormatError(FormatError::Defect::shape,
                              what + ": stored shape does not match the "
                                     "spec");
        }
        if (pos + 4 * numel > end) {
            throw FormatError(FormatError::Defect::truncated,
                              "truncated checkpoint at " + what);
        }
        Tensor t(dims);
        for (std::size_t i = 0; i < numel; ++i) {
            t.data[i] =
                std::bit_cast<float>(get_u32(bytes.data() + pos));
            pos += 4;
        }
        return t;
    };
    for (std::size_t l = 0; l < expected.size(); ++l) {
        ParamTensors pt;
        pt.weight = read_tensor(expected[l].first,
                                "layer " + std::to_string(l) + " weight");
        pt.bias = read_tensor(expected[l].second,
                              "layer " + std::to_string(l) + " bias");
        ckpt.params.layers.push_back(std::move(pt));
    }
    if (pos != end) {
        throw FormatError(FormatError::Defect::schema,
                          "checkpoint has trailing bytes");
    }
    return ckpt;
}

// ---------- report formats ----------

std::string trials_csv(const TrialsOutcome& outcome) {
    std::string csv = "trial,seed,epochs_run,train_top1,test_top1\n";
    for (std::size_t i = 0; i < outcome.trials.size(); ++i) {
        const TrialResult& t = outcome.trials[i];
        csv += std::to_string(i) + "," + std::to_string(t.seed) + "," +
               std::to_string(t.epochs_run) + "," +
               fmt_double(t.train_top1) + "," + fmt_double(t.test_top1) +
               "\n";
    }
    return csv;
}

std::string predictions_to_json(const TrialResult& trial, int n_max) {
    json rows = json::array();
    for (const auto& p : trial.predictions) {
        rows.push_back({{"key", {p.key.n, p.key.m}},
                        {"role", p.role == Role::Train ? "train" : "test"},
                        {"label", p.label},
                        {"predicted", p.predicted},
                        {"p_top1", p.p_top1}});
    }
    json doc = {{"schema_version", 1},
                {"seed", trial.seed},
                {"n_max", n_max},
                {"epochs_run", trial.epochs_run},
                {"predictions", rows}};
    return doc.dump() + "\n";
}

TrialResult predictions_from_json(const std::string& text, int* n_max) {
    try {
        const json doc = json::parse(text);
        if (doc.at("schema_version").get<int>() != 1) {
            throw FormatError(FormatError::Defect::version_mismatch,
                              "unsupported prediction dump schema_version");
        }
        TrialResult trial;
        trial.seed = doc.at("seed");
        trial.epochs_run = doc.at("epochs_run");
        const int nm = doc.at("n_max");
        if (n_max) *n_max = nm;
        std::size_t train_total = 0, train_right = 0;
        std::size_t test_total = 0, test_right = 0;
        for (const auto& row : doc.at("predictions")) {
            Prediction p;
            p.key = {row.at("key").at(0).get<int>(),
                     row.at("key").at(1).get<int>()};
            const std::string role = row.at("role");
            if (role != "train" && role != "test") {
                throw FormatError(FormatError::Defect::schema,
                                  "unknown role: " + role);
            }
            p.role = role == "train" ? Role::Train : Role::Test;
            p.label = row.at("label");
            p.predicted = row.at("predicted");
            p.p_top1 = row.at("p_top1");
            const bool right = p.predicted == p.label;
            if (p.role == Role::Train) {
                ++train_total;
                train_right += right ? 1 : 0;
            } else {
                ++test_total;
                test_right += right ? 1 : 0;
            }
            trial.predictions.push_back(p);
        }
        trial.train_top1 = train_total == 0
                               ? std::numeric_limits<double>::quiet_NaN()
                               : double(train_right) / train_total;
        trial.test_top1 = test_total == 0
                              ? std::numeric_limits<double>::quiet_NaN()
                              : double(test_right) / test_total;
        return trial;
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Defect::schema,
                          std::string("prediction dump schema mismatch: ") +
                              e.what());
    }
}

}  // namespace addlab
