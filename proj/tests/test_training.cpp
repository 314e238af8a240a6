#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "addlab/errors.hpp"
#include "addlab/training.hpp"

using namespace addlab;

namespace {

// tiny end-to-end fixture: 9 images at 32x32, 5 classes
const ImageSet& set2() {
    static ImageSet s = build_image_set(2, RenderConfig::preset(32));
    return s;
}

TrainConfig quick_config(int epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.seed = 11;
    cfg.early_stop.reset();
    return cfg;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p,
                 const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("train covers the set and learns the training side") {
    const ImageSet& set = set2();
    SplitManifest manifest = uniform_random_split(set, 0.2, 3);
    NetworkSpec spec = small_cnn(32, set.class_count());
    TrainConfig cfg = quick_config(80);
    cfg.early_stop = EarlyStop{1.0, 1};

    auto [ckpt, result] = train(set, manifest, spec, cfg);

    REQUIRE(result.predictions.size() == set.size());
    // roles match the manifest; accuracies recompute from predictions
    std::size_t train_right = 0, train_total = 0;
    for (const auto& p : result.predictions) {
        CHECK(p.role == manifest.role_of(p.key));
        CHECK(p.label == p.key.n + p.key.m);
        if (p.role == Role::Train) {
            ++train_total;
            train_right += p.predicted == p.label ? 1 : 0;
        }
    }
    CHECK(result.train_top1 ==
          doctest::Approx(double(train_right) / train_total));
    // an over-parameterized net memorizes 7 images
    CHECK(result.train_top1 == 1.0);
    CHECK(result.epochs_run <= 80);
    CHECK(ckpt.epoch == result.epochs_run);
    CHECK(ckpt.n_max == 2);
    CHECK(ckpt.render_digest == content_digest(set));

    // history is per-epoch and loss ends lower than it starts
    REQUIRE(result.history.size() ==
            static_cast<std::size_t>(result.epochs_run));
    CHECK(result.history.back().loss < result.history.front().loss);
}

TEST_CASE("deterministic training is byte-for-byte repeatable") {
    const ImageSet& set = set2();
    SplitManifest manifest = uniform_random_split(set, 0.25, 5);
    NetworkSpec spec = small_cnn(32, set.class_count());
    TrainConfig cfg = quick_config(2);

    auto [ckpt_a, result_a] = train(set, manifest, spec, cfg);
    auto [ckpt_b, result_b] = train(set, manifest, spec, cfg);
    CHECK(result_a == result_b);
    CHECK(ckpt_a.params == ckpt_b.params);
    CHECK(predictions_to_json(result_a, set.n_max) ==
          predictions_to_json(result_b, set.n_max));

    TrainConfig other = cfg;
    other.seed = 12;
    auto [ckpt_c, result_c] = train(set, manifest, spec, other);
    CHECK(result_a.predictions != result_c.predictions);
}

TEST_CASE("train validates its inputs") {
    const ImageSet& set = set2();
    SplitManifest manifest = uniform_random_split(set, 0.2, 3);
    NetworkSpec spec = small_cnn(32, set.class_count());

    SUBCASE("wrong class count") {
        NetworkSpec bad = small_cnn(32, 7);
        CHECK_THROWS_AS(train(set, manifest, bad, quick_config(1)),
                        ConfigError);
    }
    SUBCASE("wrong image size") {
        NetworkSpec bad = small_cnn(64, set.class_count());
        CHECK_THROWS_AS(train(set, manifest, bad, quick_config(1)),
                        ConfigError);
    }
    SUBCASE("manifest from another n_max") {
        ImageSet other = build_image_set(3, RenderConfig::preset(32));
        SplitManifest m3 = uniform_random_split(other, 0.2, 3);
        CHECK_THROWS_AS(train(set, m3, spec, quick_config(1)), ConfigError);
    }
    SUBCASE("bad config") {
        TrainConfig cfg = quick_config(0);
        CHECK_THROWS_AS(train(set, manifest, spec, cfg), ConfigError);
    }
}

TEST_CASE("evaluate") {
    const ImageSet& set = set2();
    SplitManifest manifest = uniform_random_split(set, 0.2, 3);
    NetworkSpec spec = small_cnn(32, set.class_count());
    TrainConfig cfg = quick_config(10);
    cfg.early_stop = EarlyStop{1.0, 1};
    auto [ckpt, result] = train(set, manifest, spec, cfg);

    SUBCASE("consistent with stored result") {
        EvalResult on_train = evaluate(ckpt, set,
                                       manifest.keys_with(Role::Train));
        CHECK(on_train.accuracy == doctest::Approx(result.train_top1));
    }
    SUBCASE("twice gives identical outputs") {
        auto keys = manifest.keys_with(Role::Test);
        EvalResult a = evaluate(ckpt, set, keys);
        EvalResult b = evaluate(ckpt, set, keys);
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].predicted == b.rows[i].predicted);
            CHECK(a.rows[i].p_top1 == b.rows[i].p_top1);
        }
    }
    SUBCASE("empty key set rejected") {
        CHECK_THROWS_WITH_AS(evaluate(ckpt, set, {}), "empty key set",
                             ConfigError);
    }
    SUBCASE("set mismatch rejected") {
        ImageSet other = build_image_set(2, RenderConfig::preset(64));
        CHECK_THROWS_AS(evaluate(ckpt, other, {{0, 0}}), ConfigError);
    }
}

TEST_CASE("run_trials") {
    const ImageSet& set = set2();
    NetworkSpec spec = small_cnn(32, set.class_count());
    TrainConfig cfg = quick_config(2);
    SplitProtocol protocol;
    protocol.variant = SplitProtocol::Variant::UniformRandom;
    protocol.test_fraction = 0.25;

    SUBCASE("singleton statistics") {
        TrialsOutcome one = run_trials(set, protocol, spec, cfg, 1);
        REQUIRE(one.trials.size() == 1);
        CHECK(one.mean_test_top1 == one.trials[0].test_top1);
        CHECK(one.min_test_top1 == one.max_test_top1);
    }
    SUBCASE("equal master seeds reproduce everything") {
        TrialsOutcome a = run_trials(set, protocol, spec, cfg, 2);
        TrialsOutcome b = run_trials(set, protocol, spec, cfg, 2);
        CHECK(a.trials == b.trials);
        CHECK(a.manifests == b.manifests);
        // per-trial seeds are derived, distinct, and resample the split
        CHECK(a.trials[0].seed != a.trials[1].seed);
        CHECK(a.manifests[0].assignment != a.manifests[1].assignment);
    }
    SUBCASE("csv layout") {
        TrialsOutcome a = run_trials(set, protocol, spec, cfg, 2);
        const std::string csv = trials_csv(a);
        CHECK(csv.find("trial,seed,epochs_run,train_top1,test_top1\n") == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
}

TEST_CASE("checkpoint round trip and corruption") {
    const ImageSet& set = set2();
    SplitManifest manifest = uniform_random_split(set, 0.2, 3);
    NetworkSpec spec = small_cnn(32, set.class_count());
    auto [ckpt, result] = train(set, manifest, spec, quick_config(1));

    auto path = std::filesystem::temp_directory_path() / "addlab_ckpt.bin";
    save_checkpoint(ckpt, path.string());

    SUBCASE("round trip is bit-identical") {
        Checkpoint back = load_checkpoint(path.string());
        CHECK(back.params == ckpt.params);
        CHECK(back.n_max == ckpt.n_max);
        CHECK(back.render_digest == ckpt.render_digest);
        CHECK(back.config_digest == ckpt.config_digest);
        CHECK(back.epoch == ckpt.epoch);
        CHECK(spec_to_json(back.spec) == spec_to_json(ckpt.spec));
    }
    SUBCASE("flipped byte fails the checksum") {
        auto bytes = read_bytes(path);
        bytes[bytes.size() / 2] ^= 0x01;
        write_bytes(path, bytes);
        try {
            load_checkpoint(path.string());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::checksum_mismatch);
        }
    }
    SUBCASE("bad magic") {
        auto bytes = read_bytes(path);
        bytes[0] = 'Z';
        write_bytes(path, bytes);
        try {
            load_checkpoint(path.string());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::bad_magic);
        }
    }
    SUBCASE("mismatched spec shapes are named") {
        Checkpoint broken = ckpt;
        broken.spec.layers[0].conv.out_ch = 8;  // params still carry 16
        broken.spec.layers[3].conv.in_ch = 8;
        save_checkpoint(broken, path.string());
        try {
            load_checkpoint(path.string());
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.defect == FormatError::Defect::shape);
            CHECK(std::string(e.what()).find("layer 0") !=
                  std::string::npos);
        }
    }

    std::filesystem::remove(path);
}

TEST_CASE("prediction dump format") {
    const ImageSet& set = set2();
    SplitManifest manifest = uniform_random_split(set, 0.2, 3);
    NetworkSpec spec = small_cnn(32, set.class_count());
    auto [ckpt, result] = train(set, manifest, spec, quick_config(1));

    const std::string text = predictions_to_json(result, set.n_max);
    auto doc = nlohmann::json::parse(text);
    CHECK(doc.at("schema_version") == 1);
    CHECK(doc.at("n_max") == 2);
    REQUIRE(doc.at("predictions").size() == 9);
    const auto& first = doc.at("predictions")[0];
    CHECK(first.at("key").size() == 2);
    CHECK(first.contains("role"));
    CHECK(first.contains("label"));
    CHECK(first.contains("predicted"));
    CHECK(first.contains("p_top1"));
}
