#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "addlab/analysis.hpp"
#include "addlab/errors.hpp"

using namespace addlab;

namespace {

// hand-built trial: every key of the closed set with chosen predictions
TrialResult synthetic_trial(const SplitManifest& manifest,
                            const std::vector<std::pair<AdditionKey, int>>&
                                wrong_predictions) {
    TrialResult trial;
    trial.seed = 1;
    trial.epochs_run = 1;
    const int side = manifest.n_max + 1;
    for (int n = 0; n < side; ++n) {
        for (int m = 0; m < side; ++m) {
            Prediction p;
            p.key = {n, m};
            p.role = manifest.role_of(p.key);
            p.label = n + m;
            p.predicted = p.label;
            for (const auto& [k, wrong] : wrong_predictions) {
                if (k == p.key) p.predicted = wrong;
            }
            p.p_top1 = 0.9f;
            trial.predictions.push_back(p);
        }
    }
    std::size_t train_total = 0, train_right = 0, test_total = 0,
                test_right = 0;
    for (const auto& p : trial.predictions) {
        const bool right = p.predicted == p.label;
        if (p.role == Role::Train) {
            ++train_total;
            train_right += right;
        } else {
            ++test_total;
            test_right += right;
        }
    }
    trial.train_top1 = double(train_right) / train_total;
    trial.test_top1 = test_total ? double(test_right) / test_total : 0.0;
    return trial;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("learning map from a hand-built 2x2 trial") {
    ImageSet set = build_image_set(1, RenderConfig::preset(32));
    SplitManifest manifest = integer_exclusion_split(set, {{1, 1}});
    // train = {(0,0)}, test = the three keys touching 1
    TrialResult trial = synthetic_trial(manifest, {{{1, 0}, 0}});

    LearningMap map = learning_map(manifest, trial);
    CHECK(map.at({0, 0}) == CellState::TrainRight);
    CHECK(map.at({1, 0}) == CellState::TestWrong);
    CHECK(map.at({0, 1}) == CellState::TestRight);
    CHECK(map.at({1, 1}) == CellState::TestRight);

    // cell counts reconcile with the manifest
    CHECK(map.count(CellState::TrainRight) +
              map.count(CellState::TrainWrong) ==
          manifest.count(Role::Train));
    CHECK(map.count(CellState::TestRight) +
              map.count(CellState::TestWrong) ==
          manifest.count(Role::Test));
}

TEST_CASE("learning map validates coverage and roles") {
    ImageSet set = build_image_set(1, RenderConfig::preset(32));
    SplitManifest manifest = integer_exclusion_split(set, {{1, 1}});
    TrialResult trial = synthetic_trial(manifest, {});
    SUBCASE("missing key") {
        trial.predictions.pop_back();
        CHECK_THROWS_AS(learning_map(manifest, trial), ConfigError);
    }
    SUBCASE("role disagreement") {
        trial.predictions[0].role = Role::Test;
        CHECK_THROWS_AS(learning_map(manifest, trial), ConfigError);
    }
}

TEST_CASE("render_map writes a deterministic ppm") {
    ImageSet set = build_image_set(1, RenderConfig::preset(32));
    SplitManifest manifest = integer_exclusion_split(set, {{1, 1}});
    TrialResult trial = synthetic_trial(manifest, {{{1, 0}, 0}});
    LearningMap map = learning_map(manifest, trial);

    auto dir = std::filesystem::temp_directory_path();
    render_map(map, (dir / "map_a.ppm").string(), 2);
    render_map(map, (dir / "map_b.ppm").string(), 2);
    const std::string a = slurp(dir / "map_a.ppm");
    CHECK(a == slurp(dir / "map_b.ppm"));
    CHECK(a.substr(0, 9) == "P6\n4 4\n25");

    // origin bottom-left: n rightward, m upward. (0,0) is TrainRight grey,
    // so the bottom-left 2x2 block is (200,200,200).
    const std::size_t header = a.find("255\n") + 4;
    auto pixel = [&](int px, int py) {
        const std::size_t o = header + (std::size_t(py) * 4 + px) * 3;
        return std::array<unsigned char, 3>{(unsigned char)a[o],
                                            (unsigned char)a[o + 1],
                                            (unsigned char)a[o + 2]};
    };
    CHECK(pixel(0, 3) == std::array<unsigned char, 3>{200, 200, 200});
    // (1,0) TestWrong dark blue sits bottom-right
    CHECK(pixel(3, 3) == std::array<unsigned char, 3>{0, 0, 139});
    // (0,1) TestRight light blue top-left
    CHECK(pixel(0, 0) == std::array<unsigned char, 3>{135, 206, 250});

    std::filesystem::remove(dir / "map_a.ppm");
    std::filesystem::remove(dir / "map_b.ppm");
}

TEST_CASE("error histogram") {
    ImageSet set = build_image_set(2, RenderConfig::preset(32));
    SplitManifest manifest = uniform_random_split(set, 0.4, 7);

    SUBCASE("all-correct trials give a zero histogram") {
        std::vector<TrialResult> trials = {synthetic_trial(manifest, {}),
                                           synthetic_trial(manifest, {})};
        ErrorHistogram h = error_histogram(trials, 2);
        CHECK(h.total() == 0);
        CHECK(h.counts.size() == 5);
    }
    SUBCASE("two trials each wrong at the same test key") {
        // force (0,1) into the test side first
        SplitManifest m = manifest;
        m.assignment[set.index_of({0, 1})] = Role::Test;
        std::vector<TrialResult> trials = {
            synthetic_trial(m, {{{0, 1}, 0}}),
            synthetic_trial(m, {{{0, 1}, 2}})};
        ErrorHistogram h = error_histogram(trials, 2);
        CHECK(h.counts[1] == 2);
        CHECK(h.total() == 2);
        CHECK(h.trials == 2);
    }
    SUBCASE("train-side mistakes never count") {
        SplitManifest m = manifest;
        m.assignment[set.index_of({0, 1})] = Role::Train;
        std::vector<TrialResult> trials = {
            synthetic_trial(m, {{{0, 1}, 0}})};
        CHECK(error_histogram(trials, 2).total() == 0);
    }
    SUBCASE("csv") {
        std::vector<TrialResult> trials = {synthetic_trial(manifest, {})};
        const std::string csv = histogram_csv(error_histogram(trials, 2));
        CHECK(csv == "label,count\n0,0\n1,0\n2,0\n3,0\n4,0\n");
    }
}

TEST_CASE("carry loss report") {
    ImageSet set = build_image_set(99, RenderConfig::preset(64));
    SplitManifest manifest = integer_exclusion_split(set, {{62, 68}});

    SUBCASE("no errors") {
        CarryReport r = carry_loss_report(synthetic_trial(manifest, {}));
        CHECK(r.total_errors == 0);
        CHECK(r.lost_ten == 0);
        CHECK(r.diff_histogram.empty());
    }
    SUBCASE("the 66+65 signature") {
        CarryReport r = carry_loss_report(
            synthetic_trial(manifest, {{{66, 65}, 121}}));
        CHECK(r.total_errors == 1);
        CHECK(r.diff_histogram.at(-10) == 1);
        CHECK(r.lost_ten == 1);
    }
    SUBCASE("mixed buckets reconcile") {
        CarryReport r = carry_loss_report(synthetic_trial(
            manifest, {{{66, 65}, 121},   // -10
                       {{65, 66}, 121},   // -10
                       {{66, 66}, 122},   // -10
                       {{62, 0}, 63}}));  // +1
        CHECK(r.lost_ten == 3);
        CHECK(r.total_errors == 4);
        std::int64_t sum = 0;
        for (const auto& [diff, count] : r.diff_histogram) sum += count;
        CHECK(sum == r.total_errors);
        const std::string text = carry_report_to_json(r);
        auto doc = nlohmann::json::parse(text);
        CHECK(doc.at("lost_ten") == 3);
        CHECK(doc.at("total_errors") == 4);
    }
}

TEST_CASE("probe reports the full spectrum") {
    ImageSet set = build_image_set(2, RenderConfig::preset(32));
    SplitManifest manifest = uniform_random_split(set, 0.2, 3);
    NetworkSpec spec = small_cnn(32, set.class_count());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 2;
    cfg.early_stop.reset();
    auto [ckpt, result] = train(set, manifest, spec, cfg);

    ProbeReport report = probe(ckpt, set, {1, 1});
    CHECK(report.label == 2);
    REQUIRE(report.ranking.size() == 5);
    double sum = 0.0;
    for (const auto& [cls, p] : report.ranking) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-5);
    // descending, and the true rank points at the label
    for (std::size_t i = 1; i < report.ranking.size(); ++i) {
        CHECK(report.ranking[i - 1].second >= report.ranking[i].second);
    }
    CHECK(report.ranking[report.true_rank].first == 2);

    ProbeReport again = probe(ckpt, set, {1, 1});
    CHECK(probe_to_json(again) == probe_to_json(report));

    const std::string table = probe_table(report, 3);
    CHECK(table.find("probe 1+1 (label 2") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 5);

    CHECK_THROWS_AS(probe(ckpt, set, {5, 0}), ConfigError);
}

TEST_CASE("class coverage") {
    SUBCASE("full training set covers every class") {
        ImageSet set = build_image_set(9, RenderConfig::preset(32));
        SplitManifest manifest = uniform_random_split(set, 0.0, 1);
        auto rows = class_coverage(manifest);
        REQUIRE(rows.size() == 19);
        std::size_t covered = 0;
        for (const auto& row : rows) {
            CHECK(row.ratio == 1.0);
            CHECK(!row.zero_coverage);
            covered += row.train_combos.size();
        }
        CHECK(covered == manifest.count(Role::Train));
    }
    SUBCASE("commutativity split leaves the end classes empty") {
        ImageSet set = build_image_set(99, RenderConfig::preset(64));
        SplitManifest manifest = commutativity_split(set, 0.5, 5);
        auto rows = class_coverage(manifest);
        CHECK(rows[0].zero_coverage);      // only 0+0, a diagonal key
        CHECK(rows[198].zero_coverage);    // only 99+99
        for (int k = 1; k < 198; ++k) {
            CHECK(!rows[k].zero_coverage);
        }
        std::size_t covered = 0;
        for (const auto& row : rows) covered += row.train_combos.size();
        CHECK(covered == manifest.count(Role::Train));
    }
    SUBCASE("the class-10 scenario") {
        // remove 5+5, 4+6 and 6+4 from an otherwise full training side
        ImageSet set = build_image_set(99, RenderConfig::preset(64));
        SplitManifest manifest = uniform_random_split(set, 0.0, 1);
        manifest.assignment[set.index_of({5, 5})] = Role::Test;
        manifest.assignment[set.index_of({4, 6})] = Role::Test;
        manifest.assignment[set.index_of({6, 4})] = Role::Test;
        auto rows = class_coverage(manifest);
        CHECK(rows[10].class_total == 11);
        CHECK(rows[10].train_combos.size() == 8);
        CHECK(rows[10].ratio == doctest::Approx(8.0 / 11.0));
        CHECK(!rows[10].zero_coverage);
    }
}

TEST_CASE("sweep table and min fraction") {
    std::vector<SweepRow> rows = {
        {0.2, 0.2, 0.8, 0.41},
        {0.5, 0.5, 0.5, 0.77},
        {1.0, 1.0, 0.0, std::numeric_limits<double>::quiet_NaN()},
    };
    CHECK(find_min_fraction(rows, 0.7) == 0.5);
    CHECK(find_min_fraction(rows, 0.4) == 0.2);
    CHECK(!find_min_fraction(rows, 0.9).has_value());

    const std::string csv = sweep_csv(rows);
    CHECK(csv.find("fraction,train_ratio,test_ratio,mean_test_top1\n") == 0);
    // the empty-test row reports no accuracy
    CHECK(csv.find("1,1,0,\n") != std::string::npos);
}

TEST_CASE("sweep runs trials per fraction") {
    ImageSet set = build_image_set(2, RenderConfig::preset(32));
    NetworkSpec spec = small_cnn(32, set.class_count());
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 4;
    cfg.early_stop.reset();
    auto rows = sweep_train_fraction(
        set, SplitProtocol::Variant::UniformRandom, {0.5, 1.0}, spec, cfg,
        1);
    REQUIRE(rows.size() == 2);
    // test count = round-half-up(0.5 * 9) = 5
    CHECK(rows[0].train_ratio == doctest::Approx(4.0 / 9.0));
    CHECK(rows[0].test_ratio == doctest::Approx(5.0 / 9.0));
    CHECK(!std::isnan(rows[0].mean_test_top1));
    CHECK(rows[1].test_ratio == 0.0);
    CHECK(std::isnan(rows[1].mean_test_top1));

    CHECK_THROWS_AS(
        sweep_train_fraction(set, SplitProtocol::Variant::UniformRandom,
                             {0.9, 0.2}, spec, cfg, 1),
        ConfigError);
}
