#include <doctest.h>

#include <cmath>

#include "addlab/errors.hpp"
#include "addlab/network.hpp"

using namespace addlab;

TEST_CASE("spec validation") {
    NetworkSpec ok = small_cnn(64, 199);
    auto shapes = validate_spec(ok);
    CHECK(shapes.front().dims == std::vector<int>{1, 64, 64});
    CHECK(shapes.back().dims == std::vector<int>{199});
    CHECK(output_classes(ok) == 199);

    SUBCASE("even kernel rejected") {
        NetworkSpec bad = ok;
        bad.layers[0].conv.kernel = 4;
        CHECK_THROWS_AS(validate_spec(bad), ConfigError);
    }
    SUBCASE("channel mismatch rejected with layer index") {
        NetworkSpec bad = ok;
        bad.layers[3].conv.in_ch = 7;
        CHECK_THROWS_WITH_AS(validate_spec(bad),
                             "layer 3: conv2d in_ch 7 does not match input "
                             "channels 16",
                             ConfigError);
    }
    SUBCASE("non-integral conv output rejected") {
        NetworkSpec bad;
        bad.in_ch = 1;
        bad.in_h = 8;
        bad.in_w = 8;
        bad.layers = {LayerSpec::conv2d(1, 2, 3, 2, 0),  // (8-3)/2 not whole
                      LayerSpec::flatten(),
                      LayerSpec::make_dense(18, 2)};
        CHECK_THROWS_AS(validate_spec(bad), ConfigError);
    }
    SUBCASE("dense width mismatch rejected") {
        NetworkSpec bad = ok;
        bad.layers[10].dense.in_dim = 100;
        CHECK_THROWS_AS(validate_spec(bad), ConfigError);
    }
    SUBCASE("final layer must be dense") {
        NetworkSpec bad = ok;
        bad.layers.push_back(LayerSpec::relu());
        CHECK_THROWS_AS(validate_spec(bad), ConfigError);
    }
    SUBCASE("conv output shape algebra") {
        // H' = (H + 2p - k)/stride + 1 across a few valid layers
        NetworkSpec s;
        s.in_ch = 1;
        s.in_h = 9;
        s.in_w = 9;
        s.layers = {LayerSpec::conv2d(1, 2, 3, 2, 0),  // (9-3)/2+1 = 4
                    LayerSpec::flatten(),
                    LayerSpec::make_dense(2 * 4 * 4, 3)};
        auto sh = validate_spec(s);
        CHECK(sh[1].dims == std::vector<int>{2, 4, 4});
    }
}

TEST_CASE("init_params") {
    NetworkSpec spec = toy_spec(8, 3);
    Parameters a = init_params(spec, 42);
    Parameters b = init_params(spec, 42);
    CHECK(a == b);

    Parameters c = init_params(spec, 43);
    CHECK(a.layers[0].weight.data != c.layers[0].weight.data);

    for (const auto& pt : a.layers) {
        for (float v : pt.bias.data) {
            CHECK(v == 0.0f);
        }
    }
    // the classifier head starts at zero (uniform first prediction)
    for (float v : a.layers.back().weight.data) {
        CHECK(v == 0.0f);
    }
}

TEST_CASE("He init std over many draws") {
    // hidden dense 100 -> 10: 1000 weights per seed, >= 1e4 draws over
    // 10 seeds
    NetworkSpec spec;
    spec.in_ch = 1;
    spec.in_h = 10;
    spec.in_w = 10;
    spec.layers = {LayerSpec::flatten(), LayerSpec::make_dense(100, 10),
                   LayerSpec::relu(), LayerSpec::make_dense(10, 4)};
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Parameters p = init_params(spec, seed);
        for (float v : p.layers[0].weight.data) {
            sum += v;
            sq += static_cast<double>(v) * v;
            ++count;
        }
    }
    REQUIRE(count >= 10000);
    const double mean = sum / count;
    const double std_dev = std::sqrt(sq / count - mean * mean);
    const double expected = std::sqrt(2.0 / 100.0);
    CHECK(std_dev == doctest::Approx(expected).epsilon(0.10));
}

TEST_CASE("identity convolution") {
    NetworkSpec spec;
    spec.in_ch = 2;
    spec.in_h = 6;
    spec.in_w = 6;
    spec.layers = {LayerSpec::conv2d(2, 2, 3, 1, 1), LayerSpec::flatten(),
                   LayerSpec::make_dense(72, 2)};
    Parameters params = init_params(spec, 1);
    // center tap of the matching channel = 1, everything else = 0
    auto& w = params.layers[0].weight.data;
    std::fill(w.begin(), w.end(), 0.0f);
    for (int oc = 0; oc < 2; ++oc) {
        w[((oc * 2 + oc) * 3 + 1) * 3 + 1] = 1.0f;
    }
    std::fill(params.layers[0].bias.data.begin(),
              params.layers[0].bias.data.end(), 0.0f);

    Tensor batch({1, 2, 6, 6});
    for (std::size_t i = 0; i < batch.data.size(); ++i) {
        batch.data[i] = 0.01f * static_cast<float>(i) - 0.3f;
    }
    ForwardCache cache;
    forward(spec, params, batch, &cache);
    // acts[1] is the conv output
    CHECK(cache.acts[1] == batch.data);
}

TEST_CASE("maxpool of a single window") {
    NetworkSpec spec;
    spec.in_ch = 1;
    spec.in_h = 2;
    spec.in_w = 2;
    spec.layers = {LayerSpec::maxpool2(), LayerSpec::flatten(),
                   LayerSpec::make_dense(1, 2)};
    Parameters params = init_params(spec, 1);
    Tensor batch({1, 1, 2, 2});
    batch.data = {1, 2, 3, 4};
    ForwardCache cache;
    forward(spec, params, batch, &cache);
    CHECK(cache.acts[1] == std::vector<float>{4.0f});
}

TEST_CASE("logits shape for the default stack") {
    NetworkSpec spec = small_cnn(64, 199);
    Parameters params = init_params(spec, 3);
    Tensor batch({2, 1, 64, 64});
    Tensor logits = forward(spec, params, batch);
    CHECK(logits.shape == std::vector<int>{2, 199});

    Tensor bad({2, 1, 32, 32});
    CHECK_THROWS_AS(forward(spec, params, bad), ConfigError);
}

TEST_CASE("softmax cross-entropy") {
    SUBCASE("uniform logits give ln(C)") {
        Tensor logits({1, 199});
        LossResult r = loss_softmax_xent(logits, {25});
        CHECK(r.loss == doctest::Approx(std::log(199.0)).epsilon(1e-9));
    }
    SUBCASE("saturated correct class, no overflow") {
        Tensor logits({1, 5});
        logits.data = {0, 0, 1000, 0, 0};
        LossResult r = loss_softmax_xent(logits, {2});
        CHECK(std::isfinite(r.loss));
        CHECK(r.loss < 1e-6);
    }
    SUBCASE("dlogits rows sum to zero") {
        Tensor logits({3, 7});
        for (std::size_t i = 0; i < logits.data.size(); ++i) {
            logits.data[i] = 0.37f * static_cast<float>(i % 5) - 1.0f;
        }
        LossResult r = loss_softmax_xent(logits, {0, 3, 6});
        for (int b = 0; b < 3; ++b) {
            double row_sum = 0.0;
            for (int c = 0; c < 7; ++c) {
                row_sum += r.dlogits.data[b * 7 + c];
            }
            CHECK(std::abs(row_sum) < 1e-7);
        }
    }
    SUBCASE("label out of range") {
        Tensor logits({1, 5});
        CHECK_THROWS_AS(loss_softmax_xent(logits, {5}), ConfigError);
        CHECK_THROWS_AS(loss_softmax_xent(logits, {-1}), ConfigError);
    }
}

TEST_CASE("backward basics") {
    NetworkSpec spec = toy_spec(8, 3);
    Parameters params = init_params(spec, 5);

    Tensor batch({2, 1, 8, 8});
    for (std::size_t i = 0; i < batch.data.size(); ++i) {
        batch.data[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    }

    SUBCASE("zero dlogits gives zero gradients") {
        ForwardCache cache;
        forward(spec, params, batch, &cache);
        Tensor dlogits({2, 3});
        Gradients g = backward(spec, params, cache, dlogits);
        for (const auto& pt : g.layers) {
            for (float v : pt.weight.data) CHECK(v == 0.0f);
            for (float v : pt.bias.data) CHECK(v == 0.0f);
        }
    }

    SUBCASE("duplicated rows match the single-row gradient") {
        Tensor single({1, 1, 8, 8});
        std::copy(batch.data.begin(), batch.data.begin() + 64,
                  single.data.begin());
        Tensor doubled({2, 1, 8, 8});
        std::copy(single.data.begin(), single.data.end(),
                  doubled.data.begin());
        std::copy(single.data.begin(), single.data.end(),
                  doubled.data.begin() + 64);

        ForwardCache c1, c2;
        Tensor l1 = forward(spec, params, single, &c1);
        Tensor l2 = forward(spec, params, doubled, &c2);
        Gradients g1 = backward(spec, params, c1,
                                loss_softmax_xent(l1, {1}).dlogits);
        Gradients g2 = backward(spec, params, c2,
                                loss_softmax_xent(l2, {1, 1}).dlogits);
        for (std::size_t l = 0; l < g1.layers.size(); ++l) {
            for (std::size_t j = 0; j < g1.layers[l].weight.data.size();
                 ++j) {
                CHECK(g2.layers[l].weight.data[j] ==
                      doctest::Approx(g1.layers[l].weight.data[j])
                          .epsilon(1e-5));
            }
        }
    }

    SUBCASE("mismatched cache rejected") {
        ForwardCache cache;
        forward(spec, params, batch, &cache);
        Tensor dlogits({3, 3});  // wrong batch
        CHECK_THROWS_AS(backward(spec, params, cache, dlogits), ConfigError);
    }
}

TEST_CASE("gradient check against central differences") {
    SUBCASE("toy spec, 32-bit") {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            CHECK(grad_check(toy_spec(8, 3), seed, 1e-3, Precision::f32) <
                  1e-3);
        }
    }
    SUBCASE("toy spec, 64-bit verification mode") {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            CHECK(grad_check(toy_spec(8, 3), seed, 1e-5, Precision::f64) <
                  1e-6);
        }
    }
    SUBCASE("layer variants in isolation and composed") {
        NetworkSpec dense_only;
        dense_only.in_ch = 1;
        dense_only.in_h = 4;
        dense_only.in_w = 4;
        dense_only.layers = {LayerSpec::flatten(),
                             LayerSpec::make_dense(16, 4)};

        NetworkSpec conv_relu;
        conv_relu.in_ch = 1;
        conv_relu.in_h = 6;
        conv_relu.in_w = 6;
        conv_relu.layers = {LayerSpec::conv2d(1, 2, 3, 1, 1),
                            LayerSpec::relu(), LayerSpec::flatten(),
                            LayerSpec::make_dense(72, 3)};

        NetworkSpec pool_only;
        pool_only.in_ch = 1;
        pool_only.in_h = 4;
        pool_only.in_w = 4;
        pool_only.layers = {LayerSpec::maxpool2(), LayerSpec::flatten(),
                            LayerSpec::make_dense(4, 3)};

        NetworkSpec strided;
        strided.in_ch = 1;
        strided.in_h = 7;
        strided.in_w = 7;
        strided.layers = {LayerSpec::conv2d(1, 2, 3, 2, 0),
                          LayerSpec::relu(), LayerSpec::flatten(),
                          LayerSpec::make_dense(2 * 3 * 3, 3)};

        NetworkSpec composed;
        composed.in_ch = 1;
        composed.in_h = 8;
        composed.in_w = 8;
        composed.layers = {LayerSpec::conv2d(1, 2, 3, 1, 1),
                           LayerSpec::relu(),
                           LayerSpec::maxpool2(),
                           LayerSpec::conv2d(2, 3, 3, 1, 1),
                           LayerSpec::relu(),
                           LayerSpec::maxpool2(),
                           LayerSpec::flatten(),
                           LayerSpec::make_dense(3 * 2 * 2, 4),
                           LayerSpec::relu(),
                           LayerSpec::make_dense(4, 3)};

        for (const auto& spec :
             {dense_only, conv_relu, pool_only, strided, composed}) {
            CHECK(grad_check(spec, 7, 1e-5, Precision::f64) < 1e-6);
        }
    }
}

TEST_CASE("predict_topk") {
    SUBCASE("all-equal logits break ties by class index") {
        std::vector<float> logits = {0.5f, 0.5f, 0.5f};
        auto top = predict_topk(logits, 3);
        REQUIRE(top.size() == 3);
        CHECK(top[0].first == 0);
        CHECK(top[1].first == 1);
        CHECK(top[2].first == 2);
        for (const auto& [cls, p] : top) {
            CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
        }
    }
    SUBCASE("probabilities sum to one") {
        std::vector<float> logits = {-2.0f, 0.5f, 3.0f, 1.0f, -1.0f};
        auto top = predict_topk(logits, 5);
        double sum = 0.0;
        for (const auto& [cls, p] : top) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-5);
        CHECK(top[0].first == 2);
    }
    SUBCASE("k out of range") {
        std::vector<float> logits = {0.0f, 1.0f};
        CHECK_THROWS_AS(predict_topk(logits, 3), ConfigError);
        CHECK_THROWS_AS(predict_topk(logits, 0), ConfigError);
    }
}

TEST_CASE("spec json round trip") {
    NetworkSpec spec = small_cnn(64, 59);
    NetworkSpec back = spec_from_json(spec_to_json(spec));
    CHECK(spec_to_json(back) == spec_to_json(spec));
    CHECK(output_classes(back) == 59);

    CHECK_THROWS_AS(spec_from_json("{\"input\":[1,8,8],\"layers\":"
                                   "[{\"type\":\"blob\"}]}"),
                    FormatError);
    CHECK_THROWS_AS(spec_from_json("not json"), FormatError);
}

TEST_CASE("forward determinism") {
    NetworkSpec spec = toy_spec(8, 3);
    Parameters params = init_params(spec, 9);
    Tensor batch({3, 1, 8, 8});
    for (std::size_t i = 0; i < batch.data.size(); ++i) {
        batch.data[i] = static_cast<float>((i * 13) % 100) / 100.0f;
    }
    Tensor a = forward(spec, params, batch);
    Tensor b = forward(spec, params, batch);
    CHECK(a.data == b.data);
}
