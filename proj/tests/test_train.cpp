#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "capspike/train.hpp"
#include "capspike/rng.hpp"

#include <cmath>
#include <cstring>
#include <vector>

using namespace capspike;

namespace {

// Two linearly separable clusters along the first coordinate, presented as
// 1x1x2 "images" so the full dataset plumbing applies.
LabeledImageSet separable_toy(int n, std::uint64_t seed) {
    LabeledImageSet ds;
    ds.images = Tensor({n, 1, 1, 2});
    ds.class_names = {"left", "right"};
    RandomStream rng(seed);
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        float x = label == 0 ? rng.uniform(0.0f, 0.4f) : rng.uniform(0.6f, 1.0f);
        ds.images[static_cast<std::size_t>(i) * 2 + 0] = x;
        ds.images[static_cast<std::size_t>(i) * 2 + 1] = rng.uniform();
        ds.labels.push_back(label);
        ds.patient_ids.push_back(i);
    }
    return ds;
}

ModelGraph toy_model(std::uint64_t seed) {
    return ModelGraph({1, 1, 2}, {LayerSpec::flatten(), LayerSpec::dense(2)}, 2, seed);
}

ModelGraph two_dense_model(std::uint64_t seed) {
    return ModelGraph({1, 1, 2},
                      {LayerSpec::flatten(), LayerSpec::dense(6), LayerSpec::relu(),
                       LayerSpec::dense(2)},
                      2, seed);
}

std::vector<float> snapshot(const ModelGraph& m) {
    std::vector<float> out;
    for (const Param& p : m.params())
        out.insert(out.end(), p.value.data(), p.value.data() + p.value.size());
    return out;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

TEST_CASE("lr_at: cyclical triangular oracle values") {
    auto s = LRSchedule::cyclical(0.001, 0.006, 4);
    CHECK(lr_at(s, 0) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr_at(s, 4) == doctest::Approx(0.006).epsilon(1e-12));
    CHECK(lr_at(s, 8) == doctest::Approx(0.001).epsilon(1e-12));
    // Halfway up and halfway down.
    CHECK(lr_at(s, 2) == doctest::Approx(0.0035).epsilon(1e-12));
    CHECK(lr_at(s, 6) == doctest::Approx(0.0035).epsilon(1e-12));
}

TEST_CASE("lr_at: cyclical is periodic and bounded") {
    auto s = LRSchedule::cyclical(0.002, 0.01, 3);
    for (long long t = 0; t < 30; ++t) {
        double lr = lr_at(s, t);
        CHECK(lr >= 0.002 - 1e-15);
        CHECK(lr <= 0.01 + 1e-15);
        CHECK(lr_at(s, t + 6) == doctest::Approx(lr).epsilon(1e-12));
    }
}

TEST_CASE("lr_at: exponential decay steps down per epoch") {
    auto s = LRSchedule::exponential(0.1, 0.5, 10);
    CHECK(lr_at(s, 0) == doctest::Approx(0.1));
    CHECK(lr_at(s, 9) == doctest::Approx(0.1));
    CHECK(lr_at(s, 10) == doctest::Approx(0.05));
    CHECK(lr_at(s, 25) == doctest::Approx(0.025));

    auto c = LRSchedule::constant(0.007);
    CHECK(lr_at(c, 0) == doctest::Approx(0.007));
    CHECK(lr_at(c, 1000) == doctest::Approx(0.007));
}

TEST_CASE("lr schedule factories validate their domains") {
    CHECK_THROWS_AS(LRSchedule::constant(0.0), contract_error);
    CHECK_THROWS_AS(LRSchedule::cyclical(0.01, 0.001, 4), contract_error);
    CHECK_THROWS_AS(LRSchedule::cyclical(0.001, 0.01, 0), contract_error);
    CHECK_THROWS_AS(LRSchedule::exponential(0.1, 0.0, 10), contract_error);
    CHECK_THROWS_AS(LRSchedule::exponential(0.1, 0.9, 0), contract_error);
    auto s = LRSchedule::constant(0.1);
    CHECK_THROWS_AS(lr_at(s, -1), contract_error);
}

TEST_CASE("train: linearly separable toy reaches 95% in 50 epochs") {
    auto ds = separable_toy(40, 21);
    ModelGraph model = toy_model(3);
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Adam;
    // Adam's per-coordinate step is bounded by lr; the init scale for
    // fan-in 2 is ~1.7, so the rate must let 250 steps cross that range.
    cfg.schedule = LRSchedule::constant(0.05);
    cfg.batch_size = 8;
    cfg.epochs = 50;
    cfg.seed = 5;
    auto result = train(model, ds, cfg);
    REQUIRE(result.history.size() == 50);
    CHECK(result.history.back().train_accuracy >= 0.95);
    // Epoch indices are monotone and losses stay finite.
    for (std::size_t e = 0; e < result.history.size(); ++e) {
        CHECK(result.history[e].epoch == static_cast<int>(e));
        CHECK(std::isfinite(result.history[e].loss));
    }
    CHECK(result.history.back().loss < result.history.front().loss);
    CHECK(dataset_accuracy(model, ds) >= 0.95);
}

TEST_CASE("train: freeze_mask covering all layers leaves parameters untouched") {
    auto ds = separable_toy(20, 2);
    ModelGraph model = two_dense_model(7);
    auto before = snapshot(model);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.freeze_mask = {0, 1, 2, 3};
    cfg.seed = 9;
    train(model, ds, cfg);
    CHECK(bitwise_equal(before, snapshot(model)));
}

TEST_CASE("train: partial freeze keeps the frozen slice bit-identical") {
    auto ds = separable_toy(24, 4);
    ModelGraph model = two_dense_model(11);
    Tensor w1_before = model.param("layer1.weight").clone();
    Tensor b1_before = model.param("layer1.bias").clone();
    Tensor w3_before = model.param("layer3.weight").clone();
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 6;
    cfg.freeze_mask = {1};
    cfg.seed = 13;
    train(model, ds, cfg);
    CHECK(std::memcmp(w1_before.data(), model.param("layer1.weight").data(),
                      w1_before.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(b1_before.data(), model.param("layer1.bias").data(),
                      b1_before.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(w3_before.data(), model.param("layer3.weight").data(),
                      w3_before.size() * sizeof(float)) != 0);
}

TEST_CASE("train: zero lr multiplier is freezing, step for step") {
    auto ds = separable_toy(24, 6);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 6;
    cfg.seed = 17;

    ModelGraph frozen = two_dense_model(19);
    TrainConfig with_freeze = cfg;
    with_freeze.freeze_mask = {1};
    train(frozen, ds, with_freeze);

    ModelGraph scaled = two_dense_model(19);
    TrainConfig with_mult = cfg;
    with_mult.group_lr_multipliers[1] = 0.0;
    train(scaled, ds, with_mult);

    CHECK(bitwise_equal(snapshot(frozen), snapshot(scaled)));
}

TEST_CASE("train: differential multipliers change the update magnitude") {
    auto ds = separable_toy(24, 8);
    ModelGraph model = two_dense_model(23);
    Tensor w1_init = model.param("layer1.weight").clone();
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.schedule = LRSchedule::constant(0.05);
    cfg.epochs = 1;
    cfg.batch_size = 24; // single step
    cfg.seed = 3;
    cfg.group_lr_multipliers[1] = 0.5;

    ModelGraph full = two_dense_model(23);
    TrainConfig full_cfg = cfg;
    full_cfg.group_lr_multipliers.clear();
    train(full, ds, full_cfg);
    train(model, ds, cfg);

    // One SGD step: delta scales exactly with the multiplier.
    const Tensor& w_half = model.param("layer1.weight");
    const Tensor& w_full = full.param("layer1.weight");
    for (std::size_t i = 0; i < w1_init.size(); ++i) {
        double d_half = static_cast<double>(w_half[i]) - w1_init[i];
        double d_full = static_cast<double>(w_full[i]) - w1_init[i];
        CHECK(std::fabs(d_half - 0.5 * d_full) < 1e-6);
    }
}

TEST_CASE("train: lr zero leaves parameters unchanged") {
    auto ds = separable_toy(12, 10);
    for (OptimizerKind opt : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
        ModelGraph model = two_dense_model(29);
        auto before = snapshot(model);
        TrainConfig cfg;
        cfg.optimizer = opt;
        cfg.schedule.kind = LRSchedule::Kind::Constant;
        cfg.schedule.base_lr = 0.0; // field set directly; factories demand > 0
        cfg.epochs = 2;
        cfg.batch_size = 4;
        train(model, ds, cfg);
        CHECK(bitwise_equal(before, snapshot(model)));
    }
}

TEST_CASE("train: identical seed gives identical history and parameters") {
    auto ds = separable_toy(30, 12);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 7;
    cfg.seed = 31;

    ModelGraph a = two_dense_model(37);
    ModelGraph b = two_dense_model(37);
    auto ra = train(a, ds, cfg);
    auto rb = train(b, ds, cfg);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t e = 0; e < ra.history.size(); ++e) {
        CHECK(ra.history[e].loss == rb.history[e].loss);
        CHECK(ra.history[e].train_accuracy == rb.history[e].train_accuracy);
        CHECK(ra.history[e].lr == rb.history[e].lr);
    }
    CHECK(bitwise_equal(snapshot(a), snapshot(b)));

    ModelGraph c = two_dense_model(37);
    TrainConfig other = cfg;
    other.seed = 32;
    train(c, ds, other);
    CHECK(!bitwise_equal(snapshot(a), snapshot(c)));
}

TEST_CASE("train: non-finite loss aborts with the offending step") {
    auto ds = separable_toy(4, 14);
    ModelGraph model = toy_model(41);
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.schedule.kind = LRSchedule::Kind::Constant;
    cfg.schedule.base_lr = 1e38; // drives weights past float range in a few steps
    cfg.batch_size = 4;
    cfg.epochs = 50;
    bool threw = false;
    try {
        train(model, ds, cfg);
    } catch (const numeric_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
    CHECK(threw);
    // Tape nodes were cleaned up; the model still runs a plain forward.
    for (const Param& p : model.params()) CHECK(p.value.node == -1);
}

TEST_CASE("train: cyclical schedule is visible in the per-epoch lr column") {
    auto ds = separable_toy(16, 16);
    ModelGraph model = toy_model(43);
    TrainConfig cfg;
    cfg.schedule = LRSchedule::cyclical(0.001, 0.006, 4);
    cfg.batch_size = 8; // 2 steps per epoch
    cfg.epochs = 6;
    auto result = train(model, ds, cfg);
    // Epoch e starts at step 2e; lr follows the triangle at those steps.
    for (int e = 0; e < 6; ++e)
        CHECK(result.history[static_cast<std::size_t>(e)].lr ==
              doctest::Approx(lr_at(cfg.schedule, 2 * e)).epsilon(1e-12));
}

TEST_CASE("train: validation accuracy recorded when a validation set is given") {
    auto ds = separable_toy(20, 18);
    auto val = separable_toy(10, 19);
    ModelGraph model = toy_model(47);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 5;
    auto result = train(model, ds, cfg, &val);
    for (const EpochStats& s : result.history) {
        CHECK(s.val_accuracy >= 0.0);
        CHECK(s.val_accuracy <= 1.0);
    }
    ModelGraph fresh = toy_model(47);
    auto without = train(fresh, ds, cfg);
    for (const EpochStats& s : without.history) CHECK(s.val_accuracy < 0.0);
}

TEST_CASE("train: margin loss with reconstruction on a miniature capsule model") {
    // 6x6 input, one conv, primary caps, 2 class caps, 2-layer decoder.
    std::vector<LayerSpec> layers = {
        LayerSpec::conv2d(4, 3, 1, 0),   LayerSpec::relu(),
        LayerSpec::primary_caps(2, 2, 3, 2), LayerSpec::class_caps(2, 3, 2),
        LayerSpec::decoder_dense(8),     LayerSpec::relu(),
        LayerSpec::decoder_dense(36),
    };
    ModelGraph model({1, 6, 6}, layers, 2, 53);

    LabeledImageSet ds;
    ds.images = Tensor({8, 1, 6, 6});
    RandomStream rng(20);
    for (std::size_t i = 0; i < ds.images.size(); ++i) ds.images[i] = rng.uniform();
    for (int i = 0; i < 8; ++i) {
        ds.labels.push_back(i % 2);
        ds.patient_ids.push_back(i);
    }
    ds.class_names = {"a", "b"};

    auto before = snapshot(model);
    TrainConfig cfg;
    cfg.loss = LossKind::CapsuleMargin;
    cfg.reconstruction_weight = 0.0005f;
    cfg.schedule = LRSchedule::constant(0.005);
    cfg.epochs = 3;
    cfg.batch_size = 4;
    auto result = train(model, ds, cfg);
    for (const EpochStats& s : result.history) CHECK(std::isfinite(s.loss));
    CHECK(!bitwise_equal(before, snapshot(model)));

    // Margin loss demands a ClassCaps layer.
    ModelGraph plain = toy_model(1);
    auto toy = separable_toy(8, 1);
    TrainConfig bad;
    bad.loss = LossKind::CapsuleMargin;
    CHECK_THROWS_AS(train(plain, toy, bad), contract_error);
}

TEST_CASE("train: contract violations") {
    ModelGraph model = toy_model(5);
    LabeledImageSet empty;
    TrainConfig cfg;
    CHECK_THROWS_AS(train(model, empty, cfg), contract_error);

    auto ds = separable_toy(8, 22);
    TrainConfig bad_batch;
    bad_batch.batch_size = 0;
    CHECK_THROWS_AS(train(model, ds, bad_batch), contract_error);

    TrainConfig bad_epochs;
    bad_epochs.epochs = 0;
    CHECK_THROWS_AS(train(model, ds, bad_epochs), contract_error);

    TrainConfig bad_freeze;
    bad_freeze.freeze_mask = {9};
    CHECK_THROWS_AS(train(model, ds, bad_freeze), contract_error);

    TrainConfig bad_mult;
    bad_mult.group_lr_multipliers[0] = -1.0;
    CHECK_THROWS_AS(train(model, ds, bad_mult), contract_error);

    auto mislabeled = separable_toy(8, 23);
    mislabeled.labels[3] = 2; // model has two classes
    CHECK_THROWS_AS(train(model, mislabeled, cfg), contract_error);
}
