#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "nsfx/errors.hpp"
#include "nsfx/training.hpp"

using namespace nsfx;

namespace {

TrainConfig toy_config(NoiseSpec noise, std::size_t iterations = 200) {
    TrainConfig c;
    c.input_shape = {2};
    c.classes = 2;
    c.noise = noise;
    c.batch_size = 16;
    c.iterations = iterations;
    c.schedule = {0.05, {iterations * 3 / 4}, 10.0};
    c.record_interval = 50;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(LrSchedule, Examples) {
    const LrSchedule s{0.1, {12000}, 10.0};
    EXPECT_DOUBLE_EQ(s.at(0), 0.1);
    EXPECT_DOUBLE_EQ(s.at(11999), 0.1);
    EXPECT_DOUBLE_EQ(s.at(12000), 0.01);
    const LrSchedule two{1.0, {100, 200}, 10.0};
    EXPECT_DOUBLE_EQ(two.at(250), 0.01);
    EXPECT_DOUBLE_EQ(two.at(150), 0.1);
}

TEST(Sgd, VanillaStep) {
    std::vector<double> p{1.0, -2.0}, g{0.5, 0.25}, v{0.0, 0.0};
    sgd_step(p, g, v, {0.1, 0.0, 0.0}, 0);
    EXPECT_DOUBLE_EQ(p[0], 0.95);
    EXPECT_DOUBLE_EQ(p[1], -2.025);
}

TEST(Sgd, ZeroGradientKeepsParams) {
    std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
    sgd_step(p, g, v, {0.1, 0.9, 0.0}, 0);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Sgd, MomentumHandIteration) {
    std::vector<double> p{1.0}, g{0.5}, v{0.0};
    sgd_step(p, g, v, {0.1, 0.9, 0.0}, 0);
    EXPECT_NEAR(v[0], -0.05, 1e-15);
    EXPECT_NEAR(p[0], 0.95, 1e-15);
    sgd_step(p, g, v, {0.1, 0.9, 0.0}, 1);
    EXPECT_NEAR(v[0], -0.095, 1e-15);
    EXPECT_NEAR(p[0], 0.855, 1e-15);
}

TEST(Sgd, WeightDecayTerm) {
    std::vector<double> p{2.0}, g{0.0}, v{0.0};
    sgd_step(p, g, v, {0.1, 0.0, 0.5}, 0);
    EXPECT_DOUBLE_EQ(p[0], 1.9);
}

TEST(Sgd, NonFiniteGradientDiverges) {
    std::vector<double> p{1.0}, g{NAN}, v{0.0};
    try {
        sgd_step(p, g, v, {0.1, 0.9, 0.0}, 17);
        FAIL() << "expected DivergedError";
    } catch (const DivergedError& e) {
        EXPECT_EQ(e.iteration(), 17u);
    }
    std::vector<double> short_v;
    EXPECT_THROW(sgd_step(p, std::vector<double>{0.0}, short_v, {}, 0), ShapeError);
}

TEST(Sgd, DecayExemptParameters) {
    TrainConfig c = toy_config({});
    c.input_shape = {1, 4, 4};
    c.layers = {LayerSpec::conv2d(1, 2), LayerSpec::prelu(2), LayerSpec::flatten(), LayerSpec::dense(32, 3)};
    Model m = init_model(c);
    for (const Parameter* p : m.net.parameters()) {
        const bool is_weight = p->name.ends_with(".weight");
        EXPECT_EQ(p->decays, is_weight) << p->name;
        if (!p->decays) {
            std::vector<double> value(p->value.values().begin(), p->value.values().end());
            std::vector<double> v(value.size(), 0.0), g(value.size(), 0.0);
            const auto before = value;
            sgd_step(value, g, v, {0.1, 0.9, 0.0}, 0);
            EXPECT_EQ(value, before);
        }
    }
}

TEST(TrainConfig, Validation) {
    TrainConfig c = toy_config({});
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.momentum = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.schedule.base_lr = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.weight_decay = -1e-3;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.record_interval = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Evaluate, ZeroModelPredictsClassZero) {
    const std::size_t classes = 4;
    Dataset ds;
    ds.class_count = classes;
    ds.images = Tensor({40, 3}, 0.7);
    for (std::size_t i = 0; i < 40; ++i) ds.labels.push_back(i % classes);
    ds.provenance.resize(40);
    Rng rng(1);
    Model m{Network({3}, {}, rng), HeadParams::zeros(classes, 3)};
    EXPECT_DOUBLE_EQ(evaluate(m, ds), 100.0 * (1.0 - 1.0 / classes));
    for (std::size_t y : predict(m, ds)) EXPECT_EQ(y, 0u);
    EXPECT_DOUBLE_EQ(average_prediction(m, ds), 0.25);
}

TEST(Train, SeparableToyReachesLowError) {
    const Dataset tr = synthetic_two_gaussians(200, 2, 10.0, 1);
    const Dataset te = synthetic_two_gaussians(500, 2, 10.0, 2);
    const auto r = train(toy_config({}), tr, te);
    EXPECT_LT(r.metrics.back().test_err, 1.0);
    EXPECT_EQ(evaluate(r.model, tr), 0.0);
}

TEST(Train, IndistinguishableClassesNearChance) {
    const Dataset tr = synthetic_two_gaussians(200, 2, 0.0, 1);
    const Dataset te = synthetic_two_gaussians(1000, 2, 0.0, 2);
    const auto r = train(toy_config({}), tr, te);
    EXPECT_NEAR(r.metrics.back().test_err, 50.0, 5.0);
}

TEST(Train, LossDecreases) {
    const Dataset tr = synthetic_two_gaussians(200, 2, 2.0, 3);
    TrainConfig c = toy_config({}, 500);
    c.schedule.base_lr = 0.01;
    const auto r = train(c, tr, tr);
    EXPECT_LT(r.metrics.back().loss, r.metrics.front().loss);
    EXPECT_EQ(r.metrics.back().iteration, 500u);
}

TEST(Train, RecordingPoints) {
    const Dataset tr = synthetic_two_gaussians(50, 2, 4.0, 3);
    auto c = toy_config({}, 0);
    auto r = train(c, tr, tr);
    ASSERT_EQ(r.metrics.size(), 1u);
    EXPECT_EQ(r.metrics[0].iteration, 0u);

    c = toy_config({}, 120);
    c.record_interval = 50;
    std::vector<std::size_t> seen;
    r = train(c, tr, tr, [&](const MetricsRecord& m) { seen.push_back(m.iteration); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{0, 50, 100, 120}));
    for (const auto& m : r.metrics) {
        EXPECT_GE(m.train_err, 0.0);
        EXPECT_LE(m.test_err, 100.0);
        EXPECT_GT(m.p_bar, 0.0);
        EXPECT_LT(m.p_bar, 1.0);
        EXPECT_EQ(m.ms, 0.0);
    }
    EXPECT_DOUBLE_EQ(r.metrics.back().lr, 0.005);
}

TEST(Train, Deterministic) {
    const Dataset tr = synthetic_two_gaussians(100, 2, 3.0, 4);
    const Dataset te = synthetic_two_gaussians(100, 2, 3.0, 5);
    const auto c = toy_config(NoiseSpec::from_alpha_squared(NoiseVariant::annealed, 0.1));
    const auto a = train(c, tr, te), b = train(c, tr, te);
    ASSERT_EQ(a.metrics.size(), b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
        EXPECT_EQ(a.metrics[i].p_bar, b.metrics[i].p_bar);
        EXPECT_EQ(a.metrics[i].test_err, b.metrics[i].test_err);
    }
    EXPECT_EQ(a.model.head.W, b.model.head.W);
}

TEST(Train, ZeroAlphaVariantsShareTrajectory) {
    const Dataset tr = synthetic_two_gaussians(100, 2, 3.0, 4);
    auto c = toy_config({});
    c.layers = {LayerSpec::dense(2, 4), LayerSpec::prelu(4)};
    const auto none = train(c, tr, tr);
    c.noise = {NoiseVariant::annealed, 0.0};
    const auto annealed = train(c, tr, tr);
    c.noise = {NoiseVariant::amplitude, 0.0};
    const auto amplitude = train(c, tr, tr);
    EXPECT_EQ(annealed.model.head.W, amplitude.model.head.W);
    EXPECT_EQ(annealed.model.head.b, amplitude.model.head.b);
    for (std::size_t i = 0; i < none.metrics.size(); ++i) {
        EXPECT_NEAR(none.metrics[i].loss, annealed.metrics[i].loss, 1e-12);
        EXPECT_EQ(annealed.metrics[i].loss, amplitude.metrics[i].loss);
    }
}

TEST(Train, RejectsTooManyClasses) {
    Dataset tr = synthetic_two_gaussians(10, 2, 3.0, 1);
    auto c = toy_config({});
    tr.class_count = 3;
    EXPECT_THROW(train(c, tr, tr), ConfigError);
}

TEST(Train, DivergenceIsReported) {
    const Dataset tr = synthetic_two_gaussians(100, 2, 50.0, 1);
    auto c = toy_config({}, 300);
    c.layers = {LayerSpec::dense(2, 8), LayerSpec::dense(8, 8)};
    c.schedule = {1e3, {}, 10.0};
    c.momentum = 0.99;
    EXPECT_THROW(train(c, tr, tr), DivergedError);
}
