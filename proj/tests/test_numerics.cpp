#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "nsfx/errors.hpp"
#include "nsfx/numerics.hpp"
#include "nsfx/rng.hpp"
#include "nsfx/tensor.hpp"

using namespace nsfx;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(shape_size({4, 0, 2}), 0u);
}

TEST(Tensor, RowMajorAccess) {
    const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(m.at(1, 0), 4.0);
    EXPECT_EQ(m.row(1)[2], 6.0);
    EXPECT_EQ(m.reshaped({3, 2}).at(2, 1), 6.0);
    EXPECT_THROW(m.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, RequireFinite) {
    Tensor t({3}, 0.0);
    EXPECT_NO_THROW(require_finite(t, "t"));
    t[1] = std::nan("");
    EXPECT_THROW(require_finite(t, "t"), NumericError);
}

TEST(Softmax, UniformOnEqualLogits) {
    const auto p = stable_softmax(std::vector<double>{0, 0, 0, 0});
    for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LogThreeRatio) {
    for (double c : {-50.0, 0.0, 3.7, 700.0}) {
        const auto p = stable_softmax(std::vector<double>{c, c + std::log(3.0)});
        EXPECT_NEAR(p[0], 0.25, 1e-12);
        EXPECT_NEAR(p[1], 0.75, 1e-12);
    }
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(5);
    std::vector<double> f(7), g(7);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = 3.0 * rng.normal();
        g[i] = f[i] + 100.0;
    }
    const auto p = stable_softmax(f), q = stable_softmax(g);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
}

TEST(Softmax, RejectsBadInput) {
    EXPECT_THROW(stable_softmax(std::vector<double>{}), InvalidInput);
    EXPECT_THROW(stable_softmax(std::vector<double>{1.0, INFINITY}), InvalidInput);
    EXPECT_THROW(stable_softmax(std::vector<double>{std::nan(""), 0.0}), InvalidInput);
}

TEST(Softmax, ProbabilityVectorUnderLargeLogits) {
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 2 + rng.index(20);
        std::vector<double> f(n);
        for (auto& v : f) v = (rng.uniform() * 2.0 - 1.0) * 1e4;
        const auto p = stable_softmax(f);
        double sum = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Norm, Examples) {
    EXPECT_DOUBLE_EQ(l2_norm(std::vector<double>{3, 4}), 5.0);
    EXPECT_EQ(l2_norm(std::vector<double>{0, 0, 0}), 0.0);
    Rng rng(3);
    std::vector<double> v(9), w(9);
    const double c = -2.75;
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = rng.normal();
        w[i] = c * v[i];
    }
    EXPECT_NEAR(l2_norm(w), std::fabs(c) * l2_norm(v), 1e-12);
}

TEST(Cosine, Examples) {
    const std::vector<double> u{0.3, -1.2, 2.0};
    EXPECT_DOUBLE_EQ(cosine_angle(u, u), 1.0);
    EXPECT_NEAR(cosine_angle(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, 0.0);
    EXPECT_DOUBLE_EQ(cosine_angle(std::vector<double>{1, 0}, std::vector<double>{-1, 0}), -1.0);
    EXPECT_THROW(cosine_angle(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DegenerateVector);
}

TEST(Cosine, AlwaysClamped) {
    Rng rng(17);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 1 + rng.index(30);
        std::vector<double> u(n), v(n);
        const bool near_parallel = trial % 2 == 0;
        const double scale = 0.1 + 10.0 * rng.uniform();
        for (std::size_t i = 0; i < n; ++i) {
            u[i] = rng.normal();
            v[i] = near_parallel ? (trial % 4 == 0 ? scale : -scale) * u[i] + 1e-12 * rng.normal() : rng.normal();
        }
        const double c = cosine_angle(u, v);
        EXPECT_GE(c, -1.0);
        EXPECT_LE(c, 1.0);
    }
}

TEST(Rng, GoldenSequence) {
    Rng r(42);
    EXPECT_EQ(r.next_u64(), 0x15780b2e0c2ec716ULL);
    EXPECT_EQ(r.next_u64(), 0x6104d9866d113a7eULL);
    EXPECT_EQ(r.next_u64(), 0xae17533239e499a1ULL);
    EXPECT_EQ(Rng(0).next_u64(), 0x99ec5f36cb75f2b4ULL);
    EXPECT_EQ(Rng::substream(7, 3).next_u64(), 0xbd5db8d17cefef09ULL);
}

TEST(Rng, GoldenUniformAndNormal) {
    EXPECT_DOUBLE_EQ(Rng(42).uniform(), 0.08386297105988227);
    Rng r(42);
    EXPECT_NEAR(r.normal(), -1.6132237513849164, 1e-15);
    EXPECT_NEAR(r.normal(), 0.7816920450573492, 1e-15);
}

TEST(Rng, DrawAccounting) {
    Rng r(1);
    r.uniform();
    EXPECT_EQ(r.words_consumed(), 1u);
    r.normal();
    EXPECT_EQ(r.words_consumed(), 3u);
    r.abs_normal();
    EXPECT_EQ(r.words_consumed(), 5u);
}

TEST(Rng, AbsNormalIsAbsoluteOfNormal) {
    Rng a(9), b(9);
    for (int i = 0; i < 1000; ++i) {
        const double x = a.abs_normal();
        EXPECT_GE(x, 0.0);
        EXPECT_EQ(x, std::fabs(b.normal()));
    }
}

TEST(Rng, HalfNormalMean) {
    Rng r(2024);
    double sum = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) sum += r.abs_normal();
    EXPECT_NEAR(sum / n, std::sqrt(2.0 / std::numbers::pi), 0.01);
}

TEST(Rng, Reproducible) {
    Rng a(42), b(42);
    for (int i = 0; i < 100000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformRangeAndIndex) {
    Rng r(8);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const double u = r.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LE(u, 1.0);
        ++counts[r.index(7)];
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, SubstreamsDiffer) {
    EXPECT_NE(Rng::substream(1, streams::init).next_u64(), Rng::substream(1, streams::noise).next_u64());
    EXPECT_NE(Rng::substream(1, streams::shuffle).next_u64(), Rng::substream(2, streams::shuffle).next_u64());
}
