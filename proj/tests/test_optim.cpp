// Optimizer tests: the inverse-sqrt schedule against its closed form, and
// Adam against an independently hand-rolled transcription of the published
// recurrences.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "packmt/optim.hpp"

using packmt::AdamState;
using packmt::LrSchedule;
using packmt::Tensor;

TEST_CASE("lr schedule hits the pinned values") {
    LrSchedule s{3e-4, 4500};
    CHECK(packmt::lr_at(s, 4500) == Catch::Approx(3e-4).epsilon(1e-15));
    CHECK(packmt::lr_at(s, 2250) == Catch::Approx(1.5e-4).epsilon(1e-15));
    CHECK(packmt::lr_at(s, 18000) == Catch::Approx(1.5e-4).epsilon(1e-12));
    CHECK_THROWS_AS(packmt::lr_at(s, 0), packmt::ContractViolation);
}

TEST_CASE("lr schedule warms up then decays, continuous at the peak") {
    LrSchedule s{3e-4, 100};
    double prev = 0.0;
    for (std::int64_t t = 1; t <= 100; ++t) {
        const double lr = packmt::lr_at(s, t);
        REQUIRE(lr >= prev);
        REQUIRE(lr <= s.lr_max);
        prev = lr;
    }
    for (std::int64_t t = 100; t <= 2000; ++t) {
        const double lr = packmt::lr_at(s, t);
        REQUIRE(lr <= prev + 1e-18);
        prev = lr;
    }
    CHECK(std::abs(packmt::lr_at(s, 99) - packmt::lr_at(s, 100)) < s.lr_max / 50.0);
}

TEST_CASE("adam matches a hand-rolled recurrence on a quadratic") {
    // Oracle: direct scalar transcription of the Adam recurrences, kept
    // separate from the library loop on purpose.
    const std::vector<double> curv{0.5, 1.0, 2.0, 4.0};
    std::vector<double> ref_p{1.0, -2.0, 0.5, 3.0};
    std::vector<double> ref_m(4, 0.0), ref_v(4, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
    for (int t = 1; t <= 10; ++t) {
        for (int i = 0; i < 4; ++i) {
            const double g = curv[static_cast<std::size_t>(i)] * ref_p[static_cast<std::size_t>(i)];
            ref_m[static_cast<std::size_t>(i)] = b1 * ref_m[static_cast<std::size_t>(i)] + (1.0 - b1) * g;
            ref_v[static_cast<std::size_t>(i)] = b2 * ref_v[static_cast<std::size_t>(i)] + (1.0 - b2) * g * g;
            const double mhat = ref_m[static_cast<std::size_t>(i)] / (1.0 - std::pow(b1, t));
            const double vhat = ref_v[static_cast<std::size_t>(i)] / (1.0 - std::pow(b2, t));
            ref_p[static_cast<std::size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }

    Tensor<double> p({4}, {1.0, -2.0, 0.5, 3.0});
    AdamState<double> st;
    for (int t = 1; t <= 10; ++t) {
        Tensor<double> g = Tensor<double>::zeros({4});
        for (int i = 0; i < 4; ++i) g[i] = curv[static_cast<std::size_t>(i)] * p[i];
        packmt::adam_step(p, g, st, lr);
    }
    CHECK(st.t == 10);
    for (int i = 0; i < 4; ++i)
        CHECK(p[i] == Catch::Approx(ref_p[static_cast<std::size_t>(i)]).margin(1e-12));
}

TEST_CASE("first adam step moves by about lr against the gradient sign") {
    Tensor<double> p({2}, {0.0, 0.0});
    Tensor<double> g({2}, {3.7, -0.02});
    AdamState<double> st;
    packmt::adam_step(p, g, st, 1e-3);
    CHECK(p[0] == Catch::Approx(-1e-3).epsilon(1e-4));
    CHECK(p[1] == Catch::Approx(1e-3).epsilon(1e-3));
}

TEST_CASE("zero gradient on fresh state leaves the parameter bitwise unchanged") {
    Tensor<float> p({3}, {1.25f, -0.0f, 3e-7f});
    const Tensor<float> orig = p;
    AdamState<float> st;
    for (int t = 0; t < 5; ++t) packmt::adam_step(p, Tensor<float>::zeros({3}), st, 0.1);
    CHECK(std::memcmp(p.data.data(), orig.data.data(), 3 * sizeof(float)) == 0);
}

TEST_CASE("trainable mask skips elements outright") {
    Tensor<float> p({4}, {1.0f, 2.0f, 3.0f, 4.0f});
    const Tensor<float> orig = p;
    const std::vector<std::uint8_t> mask{1, 0, 0, 1};
    AdamState<float> st;
    for (int t = 0; t < 5; ++t) {
        Tensor<float> g({4}, {10.0f, 1e6f, -1e6f, -10.0f});
        packmt::adam_step(p, g, st, 0.01, mask.data());
    }
    CHECK(std::memcmp(&p[1], &orig[1], sizeof(float)) == 0);
    CHECK(std::memcmp(&p[2], &orig[2], sizeof(float)) == 0);
    CHECK(p[0] != orig[0]);
    CHECK(p[3] != orig[3]);
}

TEST_CASE("adam contracts: shape mismatch and double update") {
    Tensor<float> p = Tensor<float>::zeros({3});
    AdamState<float> st;
    CHECK_THROWS_AS(packmt::adam_step(p, Tensor<float>::zeros({4}), st, 0.1), packmt::ContractViolation);

    packmt::Adam<float> opt(LrSchedule{3e-4, 10});
    Tensor<float> g = Tensor<float>::full({3}, 1.0f);
    CHECK_THROWS_AS(opt.update("w", p, g), packmt::ContractViolation);  // begin_step missing
    opt.begin_step();
    opt.update("w", p, g);
    CHECK_THROWS_AS(opt.update("w", p, g), packmt::ContractViolation);  // twice in one step
}

TEST_CASE("adam is deterministic") {
    auto run = [] {
        Tensor<float> p({3}, {0.4f, -1.1f, 2.2f});
        packmt::Adam<float> opt(LrSchedule{3e-4, 50});
        for (int t = 0; t < 20; ++t) {
            opt.begin_step();
            Tensor<float> g({3}, {p[0] * 0.3f, p[1] * 0.7f, 1.0f});
            opt.update("w", p, g);
        }
        return p;
    };
    const auto a = run();
    const auto b = run();
    CHECK(std::memcmp(a.data.data(), b.data.data(), 3 * sizeof(float)) == 0);
}
