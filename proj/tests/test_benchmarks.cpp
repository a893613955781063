#include <gtest/gtest.h>

#include <cmath>

#include "soc/benchmarks.hpp"
#include "soc/validation.hpp"

using namespace soc;

double gamma_star(const LqBenchmark& b, int t, double x) {
    return eval_policy(lq_optimal_policy(b), t, std::span<const double>(&x, 1))[0];
}

TEST(OptimalPolicy, FormulaValue) {
    EXPECT_NEAR(gamma_star({.horizon = 4, .epsilon = 0.5}, 0, 2.0), -2.0 / 4.5, 1e-15);
    EXPECT_NEAR(gamma_star({.horizon = 4, .epsilon = 0.5}, 0, 2.0), -0.44444, 1e-5);
}

TEST(OptimalPolicy, ZeroAtOrigin) {
    for (int t = 0; t < 4; ++t) EXPECT_EQ(gamma_star({}, t, 0.0), 0.0);
}

TEST(OptimalPolicy, VanishesForLargeEpsilon) {
    EXPECT_LT(std::abs(gamma_star({.epsilon = 1e9}, 3, 1.0)), 1e-8);
}

TEST(OptimalPolicy, TwoDimIsSeparable) {
    const auto p2 = lq_optimal_policy({.dim = 2});
    for (int t = 0; t < 4; ++t) {
        const std::vector<double> x{0.7, -1.3};
        const auto u = p2.eval(t, x);
        EXPECT_EQ(u[0], gamma_star({}, t, 0.7));
        EXPECT_EQ(u[1], gamma_star({}, t, -1.3));
    }
}

TEST(OptimalPolicy, OddSymmetry) {
    for (int t = 0; t < 4; ++t)
        for (double x : {0.1, 0.9, 1.7}) {
            EXPECT_EQ(gamma_star({}, t, -x), -gamma_star({}, t, x));
            EXPECT_EQ(lq_optimal_adjoint({}, t, std::vector{-x})[0], -lq_optimal_adjoint({}, t, std::vector{x})[0]);
        }
}

TEST(OptimalAdjoint, Values) {
    const LqBenchmark b;
    EXPECT_EQ(lq_optimal_adjoint(b, 4, std::vector{0.8})[0], 2.0 * 0.8);  // dV/dx at t = T
    EXPECT_EQ(lq_optimal_adjoint(b, 3, std::vector{0.8})[0], 0.8);        // 2 eps / (1 + eps) with eps = 1
    EXPECT_EQ(lq_optimal_adjoint(b, 1, std::vector{0.0})[0], 0.0);
}

TEST(OptimalAdjoint, MatchesGridDpValueSlope) {
    const LqBenchmark b;
    const GridDpResult dp = lq_grid_dp(b);
    for (double x : {-1.0, -0.4, 0.5, 1.2}) {
        const double h = 0.05;
        const double fd = (dp.value_at(3, x + h) - dp.value_at(3, x - h)) / (2 * h);
        EXPECT_NEAR(fd, lq_optimal_adjoint(b, 3, std::vector{x})[0], 2e-3);
    }
}

TEST(GridDp, MatchesClosedFormForSeveralEpsilon) {
    for (double eps : {0.5, 1.0, 2.0}) {
        const CheckResult c = check_closed_form_vs_dp({.epsilon = eps});
        EXPECT_TRUE(c.pass) << c.detail;
    }
}

TEST(GridDp, OneStageMinimiser) {
    const LqBenchmark b{.horizon = 1, .epsilon = 1.0};
    const GridDpResult dp = lq_grid_dp(b);
    for (double x : {-1.5, 0.3, 1.0}) EXPECT_NEAR(dp.policy_at(0, x), -x / 2.0, 2e-3);
}

TEST(GridDp, PolicyIsOdd) {
    const GridDpResult dp = lq_grid_dp({});
    for (int t = 0; t < 4; ++t)
        for (double x : {0.25, 1.0, 1.9}) EXPECT_NEAR(dp.policy_at(t, -x), -dp.policy_at(t, x), 2e-3);
}

TEST(LqProblem, ZeroPathHasZeroCost) {
    const LqProblem p({.dim = 2});
    const std::vector<double> z{0.0, 0.0};
    std::vector<double> next(2);
    for (int t = 0; t < 4; ++t) {
        EXPECT_EQ(p.stage_cost(t, z, z), 0.0);
        p.dynamics(t, z, z, z, next);
        EXPECT_EQ(next, z);
    }
    EXPECT_EQ(p.final_cost(z), 0.0);
}

TEST(LqProblem, TwoDimActsComponentwise) {
    const LqProblem p1({}), p2({.dim = 2});
    const std::vector<double> x{0.4, -0.9}, u{0.2, 0.1}, w{-0.3, 0.6};
    std::vector<double> out2(2), out1(1);
    p2.dynamics(0, x, u, w, out2);
    for (int k = 0; k < 2; ++k) {
        p1.dynamics(0, std::vector{x[k]}, std::vector{u[k]}, std::vector{w[k]}, out1);
        EXPECT_EQ(out2[k], out1[0]);
    }
    EXPECT_DOUBLE_EQ(p2.stage_cost(0, x, u), p1.stage_cost(0, std::vector{u[0]}, std::vector{u[0]}) +
                                                 p1.stage_cost(0, std::vector{u[1]}, std::vector{u[1]}));
}
