#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "soc/core.hpp"
#include "soc/policy.hpp"
#include "soc/validation.hpp"

using namespace soc;

double eval1(const NearestNeighborIndex& idx, double q) {
    std::size_t cursor = 0;
    double out = 0.0;
    idx.eval(std::span<const double>(&q, 1), std::span<double>(&out, 1), cursor);
    return out;
}

TEST(NearestNeighbor, TwoCenters) {
    const NearestNeighborIndex idx({-1.0, 1.0}, {10.0, 20.0}, 1, 1);
    EXPECT_EQ(eval1(idx, 0.2), 20.0);
    EXPECT_EQ(eval1(idx, 0.0), 10.0);  // tie goes to the lower index
}

TEST(NearestNeighbor, TieBreakFollowsIndexNotPosition) {
    const NearestNeighborIndex idx({1.0, -1.0}, {20.0, 10.0}, 1, 1);
    EXPECT_EQ(eval1(idx, 0.0), 20.0);
    const NearestNeighborIndex dup({0.5, 0.5, 0.5}, {1.0, 2.0, 3.0}, 1, 1);
    EXPECT_EQ(eval1(dup, 0.4), 1.0);
}

TEST(NearestNeighbor, SingleCenterEverywhere) {
    const NearestNeighborIndex idx({0.3, -0.2}, {7.0}, 2, 1);
    std::size_t cursor = 0;
    for (double a : {-5.0, 0.0, 3.0}) {
        std::vector<double> q{a, -a}, out(1);
        idx.eval(q, out, cursor);
        EXPECT_EQ(out[0], 7.0);
    }
}

TEST(NearestNeighbor, CenterQueriesReturnOwnValue) {
    RngStream rng(3);
    for (int d : {1, 2}) {
        std::vector<double> c(50 * d), v(50);
        for (double& x : c) x = rng.uniform();
        std::iota(v.begin(), v.end(), 0.0);
        const NearestNeighborIndex idx(c, v, d, 1);
        std::size_t cursor = 0;
        std::vector<double> out(1);
        for (std::size_t i = 0; i < 50; ++i) {
            idx.eval(idx.center(i), out, cursor);
            EXPECT_EQ(out[0], v[i]);
        }
    }
}

TEST(NearestNeighbor, MatchesExhaustiveScan) {
    RngStream rng(17);
    for (int d : {1, 2}) {
        for (std::size_t m : {1u, 5u, 37u, 100u}) {
            std::vector<double> c(m * d), v(m);
            for (double& x : c) x = 2.0 * rng.uniform() - 1.0;
            std::iota(v.begin(), v.end(), 0.0);
            const NearestNeighborIndex idx(c, v, d, 1);
            std::size_t cursor = 0;
            std::vector<double> q(d);
            for (int k = 0; k < 1000; ++k) {
                for (double& x : q) x = 3.0 * rng.uniform() - 1.5;
                ASSERT_EQ(idx.nearest(q, cursor), idx.exhaustive_nearest(q));
            }
        }
    }
    const CheckResult c = check_voronoi_exhaustive();
    EXPECT_TRUE(c.pass) << c.detail;
}

TEST(NearestNeighbor, PermutationInvariantAwayFromTies) {
    RngStream rng(5);
    const std::size_t m = 60;
    std::vector<double> c(2 * m), v(m);
    for (double& x : c) x = rng.uniform();
    std::iota(v.begin(), v.end(), 0.0);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<double> pc(2 * m), pv(m);
    for (std::size_t i = 0; i < m; ++i) {
        pc[2 * i] = c[2 * perm[i]];
        pc[2 * i + 1] = c[2 * perm[i] + 1];
        pv[i] = v[perm[i]];
    }
    const NearestNeighborIndex a(c, v, 2, 1), b(pc, pv, 2, 1);
    std::size_t ca = 0, cb = 0;
    std::vector<double> q(2), oa(1), ob(1);
    for (int k = 0; k < 1000; ++k) {
        q = {rng.uniform(), rng.uniform()};
        a.eval(q, oa, ca);
        b.eval(q, ob, cb);
        ASSERT_EQ(oa[0], ob[0]);
    }
}

TEST(NearestNeighbor, ConstantAlongSegmentInsideOneCell) {
    const NearestNeighborIndex idx({0.0, 0.0, 1.0, 0.0, 0.0, 1.0}, {1.0, 2.0, 3.0}, 2, 1);
    std::size_t cursor = 0;
    std::vector<double> out(1);
    for (int k = 0; k <= 20; ++k) {
        const double s = k / 20.0;
        const std::vector<double> q{0.9 + 0.3 * s, 0.1 - 0.2 * s};
        idx.eval(q, out, cursor);
        EXPECT_EQ(out[0], 2.0);
    }
}

TEST(NearestNeighbor, RejectsBadInput) {
    EXPECT_THROW(NearestNeighborIndex({}, {}, 1, 1), std::invalid_argument);
    EXPECT_THROW(NearestNeighborIndex({1.0, 2.0}, {1.0}, 1, 1), std::invalid_argument);
}

TEST(FeedbackPolicy, ClosedFormEvaluation) {
    const auto p = FeedbackPolicy::closed_form(
        4, 1, 1, [](int t, std::span<const double> x, std::span<double> out) { out[0] = -x[0] / (4.5 - t); });
    EXPECT_NEAR(eval_policy(p, 0, std::vector{2.0})[0], -0.44444, 1e-5);
    EXPECT_EQ(eval_policy(p, 2, std::vector{0.0})[0], 0.0);
    EXPECT_THROW(p.eval(4, std::vector{0.0}), std::out_of_range);
}

TEST(FeedbackPolicy, FitFromStageSamples) {
    std::vector<StageSamples> stages{{{-1.0, 1.0}, {5.0, 6.0}}, {{0.0}, {9.0}}};
    const FeedbackPolicy p = fit_nearest_neighbor(stages, 1, 1);
    EXPECT_EQ(p.horizon(), 2);
    EXPECT_EQ(p.support_size(0), 2u);
    EXPECT_EQ(eval_policy(p, 0, std::vector{0.7})[0], 6.0);
    EXPECT_EQ(eval_policy(p, 1, std::vector{-3.0})[0], 9.0);
}

TEST(MeanPolicy, IdenticalReplicasGiveThatReplica) {
    std::vector<StageSamples> stages{{{-1.0, 1.0}, {5.0, 6.0}}};
    const FeedbackPolicy one = fit_nearest_neighbor(stages, 1, 1);
    const std::vector<FeedbackPolicy> reps(4, one);
    const std::vector<std::vector<double>> pts{{-0.5, 0.3, 2.0}};
    const auto m = mean_policy(reps, pts);
    EXPECT_EQ(m[0], (std::vector<double>{5.0, 6.0, 6.0}));
}

TEST(MeanPolicy, OppositeReplicasCancel) {
    std::vector<StageSamples> a{{{0.0}, {2.5}}}, b{{{0.0}, {-2.5}}};
    const std::vector<FeedbackPolicy> reps{fit_nearest_neighbor(a, 1, 1), fit_nearest_neighbor(b, 1, 1)};
    const std::vector<std::vector<double>> pts{{0.3}};
    EXPECT_EQ(mean_policy(reps, pts)[0][0], 0.0);
}
