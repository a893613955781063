#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "soc/benchmarks.hpp"
#include "soc/scenario_tree.hpp"
#include "soc/validation.hpp"

using namespace soc;

ScenarioTree lq_tree(std::size_t nb, int T, std::uint64_t seed, double eps = 1.0) {
    const LqProblem p({.horizon = T, .epsilon = eps});
    RngStream rng = SeedPlan(seed).stream(0, "tree-test");
    return build_tree(p, nb, rng);
}

TEST(TreeStructure, CountsForThreeBranches) {
    const ScenarioTree tree = lq_tree(3, 4, 1);
    EXPECT_EQ(tree.leaf_count(), 243u);
    EXPECT_EQ(tree.node_count(), 363u);
    for (std::size_t i : tree.leaves()) EXPECT_DOUBLE_EQ(tree.probability(i), std::pow(3.0, -5));
}

TEST(TreeStructure, InvariantsAcrossGrid) {
    for (std::size_t nb : {1u, 2u, 3u, 4u})
        for (int T : {1, 2, 3}) {
            const ScenarioTree tree = lq_tree(nb, T, 2);
            for (int t = 0; t <= T; ++t) {
                double total = 0.0;
                std::size_t count = 0;
                for (std::size_t i : tree.nodes_at(t)) {
                    total += tree.probability(i);
                    ++count;
                    EXPECT_EQ(tree.stage(i), t);
                    if (t == 0) EXPECT_EQ(tree.parent(i), ScenarioTree::npos);
                    if (t < T) {
                        EXPECT_EQ(std::ranges::size(tree.children(i)), nb);
                        for (std::size_t j : tree.children(i)) EXPECT_EQ(tree.parent(j), i);
                    } else {
                        EXPECT_TRUE(tree.is_leaf(i));
                        EXPECT_TRUE(std::ranges::empty(tree.children(i)));
                    }
                    for (double w : tree.noise(i)) {
                        EXPECT_GE(w, -1.0);
                        EXPECT_LE(w, 1.0);
                    }
                }
                EXPECT_EQ(count, static_cast<std::size_t>(std::llround(std::pow(nb, t + 1))));
                EXPECT_NEAR(total, 1.0, 1e-12);
            }
        }
}

TEST(TreeStructure, BudgetIsEnforced) {
    const LqProblem p({});
    RngStream rng(1);
    EXPECT_THROW(build_tree(p, 20, rng, 1000), std::length_error);
    EXPECT_FALSE(tree_node_count(1u << 20, 4, kDefaultNodeBudget).has_value());
}

TEST(TreeAnalytic, LastStageFormula) {
    const ScenarioTree tree = lq_tree(3, 4, 3);
    const TreeSolution sol = solve_tree_lq_analytic(tree, 1.0);
    for (std::size_t i : tree.nodes_at(3)) {
        double s = 0.0;
        for (std::size_t j : tree.children(i)) s += tree.noise(j)[0];
        EXPECT_NEAR(sol.controls[i], -(sol.states[i] + s / 3.0) / 2.0, 1e-14);
    }
}

TEST(TreeAnalytic, ZeroNoiseGivesZeroControl) {
    ScenarioTree tree(3, 2, 1);
    const TreeSolution sol = solve_tree_lq_analytic(tree, 1.0);
    for (double u : sol.controls) EXPECT_EQ(u, 0.0);
}

TEST(TreeAnalytic, MatchesGradientSolverOnSeededTrees) {
    const CheckResult c = check_tree_solvers();
    EXPECT_TRUE(c.pass) << c.detail;
}

TEST(TreeAnalytic, ObjectiveMatchesGradientSolver) {
    const LqProblem p({.horizon = 2});
    RngStream rng = SeedPlan(4).stream(0, "obj");
    const ScenarioTree tree = build_tree(p, 2, rng);
    const TreeSolution a = solve_tree_lq_analytic(tree, 1.0);
    const TreeSolution g = solve_tree_gradient(p, tree, {.step = 0.5 / 3.0, .tol = 1e-11, .max_iter = 100000});
    EXPECT_NEAR(a.objective, g.objective, 1e-8);
    EXPECT_NEAR(a.objective, tree_objective(p, tree, a.states, a.controls), 1e-12);
}

TEST(TreeAnalytic, ChainMatchesDeterministicSolution) {
    // With nb = 1 the tree is one scenario; the deterministic problem
    // min eps sum u_t^2 + (x0 + sum u + sum w)^2 has every u_t = -(x0 + sum w) / (T + eps).
    const int T = 4;
    const ScenarioTree tree = lq_tree(1, T, 5);
    const TreeSolution sol = solve_tree_lq_analytic(tree, 1.0);
    double total = 0.0;
    for (std::size_t i = 0; i < tree.node_count(); ++i) total += tree.noise(i)[0];
    for (double u : sol.controls) EXPECT_NEAR(u, -total / (T + 1.0), 1e-14);
}

TEST(TreeAnalytic, NonAnticipativity) {
    // u_i = -(x_i + c_i) / (T - t + eps): the offset c_i may only depend on
    // noises strictly below i. x_i itself moves with any ancestor decision.
    const int T = 3;
    const ScenarioTree base = lq_tree(2, T, 6);
    const TreeSolution ref = solve_tree_lq_analytic(base, 1.0);
    auto offset = [&](const ScenarioTree& tree, const TreeSolution& sol, std::size_t i) {
        return -(T - tree.stage(i) + 1.0) * sol.controls[i] - sol.states[i];
    };
    for (std::size_t k = 0; k < base.node_count(); ++k) {
        ScenarioTree changed = base;
        changed.noise(k)[0] += 0.37;
        const TreeSolution sol = solve_tree_lq_analytic(changed, 1.0);
        for (std::size_t i = 0; i < base.interior_count(); ++i) {
            const auto desc = base.descendants(i);
            const double gap = std::abs(offset(changed, sol, i) - offset(base, ref, i));
            if (std::ranges::find(desc, k) != desc.end())
                EXPECT_GT(gap, 1e-3) << "node " << i << " noise " << k;
            else
                EXPECT_LT(gap, 1e-12) << "node " << i << " noise " << k;
        }
    }
}

TEST(TreeGradient, ObjectiveNonIncreasing) {
    const LqProblem p({.horizon = 3});
    RngStream rng = SeedPlan(7).stream(0, "descent");
    const ScenarioTree tree = build_tree(p, 3, rng);
    const TreeSolution g = solve_tree_gradient(p, tree, {.step = 0.5 / 4.0, .tol = 1e-9, .max_iter = 5000});
    ASSERT_GT(g.objective_history.size(), 2u);
    for (std::size_t k = 1; k < g.objective_history.size(); ++k)
        EXPECT_LE(g.objective_history[k], g.objective_history[k - 1] + 1e-15);
}

TEST(TreeGradient, ZeroCostProblemIsStationary) {
    FunctionalProblem p = nonlinear_test_problem(2);
    p.cost = [](int, auto, auto) { return 0.0; };
    p.cost_dx = [](int, auto, auto, auto o) { std::ranges::fill(o, 0.0); };
    p.cost_du = [](int, auto, auto, auto o) { std::ranges::fill(o, 0.0); };
    p.final = [](auto) { return 0.0; };
    p.final_dx = [](auto, auto o) { std::ranges::fill(o, 0.0); };
    RngStream rng(3);
    const ScenarioTree tree = build_tree(p, 2, rng);
    std::vector<double> init(tree.interior_count());
    for (std::size_t i = 0; i < init.size(); ++i) init[i] = 0.1 * static_cast<double>(i);
    const TreeSolution g = solve_tree_gradient(p, tree, {.initial_controls = init});
    EXPECT_EQ(g.controls, init);
    EXPECT_EQ(g.gradient_norm, 0.0);
}

TEST(TreePolicy, StageZeroHasBranchingPieces) {
    const ScenarioTree tree = lq_tree(3, 4, 8);
    const FeedbackPolicy pol = tree_to_policy(tree, solve_tree_lq_analytic(tree, 1.0));
    EXPECT_EQ(pol.support_size(0), 3u);
    EXPECT_EQ(pol.support_size(3), 81u);
}
