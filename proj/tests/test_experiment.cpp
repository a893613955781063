#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "soc/experiment.hpp"
#include "soc/validation.hpp"

using namespace soc;

TEST(Config, ParsesKeyValueText) {
    std::istringstream in(
        "# comment\n"
        "method = particle\n"
        "horizon = 3   # trailing comment\n"
        "epsilon = 0.5\n"
        "dim = 2\n"
        "grid = 9, 27,81\n"
        "replications = 12\n"
        "points = 34\n"
        "point_mode = pseudo\n"
        "step = 0.15\n"
        "stall_window = 10\n"
        "seed = 99\n");
    const ExperimentConfig c = parse_config(in);
    EXPECT_EQ(c.method, Method::Particle);
    EXPECT_EQ(c.bench.horizon, 3);
    EXPECT_EQ(c.bench.epsilon, 0.5);
    EXPECT_EQ(c.bench.dim, 2);
    EXPECT_EQ(c.grid, (std::vector<std::size_t>{9, 27, 81}));
    EXPECT_EQ(c.replications, 12u);
    EXPECT_EQ(c.points, 34u);
    EXPECT_EQ(c.point_mode, PointMode::PseudoRandom);
    EXPECT_EQ(c.step, 0.15);
    EXPECT_EQ(c.stall_window, 10);
    EXPECT_EQ(c.seed, 99u);
}

TEST(Config, RejectsBadInput) {
    std::istringstream unknown("colour = red\n"), bad("points = many\n"), noeq("grid 2,3\n");
    EXPECT_THROW(parse_config(unknown), std::invalid_argument);
    EXPECT_THROW(parse_config(bad), std::invalid_argument);
    EXPECT_THROW(parse_config(noeq), std::invalid_argument);
    ExperimentConfig c;
    c.grid = {2};
    c.replications = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.replications = 2;
    c.bench.dim = 2;
    EXPECT_THROW(c.validate(), std::invalid_argument);  // analytic tree solver is scalar
}

TEST(Config, EchoRoundTrips) {
    ExperimentConfig c;
    c.method = Method::Particle;
    c.grid = {27, 81};
    c.bench.epsilon = 0.25;
    c.seed = 12345678901234ULL;
    std::string text;
    for (const auto& line : c.echo()) text += line + "\n";
    std::istringstream in(text);
    const ExperimentConfig back = parse_config(in);
    EXPECT_EQ(back.echo(), c.echo());
}

TEST(TreeExperiment, SmokeWithChainTree) {
    ExperimentConfig c;
    c.grid = {1};
    c.replications = 2;
    c.points = 1;
    const ExperimentResult res = run_tree_experiment(c);
    ASSERT_EQ(res.reports.size(), 1u);
    for (int t = 0; t < 4; ++t)
        EXPECT_EQ(res.reports[0].mse[t], res.reports[0].squared_bias[t] + res.reports[0].variance[t]);
}

TEST(TreeExperiment, SkipsGridPointsOverBudget) {
    ExperimentConfig c;
    c.grid = {2, 3, 50};
    c.replications = 2;
    c.points = 5;
    c.node_budget = 5000;
    const ExperimentResult res = run_tree_experiment(c);
    EXPECT_EQ(res.reports.size(), 2u);
    ASSERT_EQ(res.skipped.size(), 1u);
    EXPECT_NE(res.skipped[0].find("n_b=50"), std::string::npos);
}

TEST(TreeExperiment, GradientSolverAgreesWithAnalytic) {
    ExperimentConfig c;
    c.grid = {2};
    c.replications = 3;
    c.points = 50;
    c.bench.horizon = 3;
    const ExperimentResult a = run_tree_experiment(c);
    c.solver = TreeSolver::Gradient;
    c.tol = 1e-11;
    const ExperimentResult g = run_tree_experiment(c);
    for (int t = 0; t < 3; ++t) EXPECT_NEAR(a.reports[0].mse[t], g.reports[0].mse[t], 1e-8);
}

TEST(TreeExperiment, CsvCarriesConfigEcho) {
    ExperimentConfig c;
    c.grid = {2, 3, 4};
    c.replications = 3;
    c.points = 10;
    c.seed = 77;
    std::ostringstream os;
    write_experiment_csv(os, run_tree_experiment(c));
    const std::string csv = os.str();
    for (const auto& line : c.echo()) EXPECT_NE(csv.find("# " + line + "\n"), std::string::npos) << line;
    EXPECT_NE(csv.find(kReportColumns), std::string::npos);
    EXPECT_NE(csv.find("\ntree,n_b,3,0,"), std::string::npos);
    EXPECT_NE(csv.find("# variance_rate t=3 slope="), std::string::npos);
}

TEST(ParticleExperiment, CountsStatuses) {
    ExperimentConfig c;
    c.method = Method::Particle;
    c.grid = {9};
    c.replications = 4;
    c.points = 20;
    c.step = 0.15;
    c.stall_window = 10;
    const ExperimentResult res = run_particle_experiment(c);
    std::size_t total = 0;
    for (const auto& [status, n] : res.solve_status_counts) total += n;
    EXPECT_EQ(total, 4u);
    EXPECT_EQ(res.reports[0].used + res.reports[0].excluded, 4u);
}

TEST(Compare, TreeRowsKeyedByScenarioCount) {
    ExperimentConfig t;
    t.grid = {3};
    t.replications = 2;
    t.points = 10;
    ExperimentConfig p = t;
    p.method = Method::Particle;
    p.grid = {9};
    const CompareResult res = run_compare(t, p);
    bool found = false;
    for (const auto& row : res.rows)
        if (row.method == "tree") {
            EXPECT_EQ(row.scenarios, 243.0);
            found = true;
        }
    EXPECT_TRUE(found);
    EXPECT_EQ(res.rows.front().method, "particle");  // N = 9 sorts first
}

TEST(Compare, RejectsMismatchedBenchmarks) {
    ExperimentConfig t;
    t.grid = {2};
    ExperimentConfig p = t;
    p.method = Method::Particle;
    p.bench.epsilon = 2.0;
    EXPECT_THROW(run_compare(t, p), std::invalid_argument);
}

TEST(Determinism, ByteIdenticalCsv) {
    const CheckResult c = check_reproducible_csv();
    EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Determinism, ReplicaDependsOnlyOnItsIndex) {
    ExperimentConfig c;
    c.grid = {2, 3};
    const TreeReplica a = tree_replica(c, 3, 5);
    c.grid = {3};
    c.replications = 7;
    const TreeReplica b = tree_replica(c, 3, 5);
    EXPECT_EQ(a.solution.controls, b.solution.controls);
}
