// Oracle checks: grid dynamic programming against the closed form, the two
// tree solvers against each other, and the property suite (estimator
// identities, nearest-centre search, particle recursions, reproducibility).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "soc/benchmarks.hpp"
#include "soc/core.hpp"
#include "soc/evaluation.hpp"
#include "soc/experiment.hpp"
#include "soc/particle.hpp"
#include "soc/policy.hpp"
#include "soc/scenario_tree.hpp"

namespace soc {

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;  // the measured quantity
    std::string detail;
};

inline void print_check(std::ostream& os, const CheckResult& c) {
    os << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
}

// ---------------------------------------------------------------------------
// Reference implementations, written for clarity rather than speed
// ---------------------------------------------------------------------------

namespace reference {

template <ControlProblem P>
std::vector<double> forward(const P& problem, std::span<const double> controls, const ScenarioBatch& s) {
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim, T = d.horizon;
    std::vector<double> states(s.count() * (T + 1) * nx);
    for (std::size_t i = 0; i < s.count(); ++i) {
        std::vector<double> x(s.value(i, 0).begin(), s.value(i, 0).end()), next(nx);
        std::copy(x.begin(), x.end(), states.begin() + i * (T + 1) * nx);
        for (std::size_t t = 0; t < T; ++t) {
            problem.dynamics(static_cast<int>(t), x, controls.subspan((i * T + t) * nu, nu), s.value(i, t + 1), next);
            x = next;
            std::copy(x.begin(), x.end(), states.begin() + (i * (T + 1) + t + 1) * nx);
        }
    }
    return states;
}

/// Noise particles of stage t by first coordinate, ties by index.
inline std::vector<std::size_t> order_by_noise(const ScenarioBatch& s, int t) {
    std::vector<std::size_t> order(s.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s.value(a, t)[0] < s.value(b, t)[0]; });
    return order;
}

/// Adjoints (want_gradient = false) or gradients (true) by the defining
/// recursion, with an exhaustive nearest-centre scan as the regression.
template <ControlProblem P>
std::vector<double> backward(const P& problem, std::span<const double> states, std::span<const double> controls,
                             std::span<const double> adjoints_in, const ScenarioBatch& s, bool want_gradient) {
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim, T = d.horizon, N = s.count();
    auto X = [&](std::size_t i, std::size_t t) { return states.subspan((i * (T + 1) + t) * nx, nx); };
    auto U = [&](std::size_t i, std::size_t t) { return controls.subspan((i * T + t) * nu, nu); };

    std::vector<double> lambda(N * (T + 1) * nx, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        problem.final_cost_dx(X(i, T), std::span<double>(lambda.data() + (i * (T + 1) + T) * nx, nx));
    std::span<const double> source = adjoints_in.empty() ? std::span<const double>(lambda) : adjoints_in;
    std::vector<double> grad(N * T * nu, 0.0);

    for (std::size_t t = T; t-- > 0;) {
        std::vector<double> centers, values;
        for (std::size_t j = 0; j < N; ++j) {
            auto x = X(j, t + 1);
            centers.insert(centers.end(), x.begin(), x.end());
            auto l = source.subspan((j * (T + 1) + t + 1) * nx, nx);
            values.insert(values.end(), l.begin(), l.end());
        }
        const NearestNeighborIndex table(centers, values, static_cast<int>(nx), static_cast<int>(nx));
        const auto order = order_by_noise(s, static_cast<int>(t + 1));
        for (std::size_t i = 0; i < N; ++i) {
            std::vector<double> sx(nx, 0.0), su(nu, 0.0), y(nx), jx(nx * nx), ju(nx * nu);
            for (std::size_t j : order) {
                auto w = s.value(j, static_cast<int>(t + 1));
                problem.dynamics(static_cast<int>(t), X(i, t), U(i, t), w, y);
                const auto lam = table.value(table.exhaustive_nearest(y));
                problem.dynamics_dx(static_cast<int>(t), X(i, t), U(i, t), w, jx);
                problem.dynamics_du(static_cast<int>(t), X(i, t), U(i, t), w, ju);
                for (std::size_t c = 0; c < nx; ++c)
                    for (std::size_t r = 0; r < nx; ++r) sx[c] += jx[r * nx + c] * lam[r];
                for (std::size_t c = 0; c < nu; ++c)
                    for (std::size_t r = 0; r < nx; ++r) su[c] += ju[r * nu + c] * lam[r];
            }
            std::vector<double> cx(nx), cu(nu);
            problem.stage_cost_dx(static_cast<int>(t), X(i, t), U(i, t), cx);
            problem.stage_cost_du(static_cast<int>(t), X(i, t), U(i, t), cu);
            for (std::size_t k = 0; k < nx; ++k)
                lambda[(i * (T + 1) + t) * nx + k] = cx[k] + (1.0 / static_cast<double>(N)) * sx[k];
            for (std::size_t k = 0; k < nu; ++k)
                grad[(i * T + t) * nu + k] = cu[k] + (1.0 / static_cast<double>(N)) * su[k];
        }
    }
    return want_gradient ? grad : lambda;
}

}  // namespace reference

/// A small nonlinear problem (n_x = n_w = 2, n_u = 1) whose dynamics
/// Jacobians depend on the noise.
inline FunctionalProblem nonlinear_test_problem(int horizon = 3) {
    FunctionalProblem p;
    p.dimensions = {horizon, 2, 1, 2};
    p.noise_model = NoiseModel::uniform_box(horizon, 2, -1.0, 1.0);
    p.f = [](int, auto x, auto u, auto w, auto out) {
        out[0] = x[0] + 0.3 * std::sin(x[1]) + u[0] + w[0] * (1.0 + 0.1 * x[0]);
        out[1] = 0.9 * x[1] + 0.2 * u[0] * u[0] + w[1];
    };
    p.f_dx = [](int, auto x, auto, auto w, auto out) {
        out[0] = 1.0 + 0.1 * w[0];
        out[1] = 0.3 * std::cos(x[1]);
        out[2] = 0.0;
        out[3] = 0.9;
    };
    p.f_du = [](int, auto, auto u, auto, auto out) {
        out[0] = 1.0;
        out[1] = 0.4 * u[0];
    };
    p.cost = [](int, auto x, auto u) { return 0.5 * u[0] * u[0] + 0.1 * x[0] * x[0]; };
    p.cost_dx = [](int, auto x, auto, auto out) {
        out[0] = 0.2 * x[0];
        out[1] = 0.0;
    };
    p.cost_du = [](int, auto, auto u, auto out) { out[0] = u[0]; };
    p.final = [](auto x) { return x[0] * x[0] + x[1] * x[1] + 0.1 * x[0] * x[0] * x[0] * x[0]; };
    p.final_dx = [](auto x, auto out) {
        out[0] = 2.0 * x[0] + 0.4 * x[0] * x[0] * x[0];
        out[1] = 2.0 * x[1];
    };
    return p;
}

// ---------------------------------------------------------------------------
// Oracle checks
// ---------------------------------------------------------------------------

/// Sup-norm gap between the closed-form policy and grid dynamic programming
/// on [-half_width, half_width].
inline CheckResult check_closed_form_vs_dp(const LqBenchmark& bench = {}, const GridDpOptions& opt = {},
                                           double tol = 2e-3, double half_width = 2.0) {
    const GridDpResult dp = lq_grid_dp(bench, opt);
    const FeedbackPolicy opt_policy = lq_optimal_policy(bench);
    double gap = 0.0;
    const auto steps = static_cast<int>(std::llround(2.0 * half_width / 0.01));
    for (int t = 0; t < bench.horizon; ++t)
        for (int k = 0; k <= steps; ++k) {
            const double x = -half_width + 0.01 * k;
            gap = std::max(gap, std::abs(eval_policy(opt_policy, t, std::span<const double>(&x, 1))[0] -
                                         dp.policy_at(t, x)));
        }
    std::ostringstream os;
    os << "sup |gamma* - dp| on [-" << half_width << "," << half_width << "] = " << gap << " (tol " << tol << ")";
    return {"closed form vs grid DP", gap <= tol, gap, os.str()};
}

/// Largest per-node control gap between the gradient and analytic tree
/// solvers over `trees` seeded trees.
inline CheckResult check_tree_solvers(std::size_t trees = 20, std::size_t branching = 2, int horizon = 3,
                                      double tol = 1e-6, std::uint64_t seed = 1) {
    LqBenchmark bench;
    bench.horizon = horizon;
    const LqProblem problem(bench);
    const SeedPlan plan(seed);
    double worst = 0.0;
    bool converged = true;
    for (std::size_t r = 0; r < trees; ++r) {
        RngStream rng = plan.stream(r, "validate/tree-solvers");
        const ScenarioTree tree = build_tree(problem, branching, rng);
        TreeGradientOptions opt;
        opt.step = 0.5 / (bench.epsilon + horizon);
        opt.tol = 1e-10;
        opt.max_iter = 100000;
        const TreeSolution g = solve_tree_gradient(problem, tree, opt);
        const TreeSolution a = solve_tree_lq_analytic(tree, bench.epsilon);
        converged = converged && g.converged;
        for (std::size_t i = 0; i < tree.interior_count(); ++i)
            worst = std::max(worst, std::abs(g.controls[i] - a.controls[i]));
    }
    std::ostringstream os;
    os << trees << " trees (n_b=" << branching << ", T=" << horizon << "): max |u_grad - u_analytic| = " << worst
       << " (tol " << tol << ")" << (converged ? "" : ", gradient solver hit max_iter");
    return {"tree gradient vs analytic", converged && worst <= tol, worst, os.str()};
}

// ---------------------------------------------------------------------------
// Property suite
// ---------------------------------------------------------------------------

/// mse = bias^2 + variance exactly, and agreement with the directly averaged
/// squared error up to rounding.
inline CheckResult check_mse_identity(std::uint64_t seed = 1) {
    ExperimentConfig c;
    c.method = Method::Tree;
    c.grid = {2, 3};
    c.replications = 20;
    c.points = 200;
    c.seed = seed;
    const ExperimentResult res = run_tree_experiment(c);
    double exact = 0.0, direct = 0.0;
    for (const auto& rep : res.reports)
        for (std::size_t t = 0; t < rep.mse.size(); ++t) {
            exact = std::max(exact, std::abs(rep.mse[t] - (rep.squared_bias[t] + rep.variance[t])));
            direct = std::max(direct, std::abs(rep.mse[t] - rep.mse_direct[t]) / rep.mse[t]);
        }
    std::ostringstream os;
    os << "max |mse - (bias^2 + var)| = " << exact << ", max relative gap to direct mean = " << direct
       << " (tol 0 and 1e-10)";
    return {"MSE decomposition identity", exact == 0.0 && direct <= 1e-10, exact, os.str()};
}

/// gamma* + b + z_r with z_r uniform of variance v, constant per replica:
/// squared bias should come out near b^2 and variance near v.
inline CheckResult check_synthetic_estimator(double b = 0.1, double v = 0.01, std::size_t replications = 400,
                                             std::uint64_t seed = 7) {
    const LqBenchmark bench;
    const LqProblem problem(bench);
    const FeedbackPolicy optimal = lq_optimal_policy(bench);
    RngStream prng = SeedPlan(seed).stream(0, "validate/points");
    const EvalPointSet points = gen_eval_points(problem, optimal, 100, PointMode::Qmc, prng);
    const double a = std::sqrt(3.0 * v);
    const SeedPlan plan(seed);
    const MseReport rep = mse_evaluate(
        [&](std::size_t r) {
            RngStream rng = plan.stream(r, "validate/synthetic");
            const double z = a * (2.0 * rng.uniform() - 1.0);
            return Replica{FeedbackPolicy::closed_form(
                bench.horizon, 1, 1,
                [&optimal, b, z](int t, std::span<const double> x, std::span<double> out) {
                    optimal.eval(t, x, out);
                    out[0] += b + z;
                }),
                           true};
        },
        optimal, points, replications);
    const double R = static_cast<double>(replications);
    const double se_bias = std::sqrt(4.0 * b * b * v / R + 2.0 * (v / R) * (v / R));
    const double se_var = v * std::sqrt(0.8 / R);  // fourth moment of the uniform law
    double worst_bias = 0.0, worst_var = 0.0;
    for (int t = 0; t < bench.horizon; ++t) {
        worst_bias = std::max(worst_bias, std::abs(rep.squared_bias[t] - b * b) / se_bias);
        worst_var = std::max(worst_var, std::abs(rep.variance[t] - v) / se_var);
    }
    std::ostringstream os;
    os << "b^2=" << b * b << " est " << rep.squared_bias[0] << ", v=" << v << " est " << rep.variance[0]
       << "; worst deviations " << worst_bias << " and " << worst_var << " standard errors (tol 3)";
    return {"estimator recovers known bias/variance", worst_bias <= 3.0 && worst_var <= 3.0,
            std::max(worst_bias, worst_var), os.str()};
}

inline CheckResult check_indicator_zero(std::uint64_t seed = 3) {
    double worst = 0.0;
    for (int dim : {1, 2}) {
        LqBenchmark bench;
        bench.dim = dim;
        const LqProblem problem(bench);
        const FeedbackPolicy optimal = lq_optimal_policy(bench);
        RngStream rng = SeedPlan(seed).stream(static_cast<std::uint64_t>(dim), "validate/indicator");
        worst = std::max(worst, std::abs(simulation_indicator(optimal, optimal, problem, 500, rng)));
    }
    std::ostringstream os;
    os << "simulation_indicator(optimal, optimal) = " << worst << " (d = 1, 2)";
    return {"simulation indicator of the optimum", worst == 0.0, worst, os.str()};
}

/// Nearest-centre search against the exhaustive scan, 10^3 queries per
/// dimension, on tables with duplicate centres and lattice ties.
inline CheckResult check_voronoi_exhaustive(std::size_t queries = 1000, std::uint64_t seed = 11) {
    std::size_t mismatches = 0, total = 0;
    for (int dim : {1, 2, 3}) {
        RngStream rng = SeedPlan(seed).stream(static_cast<std::uint64_t>(dim), "validate/voronoi");
        const std::size_t n = 300;
        std::vector<double> centers(n * dim), values(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (int k = 0; k < dim; ++k) {
                double c = 4.0 * rng.uniform() - 2.0;
                if (i % 3 == 0) c = std::round(c * 4.0) / 4.0;  // lattice points create ties
                centers[i * dim + k] = c;
            }
            values[i] = static_cast<double>(i);
        }
        for (int k = 0; k < dim; ++k) centers[(n - 1) * dim + k] = centers[k];  // a duplicate
        const NearestNeighborIndex index(centers, values, dim, 1);
        std::size_t cursor = 0;
        std::vector<double> q(dim);
        for (std::size_t m = 0; m < queries; ++m) {
            for (int k = 0; k < dim; ++k) {
                q[k] = 5.0 * rng.uniform() - 2.5;
                if (m % 4 == 0) q[k] = std::round(q[k] * 8.0) / 8.0;  // midpoints between lattice centres
            }
            ++total;
            if (index.nearest(q, cursor) != index.exhaustive_nearest(q)) ++mismatches;
        }
    }
    std::ostringstream os;
    os << mismatches << " mismatches over " << total << " queries (d = 1, 2, 3)";
    return {"Voronoi eval equals exhaustive scan", mismatches == 0, static_cast<double>(mismatches), os.str()};
}

/// forward_pass, backward_pass and gradient_pass against the reference
/// recursions, bit for bit, on random controls.
inline CheckResult check_particle_recursions(std::uint64_t seed = 5) {
    std::size_t mismatches = 0, compared = 0;
    auto run = [&](const auto& problem, std::size_t n, std::uint64_t r) {
        RngStream rng = SeedPlan(seed).stream(r, "validate/recursions");
        const ScenarioBatch s = sample_scenarios(problem, n, rng);
        const Dimensions d = problem.dims();
        std::vector<double> controls(n * d.horizon * d.control_dim);
        for (double& u : controls) u = rng.uniform() - 0.5;
        auto count = [&](const std::vector<double>& a, const std::vector<double>& b) {
            compared += a.size();
            if (a.size() != b.size()) {
                mismatches += std::max(a.size(), b.size());
                return;
            }
            for (std::size_t k = 0; k < a.size(); ++k)
                if (a[k] != b[k]) ++mismatches;
        };
        const auto states = forward_pass(problem, controls, s);
        count(states, reference::forward(problem, controls, s));
        const auto adjoints = backward_pass(problem, states, controls, s);
        count(adjoints, reference::backward(problem, states, controls, {}, s, false));
        const auto grads = gradient_pass(problem, states, controls, adjoints, s);
        count(grads, reference::backward(problem, states, controls, adjoints, s, true));
    };
    for (int dim : {1, 2}) {
        LqBenchmark bench;
        bench.dim = dim;
        run(LqProblem(bench), 40, static_cast<std::uint64_t>(dim));
    }
    run(nonlinear_test_problem(), 30, 3);
    std::ostringstream os;
    os << mismatches << " mismatching entries out of " << compared << " (LQ d=1,2 and a nonlinear problem)";
    return {"particle passes satisfy their recursions", mismatches == 0, static_cast<double>(mismatches), os.str()};
}

/// The same small experiments twice give byte-identical CSV.
inline CheckResult check_reproducible_csv(std::uint64_t seed = 42) {
    auto once = [&] {
        std::ostringstream os;
        ExperimentConfig tree;
        tree.method = Method::Tree;
        tree.grid = {2, 3, 4};
        tree.replications = 5;
        tree.points = 50;
        tree.seed = seed;
        ExperimentConfig particle = tree;
        particle.method = Method::Particle;
        particle.grid = {9, 27};
        particle.replications = 3;
        write_experiment_csv(os, run_tree_experiment(tree));
        write_compare_csv(os, run_compare(tree, particle));
        return os.str();
    };
    const std::string a = once(), b = once();
    std::ostringstream os;
    os << a.size() << " bytes, " << (a == b ? "identical" : "different") << " across two runs";
    return {"byte-identical CSV under seed reuse", a == b, a == b ? 0.0 : 1.0, os.str()};
}

inline std::vector<CheckResult> property_suite() {
    return {check_mse_identity(),       check_synthetic_estimator(), check_indicator_zero(),
            check_voronoi_exhaustive(), check_particle_recursions(), check_reproducible_csv()};
}

}  // namespace soc
