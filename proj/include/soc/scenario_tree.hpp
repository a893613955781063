// Regularly branching scenario trees built by conditional sampling, and
// solvers for the control problem discretised on them.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <ranges>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "soc/core.hpp"
#include "soc/csv.hpp"
#include "soc/policy.hpp"

namespace soc {

inline constexpr std::size_t kDefaultNodeBudget = 1'000'000;

/// Total node count sum_{t=0..T} nb^{t+1}, or nullopt above `cap`.
inline std::optional<std::size_t> tree_node_count(std::size_t branching, int horizon,
                                                  std::size_t cap = std::numeric_limits<std::size_t>::max()) {
    std::size_t level = 1, total = 0;
    for (int t = 0; t <= horizon; ++t) {
        if (branching != 0 && level > cap / branching) return std::nullopt;
        level *= branching;
        if (total > cap - level) return std::nullopt;
        total += level;
    }
    return total;
}

/// Nodes are numbered stage by stage; within a stage, the children of one
/// parent are contiguous and ordered like their parents. Stage t holds
/// nb^{t+1} nodes (there are nb roots, one per draw of w_0).
class ScenarioTree {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    ScenarioTree() = default;
    ScenarioTree(int horizon, std::size_t branching, int noise_dim)
        : horizon_(horizon), branching_(branching), noise_dim_(noise_dim) {
        if (horizon < 1) throw std::invalid_argument("ScenarioTree: horizon must be >= 1");
        if (branching < 1) throw std::invalid_argument("ScenarioTree: branching factor must be >= 1");
        const auto total = tree_node_count(branching, horizon);
        if (!total) throw std::overflow_error("ScenarioTree: node count overflows");
        offsets_.resize(horizon + 2);
        std::size_t level = 1;
        offsets_[0] = 0;
        for (int t = 0; t <= horizon; ++t) {
            level *= branching;
            offsets_[t + 1] = offsets_[t] + level;
        }
        noise_.assign(*total * noise_dim, 0.0);
        probability_.resize(*total);
        for (int t = 0; t <= horizon; ++t) {
            const double p = 1.0 / static_cast<double>(offsets_[t + 1] - offsets_[t]);
            for (std::size_t i = offsets_[t]; i < offsets_[t + 1]; ++i) probability_[i] = p;
        }
    }

    int horizon() const noexcept { return horizon_; }
    std::size_t branching() const noexcept { return branching_; }
    int noise_dim() const noexcept { return noise_dim_; }
    std::size_t node_count() const noexcept { return offsets_.back(); }
    /// Nodes carrying a control: every stage below T.
    std::size_t interior_count() const noexcept { return offsets_[horizon_]; }
    std::size_t leaf_count() const noexcept { return node_count() - interior_count(); }

    /// theta(i)
    int stage(std::size_t i) const {
        int t = 0;
        while (i >= offsets_[t + 1]) ++t;
        return t;
    }
    /// nu(i); npos for roots.
    std::size_t parent(std::size_t i) const {
        const int t = stage(i);
        if (t == 0) return npos;
        return offsets_[t - 1] + (i - offsets_[t]) / branching_;
    }
    double probability(std::size_t i) const { return probability_[i]; }
    bool is_leaf(std::size_t i) const { return i >= interior_count(); }

    /// theta^{-1}(t)
    auto nodes_at(int t) const { return std::views::iota(offsets_[t], offsets_[t + 1]); }
    auto roots() const { return nodes_at(0); }
    auto leaves() const { return nodes_at(horizon_); }

    /// F(i); empty for leaves.
    auto children(std::size_t i) const {
        if (is_leaf(i)) return std::views::iota(std::size_t{0}, std::size_t{0});
        const int t = stage(i);
        const std::size_t first = offsets_[t + 1] + (i - offsets_[t]) * branching_;
        return std::views::iota(first, first + branching_);
    }

    /// F+(i): every strict descendant of i.
    std::vector<std::size_t> descendants(std::size_t i) const {
        std::vector<std::size_t> out;
        std::size_t lo = i, hi = i + 1;
        for (int t = stage(i); t < horizon_; ++t) {
            const std::size_t nlo = offsets_[t + 1] + (lo - offsets_[t]) * branching_;
            const std::size_t nhi = offsets_[t + 1] + (hi - offsets_[t]) * branching_;
            for (std::size_t j = nlo; j < nhi; ++j) out.push_back(j);
            lo = nlo;
            hi = nhi;
        }
        return out;
    }

    std::span<double> noise(std::size_t i) {
        return {noise_.data() + i * noise_dim_, static_cast<std::size_t>(noise_dim_)};
    }
    std::span<const double> noise(std::size_t i) const {
        return {noise_.data() + i * noise_dim_, static_cast<std::size_t>(noise_dim_)};
    }

private:
    int horizon_ = 0;
    std::size_t branching_ = 1;
    int noise_dim_ = 1;
    std::vector<std::size_t> offsets_;  // offsets_[t] = first node of stage t
    std::vector<double> probability_;
    std::vector<double> noise_;
};

/// Conditional sampling: nb draws of w_0 for the roots, then nb fresh draws
/// of w_{t+1} under every stage-t node, node by node.
template <ControlProblem P>
ScenarioTree build_tree(const P& problem, std::size_t branching, RngStream& rng,
                        std::size_t node_budget = kDefaultNodeBudget) {
    if (branching < 1) throw std::invalid_argument("build_tree: branching factor must be >= 1");
    const Dimensions d = problem.dims();
    const auto total = tree_node_count(branching, d.horizon, node_budget);
    if (!total || *total > node_budget)
        throw std::length_error("build_tree: tree with branching " + std::to_string(branching) +
                                " exceeds the node budget of " + std::to_string(node_budget));
    ScenarioTree tree(d.horizon, branching, d.noise_dim);
    for (int t = 0; t <= d.horizon; ++t)
        for (std::size_t i : tree.nodes_at(t)) problem.noise().draw(t, rng, tree.noise(i));
    return tree;
}

struct TreeSolution {
    int state_dim = 1;
    int control_dim = 1;
    std::vector<double> states;    // node_count x n_x
    std::vector<double> controls;  // interior_count x n_u
    double objective = 0.0;
    bool converged = true;
    int iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> objective_history;

    std::span<const double> state(std::size_t i) const {
        return {states.data() + i * state_dim, static_cast<std::size_t>(state_dim)};
    }
    std::span<const double> control(std::size_t i) const {
        return {controls.data() + i * control_dim, static_cast<std::size_t>(control_dim)};
    }
};

/// States from x'^i = w'^i at the roots and x'^i = f(x'^parent, u'^parent, w'^i).
template <ControlProblem P>
std::vector<double> tree_propagate(const P& problem, const ScenarioTree& tree,
                                   std::span<const double> controls) {
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim;
    if (d.state_dim != d.noise_dim)
        throw std::invalid_argument("tree_propagate: root states are noises, so n_x must equal n_w");
    std::vector<double> states(tree.node_count() * nx);
    for (std::size_t i : tree.roots()) {
        auto w = tree.noise(i);
        std::copy(w.begin(), w.end(), states.begin() + i * nx);
    }
    for (int t = 0; t < tree.horizon(); ++t)
        for (std::size_t i : tree.nodes_at(t)) {
            std::span<const double> x(states.data() + i * nx, nx);
            std::span<const double> u(controls.data() + i * nu, nu);
            for (std::size_t j : tree.children(i)) {
                std::span<double> out(states.data() + j * nx, nx);
                problem.dynamics(t, x, u, tree.noise(j), out);
                if (!all_finite(out)) throw NumericalError("tree_propagate: non-finite state", j, t + 1);
            }
        }
    return states;
}

/// sum over interior nodes of pi C + sum over leaves of pi V.
template <ControlProblem P>
double tree_objective(const P& problem, const ScenarioTree& tree, std::span<const double> states,
                      std::span<const double> controls) {
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim;
    double total = 0.0;
    for (int t = 0; t < tree.horizon(); ++t)
        for (std::size_t i : tree.nodes_at(t))
            total += tree.probability(i) *
                     problem.stage_cost(t, states.subspan(i * nx, nx), controls.subspan(i * nu, nu));
    for (std::size_t i : tree.leaves()) total += tree.probability(i) * problem.final_cost(states.subspan(i * nx, nx));
    return total;
}

struct TreeGradientOptions {
    double step = 0.1;
    double tol = 1e-8;
    int max_iter = 10000;
    std::vector<double> initial_controls;  // empty: zeros
};

/// Gradient per interior node, normalised by pi(i):
///   g'^i = dC/du^T + (1/nb) sum_{j in F(i)} df/du(x'^i, u'^i, w'^j)^T L'^j,
/// with adjoints L'^i = dV/dx^T at leaves and
///   L'^i = dC/dx^T + (1/nb) sum_{j in F(i)} df/dx(x'^i, u'^i, w'^j)^T L'^j.
template <ControlProblem P>
std::vector<double> tree_gradient(const P& problem, const ScenarioTree& tree,
                                  std::span<const double> states, std::span<const double> controls) {
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim;
    std::vector<double> adjoint(tree.node_count() * nx, 0.0);
    std::vector<double> grad(tree.interior_count() * nu, 0.0);
    for (std::size_t i : tree.leaves()) problem.final_cost_dx(states.subspan(i * nx, nx), {adjoint.data() + i * nx, nx});

    std::vector<double> jx(nx * nx), ju(nx * nu), cx(nx), cu(nu);
    const double inv_nb = 1.0 / static_cast<double>(tree.branching());
    for (int t = tree.horizon() - 1; t >= 0; --t)
        for (std::size_t i : tree.nodes_at(t)) {
            auto x = states.subspan(i * nx, nx);
            auto u = controls.subspan(i * nu, nu);
            std::vector<double> sx(nx, 0.0), su(nu, 0.0);
            for (std::size_t j : tree.children(i)) {
                problem.dynamics_dx(t, x, u, tree.noise(j), jx);
                problem.dynamics_du(t, x, u, tree.noise(j), ju);
                const double* lam = adjoint.data() + j * nx;
                for (std::size_t c = 0; c < nx; ++c)
                    for (std::size_t r = 0; r < nx; ++r) sx[c] += jx[r * nx + c] * lam[r];
                for (std::size_t c = 0; c < nu; ++c)
                    for (std::size_t r = 0; r < nx; ++r) su[c] += ju[r * nu + c] * lam[r];
            }
            problem.stage_cost_dx(t, x, u, cx);
            problem.stage_cost_du(t, x, u, cu);
            for (std::size_t k = 0; k < nx; ++k) adjoint[i * nx + k] = cx[k] + inv_nb * sx[k];
            for (std::size_t k = 0; k < nu; ++k) grad[i * nu + k] = cu[k] + inv_nb * su[k];
        }
    return grad;
}

/// Fixed-step gradient descent on the tree problem; stops once every node
/// gradient has Euclidean norm <= tol.
template <ControlProblem P>
TreeSolution solve_tree_gradient(const P& problem, const ScenarioTree& tree,
                                 const TreeGradientOptions& opt = {}) {
    if (!(opt.step > 0.0) || !(opt.tol > 0.0) || opt.max_iter < 1)
        throw std::invalid_argument("solve_tree_gradient: step, tol and max_iter must be positive");
    const Dimensions d = problem.dims();
    const std::size_t nu = d.control_dim;
    TreeSolution sol;
    sol.state_dim = d.state_dim;
    sol.control_dim = d.control_dim;
    if (opt.initial_controls.empty()) {
        sol.controls.assign(tree.interior_count() * nu, 0.0);
    } else {
        if (opt.initial_controls.size() != tree.interior_count() * nu)
            throw std::invalid_argument("solve_tree_gradient: initial controls have the wrong size");
        sol.controls = opt.initial_controls;
    }
    sol.converged = false;
    for (int k = 0;; ++k) {
        sol.states = tree_propagate(problem, tree, sol.controls);
        sol.objective = tree_objective(problem, tree, sol.states, sol.controls);
        sol.objective_history.push_back(sol.objective);
        const auto grad = tree_gradient(problem, tree, sol.states, sol.controls);
        double worst = 0.0;
        for (std::size_t i = 0; i < tree.interior_count(); ++i) {
            double n2 = 0.0;
            for (std::size_t c = 0; c < nu; ++c) n2 += grad[i * nu + c] * grad[i * nu + c];
            worst = std::max(worst, std::sqrt(n2));
        }
        if (!std::isfinite(worst)) throw NumericalError("solve_tree_gradient: non-finite gradient", 0, 0);
        sol.gradient_norm = worst;
        sol.iterations = k;
        if (worst <= opt.tol) {
            sol.converged = true;
            break;
        }
        if (k >= opt.max_iter) break;
        for (std::size_t m = 0; m < grad.size(); ++m) sol.controls[m] -= opt.step * grad[m];
    }
    return sol;
}

/// Closed-form minimiser of the scalar LQ benchmark on a tree:
///   u'^i = -(x'^i + sum_{j in F+(i)} (pi(j)/pi(i)) w'^j) / (T - theta(i) + eps).
inline TreeSolution solve_tree_lq_analytic(const ScenarioTree& tree, double epsilon) {
    if (tree.noise_dim() != 1)
        throw std::invalid_argument("solve_tree_lq_analytic: only scalar state and control are supported");
    if (!(epsilon > 0.0)) throw std::invalid_argument("solve_tree_lq_analytic: epsilon must be positive");
    const int T = tree.horizon();
    const double inv_nb = 1.0 / static_cast<double>(tree.branching());

    // future[i] = conditional mean of the noise still to come below i
    std::vector<double> future(tree.node_count(), 0.0);
    for (int t = T - 1; t >= 0; --t)
        for (std::size_t i : tree.nodes_at(t)) {
            double s = 0.0;
            for (std::size_t j : tree.children(i)) s += tree.noise(j)[0] + future[j];
            future[i] = inv_nb * s;
        }

    TreeSolution sol;
    sol.states.assign(tree.node_count(), 0.0);
    sol.controls.assign(tree.interior_count(), 0.0);
    for (std::size_t i : tree.roots()) sol.states[i] = tree.noise(i)[0];
    double objective = 0.0;
    for (int t = 0; t < T; ++t)
        for (std::size_t i : tree.nodes_at(t)) {
            const double u = -(sol.states[i] + future[i]) / (T - t + epsilon);
            sol.controls[i] = u;
            objective += tree.probability(i) * epsilon * u * u;
            for (std::size_t j : tree.children(i)) sol.states[j] = sol.states[i] + u + tree.noise(j)[0];
        }
    for (std::size_t i : tree.leaves()) objective += tree.probability(i) * sol.states[i] * sol.states[i];
    sol.objective = objective;
    sol.objective_history = {objective};
    return sol;
}

/// Nearest-neighbour policy over each stage's (x'^i, u'^i) node pairs.
inline FeedbackPolicy tree_to_policy(const ScenarioTree& tree, const TreeSolution& sol) {
    const std::size_t nx = sol.state_dim, nu = sol.control_dim;
    std::vector<StageSamples> stages(tree.horizon());
    for (int t = 0; t < tree.horizon(); ++t) {
        auto nodes = tree.nodes_at(t);
        const std::size_t first = *nodes.begin(), last = first + std::ranges::size(nodes);
        stages[t].states.assign(sol.states.begin() + first * nx, sol.states.begin() + last * nx);
        stages[t].controls.assign(sol.controls.begin() + first * nu, sol.controls.begin() + last * nu);
    }
    return fit_nearest_neighbor(stages, sol.state_dim, sol.control_dim);
}

/// One row per node: node_id,t,parent_id,pi,w...,x...,u... (parent -1 at
/// roots; u left empty at leaves; x and u omitted without a solution).
inline void write_tree_csv(std::ostream& os, const ScenarioTree& tree, const TreeSolution* sol = nullptr) {
    os << "node_id,t,parent_id,pi";
    for (int k = 0; k < tree.noise_dim(); ++k) os << ",w" << k;
    if (sol) {
        for (int k = 0; k < sol->state_dim; ++k) os << ",x" << k;
        for (int k = 0; k < sol->control_dim; ++k) os << ",u" << k;
    }
    os << '\n';
    for (std::size_t i = 0; i < tree.node_count(); ++i) {
        const std::size_t p = tree.parent(i);
        os << i << ',' << tree.stage(i) << ',' << (p == ScenarioTree::npos ? std::string("-1") : std::to_string(p))
           << ',' << csv_number(tree.probability(i));
        for (double w : tree.noise(i)) os << ',' << csv_number(w);
        if (sol) {
            for (double x : sol->state(i)) os << ',' << csv_number(x);
            for (int k = 0; k < sol->control_dim; ++k) {
                os << ',';
                if (!tree.is_leaf(i)) os << csv_number(sol->controls[i * sol->control_dim + k]);
            }
        }
        os << '\n';
    }
}

}  // namespace soc
