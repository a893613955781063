// Particle method: sampled first-order optimality conditions solved by a
// fixed-step gradient iteration on control particles.
//
// Each iteration integrates N state particles forward, integrates adjoint
// particles backward through a regression of the stage-(t+1) adjoints on the
// stage-(t+1) states, and forms one gradient per control particle. The
// conditional expectations given x_t are sums over every noise particle
// w_{t+1}^j, j = 1..N, so a particle's own future noise plays no special role.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "soc/core.hpp"
#include "soc/csv.hpp"
#include "soc/policy.hpp"

namespace soc {

/// Flat particle arrays, particle-major: entry (i, t) of an array with
/// `stages` stages and width k starts at (i * stages + t) * k.
struct ParticleLayout {
    std::size_t count = 0;
    int horizon = 0;
    std::size_t nx = 1, nu = 1;

    std::size_t state_at(std::size_t i, int t) const { return (i * (horizon + 1) + t) * nx; }
    std::size_t control_at(std::size_t i, int t) const { return (i * horizon + t) * nu; }
    std::size_t state_size() const { return count * (horizon + 1) * nx; }
    std::size_t control_size() const { return count * horizon * nu; }
};

template <ControlProblem P>
ParticleLayout particle_layout(const P& problem, const ScenarioBatch& scenarios) {
    const Dimensions d = problem.dims();
    if (scenarios.horizon() != d.horizon || scenarios.noise_dim() != d.noise_dim)
        throw std::invalid_argument("particle method: scenario batch does not match the problem");
    if (scenarios.count() < 1) throw std::invalid_argument("particle method: need at least one scenario");
    return {scenarios.count(), d.horizon, static_cast<std::size_t>(d.state_dim),
            static_cast<std::size_t>(d.control_dim)};
}

/// x'^i_0 = w'^i_0 and x'^i_{t+1} = f_t(x'^i_t, u'^i_t, w'^i_{t+1}).
template <ControlProblem P>
std::vector<double> forward_pass(const P& problem, std::span<const double> controls,
                                 const ScenarioBatch& scenarios) {
    const ParticleLayout L = particle_layout(problem, scenarios);
    if (controls.size() != L.control_size()) throw std::invalid_argument("forward_pass: controls have the wrong size");
    if (problem.dims().state_dim != problem.dims().noise_dim)
        throw std::invalid_argument("forward_pass: initial states are noises, so n_x must equal n_w");
    std::vector<double> states(L.state_size());
    for (std::size_t i = 0; i < L.count; ++i) {
        auto w0 = scenarios.value(i, 0);
        std::copy(w0.begin(), w0.end(), states.begin() + L.state_at(i, 0));
        if (!all_finite(w0)) throw NumericalError("forward_pass: non-finite state", i, 0);
        for (int t = 0; t < L.horizon; ++t) {
            std::span<const double> x(states.data() + L.state_at(i, t), L.nx);
            std::span<double> next(states.data() + L.state_at(i, t + 1), L.nx);
            problem.dynamics(t, x, controls.subspan(L.control_at(i, t), L.nu), scenarios.value(i, t + 1), next);
            if (!all_finite(next)) throw NumericalError("forward_pass: non-finite state", i, t + 1);
        }
    }
    return states;
}

/// Problems whose dynamics Jacobians do not depend on the noise can set
/// `static constexpr bool noise_free_jacobians = true;` so the particle
/// sweeps multiply by them once per particle instead of once per noise.
template <class P>
concept noise_free_jacobians = requires { requires P::noise_free_jacobians; };

namespace detail {

/// Noise particles of stage t ordered by first coordinate (index breaks
/// ties). Summing in this order makes the j-sums independent of how the
/// scenarios are labelled and keeps successive regression queries close.
inline std::vector<std::size_t> noise_order(const ScenarioBatch& scenarios, int t) {
    std::vector<std::size_t> order(scenarios.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double wa = scenarios.value(a, t)[0], wb = scenarios.value(b, t)[0];
        return wa < wb || (wa == wb && a < b);
    });
    return order;
}

/// Fits the regression of stage-t adjoints on stage-t states.
template <Regressor R>
auto fit_adjoint(const R& regressor, const ParticleLayout& L, std::span<const double> states,
                 std::span<const double> adjoints, int t) {
    std::vector<double> centers(L.count * L.nx), values(L.count * L.nx);
    for (std::size_t j = 0; j < L.count; ++j)
        for (std::size_t k = 0; k < L.nx; ++k) {
            centers[j * L.nx + k] = states[L.state_at(j, t) + k];
            values[j * L.nx + k] = adjoints[L.state_at(j, t) + k];
        }
    return regressor.fit(std::move(centers), std::move(values), static_cast<int>(L.nx), static_cast<int>(L.nx));
}

/// For particle i at stage t, accumulates
///   sx = sum_j df/dx(x, u, w^j)^T Lt(f(x, u, w^j)),  su = sum_j df/du(...)^T Lt(...)
/// over the noise particles in `order`.
template <ControlProblem P, class Fitted>
void conditional_sums(const P& problem, const ParticleLayout& L, const ScenarioBatch& scenarios,
                      const Fitted& lambda_next, std::span<const std::size_t> order, int t,
                      std::span<const double> x, std::span<const double> u, std::span<double> sx,
                      std::span<double> su, bool want_x, bool want_u, std::size_t& cursor) {
    const std::size_t nx = L.nx, nu = L.nu;
    double y_buf[8], lam_buf[8];
    std::vector<double> y_big, lam_big;
    std::span<double> y, lam;
    if (nx <= 8) {
        y = {y_buf, nx};
        lam = {lam_buf, nx};
    } else {
        y_big.resize(nx);
        lam_big.resize(nx);
        y = y_big;
        lam = lam_big;
    }
    std::vector<double> jx(want_x ? nx * nx : 0), ju(want_u ? nx * nu : 0);
    std::fill(sx.begin(), sx.end(), 0.0);
    std::fill(su.begin(), su.end(), 0.0);
    if constexpr (noise_free_jacobians<P>) {
        // sum_j J^T L(y_j) = J^T sum_j L(y_j) when J does not depend on w
        std::vector<double> lam_sum(nx, 0.0);
        if (nx == 1) {
            double acc = 0.0;
            for (std::size_t j : order) {
                problem.dynamics(t, x, u, scenarios.value(j, t + 1), y);
                lambda_next.eval(y, lam, cursor);
                acc += lam[0];
            }
            lam_sum[0] = acc;
        } else {
            for (std::size_t j : order) {
                problem.dynamics(t, x, u, scenarios.value(j, t + 1), y);
                lambda_next.eval(y, lam, cursor);
                for (std::size_t r = 0; r < nx; ++r) lam_sum[r] += lam[r];
            }
        }
        auto w = scenarios.value(order[0], t + 1);
        if (want_x) {
            problem.dynamics_dx(t, x, u, w, jx);
            for (std::size_t c = 0; c < nx; ++c)
                for (std::size_t r = 0; r < nx; ++r) sx[c] += jx[r * nx + c] * lam_sum[r];
        }
        if (want_u) {
            problem.dynamics_du(t, x, u, w, ju);
            for (std::size_t c = 0; c < nu; ++c)
                for (std::size_t r = 0; r < nx; ++r) su[c] += ju[r * nu + c] * lam_sum[r];
        }
        return;
    }
    for (std::size_t j : order) {
        auto w = scenarios.value(j, t + 1);
        problem.dynamics(t, x, u, w, y);
        lambda_next.eval(y, lam, cursor);
        if (want_x) {
            problem.dynamics_dx(t, x, u, w, jx);
            for (std::size_t c = 0; c < nx; ++c)
                for (std::size_t r = 0; r < nx; ++r) sx[c] += jx[r * nx + c] * lam[r];
        }
        if (want_u) {
            problem.dynamics_du(t, x, u, w, ju);
            for (std::size_t c = 0; c < nu; ++c)
                for (std::size_t r = 0; r < nx; ++r) su[c] += ju[r * nu + c] * lam[r];
        }
    }
}

/// Backward sweep shared by backward_pass, gradient_pass and the solver.
/// When `adjoints_in` is non-empty the stage-(t+1) regressions are fitted on
/// those adjoints instead of the ones computed during the sweep.
template <ControlProblem P, Regressor R>
void sweep(const P& problem, const ParticleLayout& L, std::span<const double> states,
           std::span<const double> controls, const ScenarioBatch& scenarios, const R& regressor,
           std::span<const double> adjoints_in, std::vector<double>* adjoints_out,
           std::vector<double>* gradients_out) {
    const std::size_t nx = L.nx, nu = L.nu;
    const bool want_u = gradients_out != nullptr;
    const bool want_x = adjoints_out != nullptr;
    std::vector<double> adjoints;
    if (want_x || adjoints_in.empty()) {
        adjoints.assign(L.state_size(), 0.0);
        for (std::size_t i = 0; i < L.count; ++i) {
            std::span<double> out(adjoints.data() + L.state_at(i, L.horizon), nx);
            problem.final_cost_dx(std::span<const double>(states.data() + L.state_at(i, L.horizon), nx), out);
            if (!all_finite(out)) throw NumericalError("backward_pass: non-finite adjoint", i, L.horizon);
        }
    }
    std::span<const double> source = adjoints_in.empty() ? std::span<const double>(adjoints) : adjoints_in;
    if (want_u) gradients_out->assign(L.control_size(), 0.0);

    std::vector<double> sx(nx), su(nu), cx(nx), cu(nu);
    const double inv_n = 1.0 / static_cast<double>(L.count);
    for (int t = L.horizon - 1; t >= 0; --t) {
        const auto lambda_next = fit_adjoint(regressor, L, states, source, t + 1);
        const auto order = noise_order(scenarios, t + 1);
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < L.count; ++i) {
            std::span<const double> x(states.data() + L.state_at(i, t), nx);
            std::span<const double> u(controls.data() + L.control_at(i, t), nu);
            const bool need_x = want_x || adjoints_in.empty();
            conditional_sums(problem, L, scenarios, lambda_next, order, t, x, u, sx, su, need_x, want_u, cursor);
            if (need_x) {
                problem.stage_cost_dx(t, x, u, cx);
                for (std::size_t k = 0; k < nx; ++k) {
                    const double v = cx[k] + inv_n * sx[k];
                    if (!std::isfinite(v)) throw NumericalError("backward_pass: non-finite adjoint", i, t);
                    adjoints[L.state_at(i, t) + k] = v;
                }
            }
            if (want_u) {
                problem.stage_cost_du(t, x, u, cu);
                for (std::size_t k = 0; k < nu; ++k) {
                    const double v = cu[k] + inv_n * su[k];
                    if (!std::isfinite(v)) throw NumericalError("gradient_pass: non-finite gradient", i, t);
                    (*gradients_out)[L.control_at(i, t) + k] = v;
                }
            }
        }
    }
    if (want_x) *adjoints_out = std::move(adjoints);
}

}  // namespace detail

/// Adjoint particles: L'^i_T = dV/dx(x'^i_T)^T and, for t = T-1..0,
///   L'^i_t = dC_t/dx(x'^i_t, u'^i_t)^T
///          + (1/N) sum_j df_t/dx(x'^i_t, u'^i_t, w'^j_{t+1})^T Lt_{t+1}(f_t(x'^i_t, u'^i_t, w'^j_{t+1})),
/// where Lt_{t+1} is refitted on (x'^j_{t+1}, L'^j_{t+1}) at every stage.
template <ControlProblem P, Regressor R = NearestNeighborRegressor>
std::vector<double> backward_pass(const P& problem, std::span<const double> states,
                                  std::span<const double> controls, const ScenarioBatch& scenarios,
                                  const R& regressor = {}) {
    const ParticleLayout L = particle_layout(problem, scenarios);
    if (states.size() != L.state_size() || controls.size() != L.control_size())
        throw std::invalid_argument("backward_pass: array sizes do not match the scenarios");
    std::vector<double> adjoints;
    detail::sweep(problem, L, states, controls, scenarios, regressor, {}, &adjoints, nullptr);
    return adjoints;
}

/// Gradient particles
///   g'^i_t = dC_t/du^T + (1/N) sum_j df_t/du(x'^i_t, u'^i_t, w'^j_{t+1})^T Lt_{t+1}(f_t(...)),
/// with Lt_{t+1} fitted on the given adjoint particles.
template <ControlProblem P, Regressor R = NearestNeighborRegressor>
std::vector<double> gradient_pass(const P& problem, std::span<const double> states,
                                  std::span<const double> controls, std::span<const double> adjoints,
                                  const ScenarioBatch& scenarios, const R& regressor = {}) {
    const ParticleLayout L = particle_layout(problem, scenarios);
    if (states.size() != L.state_size() || controls.size() != L.control_size() ||
        adjoints.size() != L.state_size())
        throw std::invalid_argument("gradient_pass: array sizes do not match the scenarios");
    std::vector<double> gradients;
    detail::sweep(problem, L, states, controls, scenarios, regressor, adjoints, nullptr, &gradients);
    return gradients;
}

/// Adjoints and gradients from one backward sweep; equal to calling
/// backward_pass then gradient_pass.
template <ControlProblem P, Regressor R = NearestNeighborRegressor>
void adjoint_gradient_pass(const P& problem, std::span<const double> states, std::span<const double> controls,
                           const ScenarioBatch& scenarios, std::vector<double>& adjoints,
                           std::vector<double>& gradients, const R& regressor = {}) {
    const ParticleLayout L = particle_layout(problem, scenarios);
    detail::sweep(problem, L, states, controls, scenarios, regressor, {}, &adjoints, &gradients);
}

enum class SolveStatus {
    Converged,      // max gradient norm <= tol
    Stalled,        // gradient norm stopped improving above tol
    MaxIterations,  // iteration budget exhausted while still improving
    Diverged,       // gradient norm grew past divergence_factor times its start
};

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::Stalled: return "stalled";
        case SolveStatus::MaxIterations: return "max_iterations";
        case SolveStatus::Diverged: return "diverged";
    }
    return "unknown";
}

/// A result usable for policy evaluation.
inline bool usable(SolveStatus s) { return s == SolveStatus::Converged || s == SolveStatus::Stalled; }

struct ParticleSolveConfig {
    double step = 0.05;
    double tol = 1e-4;
    int max_iter = 1000;
    /// Constant initial control, broadcast to every particle and stage.
    std::vector<double> initial_constant;
    /// Full initial control array (N x T x n_u); overrides initial_constant.
    std::vector<double> initial_controls;
    /// Nearest-neighbour regression has a resolution floor on the attainable
    /// gradient norm. When the best norm has not dropped by stall_ratio over
    /// stall_window iterations the solve stops as Stalled. 0 disables.
    int stall_window = 25;
    double stall_ratio = 0.01;
    double divergence_factor = 1e3;

    void validate() const {
        if (!(step > 0.0) || !(tol > 0.0) || max_iter < 1)
            throw std::invalid_argument("ParticleSolveConfig: step, tol and max_iter must be positive");
        if (stall_window < 0 || !(stall_ratio >= 0.0 && stall_ratio < 1.0))
            throw std::invalid_argument("ParticleSolveConfig: bad stall settings");
    }
};

struct ParticleSystem {
    ParticleLayout layout;
    ScenarioBatch scenarios;
    std::vector<double> states;     // N x (T+1) x n_x
    std::vector<double> controls;   // N x T x n_u
    std::vector<double> adjoints;   // N x (T+1) x n_x
    std::vector<double> gradients;  // N x T x n_u
    int iteration = 0;              // iteration of the stored iterate
    int iterations_run = 0;
    std::vector<double> max_grad_history;
    std::vector<double> objective_history;

    std::span<const double> state(std::size_t i, int t) const {
        return {states.data() + layout.state_at(i, t), layout.nx};
    }
    std::span<const double> control(std::size_t i, int t) const {
        return {controls.data() + layout.control_at(i, t), layout.nu};
    }
    std::span<const double> adjoint(std::size_t i, int t) const {
        return {adjoints.data() + layout.state_at(i, t), layout.nx};
    }
    std::span<const double> gradient(std::size_t i, int t) const {
        return {gradients.data() + layout.control_at(i, t), layout.nu};
    }
};

struct ParticleResult {
    ParticleSystem system;
    FeedbackPolicy policy;
    SolveStatus status = SolveStatus::MaxIterations;
    double final_grad_norm = 0.0;

    bool converged() const { return status == SolveStatus::Converged; }
};

inline double max_gradient_norm(const ParticleLayout& L, std::span<const double> gradients) {
    double worst = 0.0;
    for (std::size_t m = 0; m < L.count * L.horizon; ++m) {
        double n2 = 0.0;
        for (std::size_t k = 0; k < L.nu; ++k) n2 += gradients[m * L.nu + k] * gradients[m * L.nu + k];
        worst = std::max(worst, std::sqrt(n2));
    }
    return worst;
}

/// (1/N) sum_i [ sum_t C_t(x'^i_t, u'^i_t) + V(x'^i_T) ].
template <ControlProblem P>
double empirical_objective(const P& problem, const ParticleLayout& L, std::span<const double> states,
                           std::span<const double> controls) {
    double total = 0.0;
    for (std::size_t i = 0; i < L.count; ++i) {
        for (int t = 0; t < L.horizon; ++t)
            total += problem.stage_cost(t, states.subspan(L.state_at(i, t), L.nx),
                                        controls.subspan(L.control_at(i, t), L.nu));
        total += problem.final_cost(states.subspan(L.state_at(i, L.horizon), L.nx));
    }
    return total / static_cast<double>(L.count);
}

/// Nearest-neighbour policy over the per-stage (x'^i_t, u'^i_t) particles.
inline FeedbackPolicy particles_to_policy(const ParticleLayout& L, std::span<const double> states,
                                          std::span<const double> controls) {
    std::vector<StageSamples> stages(L.horizon);
    for (int t = 0; t < L.horizon; ++t) {
        stages[t].states.reserve(L.count * L.nx);
        stages[t].controls.reserve(L.count * L.nu);
        for (std::size_t i = 0; i < L.count; ++i) {
            auto x = states.subspan(L.state_at(i, t), L.nx);
            auto u = controls.subspan(L.control_at(i, t), L.nu);
            stages[t].states.insert(stages[t].states.end(), x.begin(), x.end());
            stages[t].controls.insert(stages[t].controls.end(), u.begin(), u.end());
        }
    }
    return fit_nearest_neighbor(stages, static_cast<int>(L.nx), static_cast<int>(L.nu));
}

/// Gradient iteration u'^i <- u'^i - step * g'^i until every gradient
/// particle has norm <= tol, the norm stalls, diverges, or max_iter is hit.
/// The returned system is the iterate with the smallest max gradient norm.
template <ControlProblem P, Regressor R = NearestNeighborRegressor>
ParticleResult particle_solve(const P& problem, const ScenarioBatch& scenarios, const ParticleSolveConfig& config,
                              const R& regressor = {}) {
    config.validate();
    const ParticleLayout L = particle_layout(problem, scenarios);

    std::vector<double> controls;
    if (!config.initial_controls.empty()) {
        if (config.initial_controls.size() != L.control_size())
            throw std::invalid_argument("particle_solve: initial controls have the wrong size");
        controls = config.initial_controls;
    } else if (!config.initial_constant.empty()) {
        if (config.initial_constant.size() != L.nu)
            throw std::invalid_argument("particle_solve: initial constant must have n_u entries");
        controls.resize(L.control_size());
        for (std::size_t m = 0; m < controls.size(); ++m) controls[m] = config.initial_constant[m % L.nu];
    } else {
        controls.assign(L.control_size(), 0.0);
    }

    ParticleResult result;
    ParticleSystem& best = result.system;
    best.layout = L;
    best.scenarios = scenarios;
    double best_norm = std::numeric_limits<double>::infinity();
    double reference_norm = best_norm;  // best norm at the last significant improvement
    int last_improvement = 0;
    double first_norm = 0.0;

    std::vector<double> adjoints, gradients;
    for (int k = 0;; ++k) {
        std::vector<double> states = forward_pass(problem, controls, scenarios);
        detail::sweep(problem, L, states, controls, scenarios, regressor, {}, &adjoints, &gradients);
        const double norm = max_gradient_norm(L, gradients);
        best.max_grad_history.push_back(norm);
        best.objective_history.push_back(empirical_objective(problem, L, states, controls));
        best.iterations_run = k + 1;
        if (k == 0) first_norm = norm;

        if (norm < best_norm) {
            best_norm = norm;
            best.states = std::move(states);
            best.controls = controls;
            best.adjoints = adjoints;
            best.gradients = gradients;
            best.iteration = k;
        }
        if (best_norm < reference_norm * (1.0 - config.stall_ratio) || k == 0) {
            reference_norm = best_norm;
            last_improvement = k;
        }

        if (norm <= config.tol) {
            result.status = SolveStatus::Converged;
            break;
        }
        if (!(norm <= config.divergence_factor * std::max(first_norm, config.tol))) {
            result.status = SolveStatus::Diverged;
            break;
        }
        if (config.stall_window > 0 && k - last_improvement >= config.stall_window) {
            result.status = SolveStatus::Stalled;
            break;
        }
        if (k + 1 >= config.max_iter) {
            result.status = SolveStatus::MaxIterations;
            break;
        }
        for (std::size_t m = 0; m < controls.size(); ++m) controls[m] -= config.step * gradients[m];
    }
    result.final_grad_norm = best_norm;
    result.policy = particles_to_policy(L, best.states, best.controls);
    return result;
}

/// Writes `iter,max_grad_norm,empirical_objective` for every iteration run.
inline void write_trace_csv(std::ostream& os, const ParticleSystem& system) {
    os << "iter,max_grad_norm,empirical_objective\n";
    for (std::size_t k = 0; k < system.max_grad_history.size(); ++k)
        os << k << ',' << csv_number(system.max_grad_history[k]) << ','
           << csv_number(system.objective_history[k]) << '\n';
}

}  // namespace soc
