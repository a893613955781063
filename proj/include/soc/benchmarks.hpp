// Linear-quadratic benchmark
//   min E[ eps * sum_t |u_t|^2 + |x_T|^2 ],  x_{t+1} = x_t + u_t + w_{t+1},  x_0 = w_0,
// with w_t i.i.d. uniform on [-1,1]^d, plus the oracles used to verify it.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "soc/core.hpp"
#include "soc/policy.hpp"

namespace soc {

struct LqBenchmark {
    int horizon = 4;
    double epsilon = 1.0;
    int dim = 1;

    void validate() const {
        if (horizon < 1) throw std::invalid_argument("LqBenchmark: horizon must be >= 1");
        if (!(epsilon > 0.0)) throw std::invalid_argument("LqBenchmark: epsilon must be positive");
        if (dim < 1) throw std::invalid_argument("LqBenchmark: dim must be >= 1");
    }

    friend bool operator==(const LqBenchmark&, const LqBenchmark&) = default;
};

/// The benchmark as a ControlProblem. Every map acts componentwise.
class LqProblem {
public:
    static constexpr bool noise_free_jacobians = true;

    explicit LqProblem(const LqBenchmark& bench)
        : bench_(bench), noise_(NoiseModel::uniform_box(bench.horizon, bench.dim, -1.0, 1.0)) {
        bench.validate();
    }

    const LqBenchmark& benchmark() const noexcept { return bench_; }
    Dimensions dims() const { return {bench_.horizon, bench_.dim, bench_.dim, bench_.dim}; }
    const NoiseModel& noise() const noexcept { return noise_; }

    void dynamics(int, std::span<const double> x, std::span<const double> u,
                  std::span<const double> w, std::span<double> out) const {
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] + u[k] + w[k];
    }
    void dynamics_dx(int, std::span<const double>, std::span<const double>, std::span<const double>,
                     std::span<double> out) const {
        identity(out);
    }
    void dynamics_du(int, std::span<const double>, std::span<const double>, std::span<const double>,
                     std::span<double> out) const {
        identity(out);
    }
    double stage_cost(int, std::span<const double>, std::span<const double> u) const {
        double s = 0.0;
        for (double a : u) s += a * a;
        return bench_.epsilon * s;
    }
    void stage_cost_dx(int, std::span<const double>, std::span<const double>, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
    }
    void stage_cost_du(int, std::span<const double>, std::span<const double> u, std::span<double> out) const {
        for (std::size_t k = 0; k < u.size(); ++k) out[k] = 2.0 * bench_.epsilon * u[k];
    }
    double final_cost(std::span<const double> x) const {
        double s = 0.0;
        for (double a : x) s += a * a;
        return s;
    }
    void final_cost_dx(std::span<const double> x, std::span<double> out) const {
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = 2.0 * x[k];
    }

private:
    void identity(std::span<double> out) const {
        const std::size_t d = static_cast<std::size_t>(bench_.dim);
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t k = 0; k < d; ++k) out[k * d + k] = 1.0;
    }

    LqBenchmark bench_;
    NoiseModel noise_;
};

inline LqProblem lq_problem(const LqBenchmark& bench) { return LqProblem(bench); }

/// gamma*_t(x) = -x / (T - t + eps), componentwise.
inline FeedbackPolicy lq_optimal_policy(const LqBenchmark& bench) {
    bench.validate();
    const int T = bench.horizon;
    const double eps = bench.epsilon;
    return FeedbackPolicy::closed_form(T, bench.dim, bench.dim,
                                       [T, eps](int t, std::span<const double> x, std::span<double> out) {
                                           const double gain = 1.0 / (T - t + eps);
                                           for (std::size_t k = 0; k < x.size(); ++k) out[k] = -x[k] * gain;
                                       });
}

/// Gradient of the optimal cost-to-go: 2 eps x / (T - t + eps). Centred noise
/// makes the state-independent term vanish.
inline std::vector<double> lq_optimal_adjoint(const LqBenchmark& bench, int t, std::span<const double> x) {
    if (t < 0 || t > bench.horizon) throw std::out_of_range("lq_optimal_adjoint: stage out of range");
    const double gain = 2.0 * bench.epsilon / (bench.horizon - t + bench.epsilon);
    std::vector<double> out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = gain * x[k];
    return out;
}

// ---------------------------------------------------------------------------
// Grid dynamic-programming oracle (1-D)
// ---------------------------------------------------------------------------

struct UniformGrid {
    double lower = 0.0;
    double step = 1.0;
    std::size_t count = 1;

    static UniformGrid symmetric(double half_width, double step) {
        const auto n = static_cast<std::size_t>(std::llround(2.0 * half_width / step)) + 1;
        return {-half_width, step, n};
    }
    double at(std::size_t i) const { return lower + step * static_cast<double>(i); }
    double upper() const { return at(count - 1); }
};

struct GridDpOptions {
    UniformGrid x_grid = UniformGrid::symmetric(5.0, 0.01);
    UniformGrid u_grid = UniformGrid::symmetric(5.0, 0.01);
    int quad_nodes = 64;
    /// Re-run on grids with half the step and compare policies on [-2, 2].
    bool self_check = false;
    double self_check_tolerance = 2e-3;
};

struct GridDpResult {
    UniformGrid x_grid;
    std::vector<std::vector<double>> policy;  // policy[t][i], t = 0..T-1
    std::vector<std::vector<double>> value;   // value[t][i], t = 0..T
    bool coarse_warning = false;
    double self_check_gap = 0.0;

    /// Linear interpolation of a stage table.
    static double interpolate(const UniformGrid& g, const std::vector<double>& table, double x) {
        const double s = (x - g.lower) / g.step;
        auto i = static_cast<std::ptrdiff_t>(std::floor(s));
        i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(g.count) - 2);
        const double a = s - static_cast<double>(i);
        return table[i] * (1.0 - a) + table[i + 1] * a;
    }

    double policy_at(int t, double x) const { return interpolate(x_grid, policy.at(t), x); }
    double value_at(int t, double x) const { return interpolate(x_grid, value.at(t), x); }
};

namespace detail {

inline GridDpResult lq_grid_dp_once(const LqBenchmark& bench, const GridDpOptions& opt) {
    const int T = bench.horizon;
    const double eps = bench.epsilon;
    const auto& xg = opt.x_grid;
    const auto& ug = opt.u_grid;
    const int nq = opt.quad_nodes;

    std::vector<double> nodes(nq);
    for (int q = 0; q < nq; ++q) nodes[q] = -1.0 + (2.0 * q + 1.0) / nq;  // midpoints of [-1,1]

    GridDpResult res;
    res.x_grid = xg;
    res.value.assign(T + 1, std::vector<double>(xg.count));
    res.policy.assign(T, std::vector<double>(xg.count));
    for (std::size_t i = 0; i < xg.count; ++i) res.value[T][i] = xg.at(i) * xg.at(i);

    // E_w V(y + w) tabulated on the x grid, then Q(u) = eps u^2 + EV(x + u).
    std::vector<double> expected(xg.count);
    for (int t = T - 1; t >= 0; --t) {
        const auto& next = res.value[t + 1];
        for (std::size_t i = 0; i < xg.count; ++i) {
            double s = 0.0;
            for (double w : nodes) s += GridDpResult::interpolate(xg, next, xg.at(i) + w);
            expected[i] = s / nq;
        }
        auto q_value = [&](double x, double u) {
            return eps * u * u + GridDpResult::interpolate(xg, expected, x + u);
        };
        for (std::size_t i = 0; i < xg.count; ++i) {
            const double x = xg.at(i);
            std::size_t best = 0;
            double best_q = q_value(x, ug.at(0));
            for (std::size_t k = 1; k < ug.count; ++k) {
                const double qv = q_value(x, ug.at(k));
                if (qv < best_q) {
                    best_q = qv;
                    best = k;
                }
            }
            double u_star = ug.at(best);
            if (best > 0 && best + 1 < ug.count) {
                // parabola through the bracketing triple
                const double qm = q_value(x, ug.at(best - 1)), qp = q_value(x, ug.at(best + 1));
                const double denom = qm - 2.0 * best_q + qp;
                if (denom > 0.0) {
                    u_star += 0.5 * ug.step * (qm - qp) / denom;
                    best_q = q_value(x, u_star);
                }
            }
            res.policy[t][i] = u_star;
            res.value[t][i] = best_q;
        }
    }
    return res;
}

}  // namespace detail

/// Backward value iteration on a state grid with midpoint quadrature over w.
/// Only the scalar benchmark is supported.
inline GridDpResult lq_grid_dp(const LqBenchmark& bench, const GridDpOptions& opt = {}) {
    bench.validate();
    if (bench.dim != 1) throw std::invalid_argument("lq_grid_dp: only dim = 1 is supported");
    if (opt.quad_nodes < 1 || opt.x_grid.count < 2 || opt.u_grid.count < 1)
        throw std::invalid_argument("lq_grid_dp: degenerate grid");
    GridDpResult res = detail::lq_grid_dp_once(bench, opt);
    if (opt.self_check) {
        GridDpOptions fine = opt;
        fine.self_check = false;
        fine.x_grid = UniformGrid::symmetric(-opt.x_grid.lower, opt.x_grid.step / 2);
        fine.u_grid = UniformGrid::symmetric(-opt.u_grid.lower, opt.u_grid.step / 2);
        const GridDpResult ref = detail::lq_grid_dp_once(bench, fine);
        double gap = 0.0;
        for (int t = 0; t < bench.horizon; ++t)
            for (double x = -2.0; x <= 2.0 + 1e-12; x += 0.05)
                gap = std::max(gap, std::abs(res.policy_at(t, x) - ref.policy_at(t, x)));
        res.self_check_gap = gap;
        res.coarse_warning = gap > opt.self_check_tolerance;
    }
    return res;
}

}  // namespace soc
