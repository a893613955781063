// Problem model shared by every solver: dimensions, the control-problem
// concept, the inverse-CDF noise model, scenario batches and seeded streams.
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace soc {

/// Raised when a solver produces a non-finite value. Carries the particle or
/// node index and the stage where it was first seen.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t index, int stage)
        : std::runtime_error(what + " (index " + std::to_string(index) +
                             ", stage " + std::to_string(stage) + ")"),
          index_(index), stage_(stage) {}

    std::size_t index() const noexcept { return index_; }
    int stage() const noexcept { return stage_; }

private:
    std::size_t index_;
    int stage_;
};

struct Dimensions {
    int horizon = 1;    // T: decision stages 0..T-1, states 0..T
    int state_dim = 1;
    int control_dim = 1;
    int noise_dim = 1;

    void validate() const {
        if (horizon < 1) throw std::invalid_argument("Dimensions: horizon must be >= 1");
        if (state_dim < 1 || control_dim < 1 || noise_dim < 1)
            throw std::invalid_argument("Dimensions: every dimension must be >= 1");
    }

    friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

inline bool all_finite(std::span<const double> v) {
    for (double a : v)
        if (!std::isfinite(a)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Seeds and streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic pseudo-random stream. Uniforms are built from the top 53
/// bits of a 64-bit Mersenne twister so values do not depend on the
/// standard library's distribution implementations.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Derives independent child streams from one master seed. The child seed
/// depends only on (master, replication, purpose), never on call order.
class SeedPlan {
public:
    explicit SeedPlan(std::uint64_t master_seed) : master_(master_seed) {}

    std::uint64_t master_seed() const noexcept { return master_; }

    std::uint64_t child_seed(std::uint64_t replication, std::string_view purpose) const {
        std::uint64_t h = splitmix64(master_ ^ 0x5851f42d4c957f2dULL);
        h = splitmix64(h ^ fnv1a(purpose));
        h = splitmix64(h ^ splitmix64(replication + 0x632be59bd9b4e019ULL));
        return h;
    }

    RngStream stream(std::uint64_t replication, std::string_view purpose) const {
        return RngStream(child_seed(replication, purpose));
    }

private:
    std::uint64_t master_;
};

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Per-stage noise laws w_0..w_T in inverse-CDF form: a point of [0,1]^n_w
/// is mapped to a noise vector. Stages carry no cross-stage state, so
/// independence across stages holds by construction.
class NoiseModel {
public:
    using Sampler = std::function<void(std::span<const double> uniform, std::span<double> out)>;

    struct Stage {
        Sampler sampler;
        std::vector<double> lower;  // support bounds per component
        std::vector<double> upper;
    };

    NoiseModel() = default;
    NoiseModel(int noise_dim, std::vector<Stage> stages)
        : dim_(noise_dim), stages_(std::move(stages)) {
        if (dim_ < 1) throw std::invalid_argument("NoiseModel: noise_dim must be >= 1");
        for (const auto& s : stages_) {
            if (!s.sampler) throw std::invalid_argument("NoiseModel: empty stage sampler");
            if (static_cast<int>(s.lower.size()) != dim_ || static_cast<int>(s.upper.size()) != dim_)
                throw std::invalid_argument("NoiseModel: support bounds must have noise_dim entries");
        }
    }

    /// i.i.d. uniform law on the box [lower, upper]^dim at every stage 0..horizon.
    static NoiseModel uniform_box(int horizon, int dim, double lower, double upper) {
        if (!(upper > lower)) throw std::invalid_argument("NoiseModel: empty box");
        const double width = upper - lower;
        std::vector<Stage> stages;
        for (int t = 0; t <= horizon; ++t) {
            stages.push_back(Stage{
                [lower, width](std::span<const double> u, std::span<double> out) {
                    for (std::size_t k = 0; k < out.size(); ++k) out[k] = lower + width * u[k];
                },
                std::vector<double>(dim, lower), std::vector<double>(dim, upper)});
        }
        return NoiseModel(dim, std::move(stages));
    }

    int dim() const noexcept { return dim_; }
    int stage_count() const noexcept { return static_cast<int>(stages_.size()); }
    const Stage& stage(int t) const { return stages_.at(t); }

    void map(int t, std::span<const double> uniform, std::span<double> out) const {
        stages_.at(t).sampler(uniform, out);
    }

    /// Draws one w_t from the stream.
    void draw(int t, RngStream& rng, std::span<double> out) const {
        double u[16];
        std::vector<double> big;
        std::span<double> us;
        if (dim_ <= 16) {
            us = std::span<double>(u, dim_);
        } else {
            big.resize(dim_);
            us = big;
        }
        for (auto& v : us) v = rng.uniform();
        map(t, us, out);
    }

private:
    int dim_ = 1;
    std::vector<Stage> stages_;
};

// ---------------------------------------------------------------------------
// Control problem
// ---------------------------------------------------------------------------

/// A discrete-time stochastic control problem
///   min E[ sum_t C_t(x_t, u_t) + V(x_T) ],  x_{t+1} = f_t(x_t, u_t, w_{t+1}), x_0 = w_0.
/// Jacobians are row-major: dynamics_dx is n_x by n_x, dynamics_du is n_x by n_u.
/// Cost gradients are written as plain vectors (the transposed row vectors).
template <class P>
concept ControlProblem = requires(const P& p, int t, std::span<const double> x,
                                  std::span<const double> u, std::span<const double> w,
                                  std::span<double> out) {
    { p.dims() } -> std::convertible_to<Dimensions>;
    { p.noise() } -> std::convertible_to<const NoiseModel&>;
    p.dynamics(t, x, u, w, out);
    p.dynamics_dx(t, x, u, w, out);
    p.dynamics_du(t, x, u, w, out);
    { p.stage_cost(t, x, u) } -> std::convertible_to<double>;
    p.stage_cost_dx(t, x, u, out);
    p.stage_cost_du(t, x, u, out);
    { p.final_cost(x) } -> std::convertible_to<double>;
    p.final_cost_dx(x, out);
};

/// A problem assembled from callables. Slower than a dedicated type but
/// convenient for tests and one-off models.
class FunctionalProblem {
public:
    using VecFn = std::function<void(int, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>)>;
    using CostFn = std::function<double(int, std::span<const double>, std::span<const double>)>;
    using CostGradFn = std::function<void(int, std::span<const double>, std::span<const double>,
                                          std::span<double>)>;
    using FinalFn = std::function<double(std::span<const double>)>;
    using FinalGradFn = std::function<void(std::span<const double>, std::span<double>)>;

    Dimensions dimensions;
    NoiseModel noise_model;
    VecFn f, f_dx, f_du;
    CostFn cost;
    CostGradFn cost_dx, cost_du;
    FinalFn final;
    FinalGradFn final_dx;

    Dimensions dims() const { return dimensions; }
    const NoiseModel& noise() const { return noise_model; }
    void dynamics(int t, std::span<const double> x, std::span<const double> u,
                  std::span<const double> w, std::span<double> out) const { f(t, x, u, w, out); }
    void dynamics_dx(int t, std::span<const double> x, std::span<const double> u,
                     std::span<const double> w, std::span<double> out) const { f_dx(t, x, u, w, out); }
    void dynamics_du(int t, std::span<const double> x, std::span<const double> u,
                     std::span<const double> w, std::span<double> out) const { f_du(t, x, u, w, out); }
    double stage_cost(int t, std::span<const double> x, std::span<const double> u) const {
        return cost(t, x, u);
    }
    void stage_cost_dx(int t, std::span<const double> x, std::span<const double> u,
                       std::span<double> out) const { cost_dx(t, x, u, out); }
    void stage_cost_du(int t, std::span<const double> x, std::span<const double> u,
                       std::span<double> out) const { cost_du(t, x, u, out); }
    double final_cost(std::span<const double> x) const { return final(x); }
    void final_cost_dx(std::span<const double> x, std::span<double> out) const { final_dx(x, out); }
};

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// N scenarios of (T+1) noise vectors, stored scenario-major:
/// value(i, t) is w_t of scenario i.
class ScenarioBatch {
public:
    ScenarioBatch() = default;
    ScenarioBatch(std::size_t count, int horizon, int noise_dim)
        : count_(count), horizon_(horizon), noise_dim_(noise_dim),
          values_(count * static_cast<std::size_t>(horizon + 1) * noise_dim, 0.0) {}

    std::size_t count() const noexcept { return count_; }
    int horizon() const noexcept { return horizon_; }
    int noise_dim() const noexcept { return noise_dim_; }

    std::span<double> value(std::size_t i, int t) {
        return {values_.data() + offset(i, t), static_cast<std::size_t>(noise_dim_)};
    }
    std::span<const double> value(std::size_t i, int t) const {
        return {values_.data() + offset(i, t), static_cast<std::size_t>(noise_dim_)};
    }

    const std::vector<double>& raw() const noexcept { return values_; }

    /// Scenario i's rows swapped into the order given by perm (new i = perm[i]).
    ScenarioBatch permuted(std::span<const std::size_t> perm) const {
        ScenarioBatch out(count_, horizon_, noise_dim_);
        for (std::size_t i = 0; i < count_; ++i)
            for (int t = 0; t <= horizon_; ++t) {
                auto src = value(perm[i], t);
                auto dst = out.value(i, t);
                std::copy(src.begin(), src.end(), dst.begin());
            }
        return out;
    }

private:
    std::size_t offset(std::size_t i, int t) const {
        return (i * static_cast<std::size_t>(horizon_ + 1) + static_cast<std::size_t>(t)) *
               static_cast<std::size_t>(noise_dim_);
    }

    std::size_t count_ = 0;
    int horizon_ = 0;
    int noise_dim_ = 1;
    std::vector<double> values_;
};

/// Draws N independent scenarios, scenario by scenario and stage by stage.
template <ControlProblem P>
ScenarioBatch sample_scenarios(const P& problem, std::size_t count, RngStream& rng) {
    if (count < 1) throw std::invalid_argument("sample_scenarios: count must be >= 1");
    const Dimensions d = problem.dims();
    const NoiseModel& noise = problem.noise();
    if (noise.stage_count() < d.horizon + 1)
        throw std::invalid_argument("sample_scenarios: noise model has too few stages");
    ScenarioBatch batch(count, d.horizon, d.noise_dim);
    for (std::size_t i = 0; i < count; ++i)
        for (int t = 0; t <= d.horizon; ++t) noise.draw(t, rng, batch.value(i, t));
    return batch;
}

// ---------------------------------------------------------------------------
// Derivative checking
// ---------------------------------------------------------------------------

struct ProbePoint {
    int t = 0;
    std::vector<double> x, u, w;
};

struct DerivativeReport {
    double dynamics_dx = 0.0;
    double dynamics_du = 0.0;
    double stage_cost_dx = 0.0;
    double stage_cost_du = 0.0;
    double final_cost_dx = 0.0;
    /// Largest |analytic - fd| / (1 + |analytic|) over every map.
    double max_relative = 0.0;
    bool non_finite = false;
    std::vector<std::string> notes;

    double max_abs() const {
        double m = dynamics_dx;
        for (double v : {dynamics_du, stage_cost_dx, stage_cost_du, final_cost_dx}) m = std::max(m, v);
        return m;
    }
};

/// Compares every user-supplied derivative against central differences of
/// the corresponding function, at each probe point.
template <ControlProblem P>
DerivativeReport check_derivatives(const P& problem, std::span<const ProbePoint> probes, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("check_derivatives: step must be positive");
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim;
    DerivativeReport rep;

    auto track = [&rep](double& slot, double analytic, double fd) {
        if (!std::isfinite(analytic) || !std::isfinite(fd)) {
            rep.non_finite = true;
            return;
        }
        const double dev = std::abs(analytic - fd);
        slot = std::max(slot, dev);
        rep.max_relative = std::max(rep.max_relative, dev / (1.0 + std::abs(analytic)));
    };

    std::vector<double> fp(nx), fm(nx), jx(nx * nx), ju(nx * nu), gx(nx), gu(nu), vx(nx);
    for (const auto& pr : probes) {
        if (pr.x.size() != nx || pr.u.size() != nu || pr.w.size() != static_cast<std::size_t>(d.noise_dim))
            throw std::invalid_argument("check_derivatives: probe has wrong dimensions");
        std::vector<double> x = pr.x, u = pr.u;
        const int t = pr.t;

        std::vector<double> f0(nx);
        problem.dynamics(t, x, u, pr.w, f0);
        const double c0 = problem.stage_cost(t, x, u);
        const double v0 = problem.final_cost(x);
        if (!all_finite(f0) || !std::isfinite(c0) || !std::isfinite(v0)) {
            rep.non_finite = true;
            rep.notes.push_back("non-finite function value at stage " + std::to_string(t));
            continue;
        }

        problem.dynamics_dx(t, x, u, pr.w, jx);
        problem.dynamics_du(t, x, u, pr.w, ju);
        problem.stage_cost_dx(t, x, u, gx);
        problem.stage_cost_du(t, x, u, gu);
        problem.final_cost_dx(x, vx);

        for (std::size_t k = 0; k < nx; ++k) {
            const double saved = x[k];
            x[k] = saved + h;
            problem.dynamics(t, x, u, pr.w, fp);
            const double cp = problem.stage_cost(t, x, u);
            const double vp = problem.final_cost(x);
            x[k] = saved - h;
            problem.dynamics(t, x, u, pr.w, fm);
            const double cm = problem.stage_cost(t, x, u);
            const double vm = problem.final_cost(x);
            x[k] = saved;
            for (std::size_t r = 0; r < nx; ++r)
                track(rep.dynamics_dx, jx[r * nx + k], (fp[r] - fm[r]) / (2 * h));
            track(rep.stage_cost_dx, gx[k], (cp - cm) / (2 * h));
            track(rep.final_cost_dx, vx[k], (vp - vm) / (2 * h));
        }
        for (std::size_t k = 0; k < nu; ++k) {
            const double saved = u[k];
            u[k] = saved + h;
            problem.dynamics(t, x, u, pr.w, fp);
            const double cp = problem.stage_cost(t, x, u);
            u[k] = saved - h;
            problem.dynamics(t, x, u, pr.w, fm);
            const double cm = problem.stage_cost(t, x, u);
            u[k] = saved;
            for (std::size_t r = 0; r < nx; ++r)
                track(rep.dynamics_du, ju[r * nu + k], (fp[r] - fm[r]) / (2 * h));
            track(rep.stage_cost_du, gu[k], (cp - cm) / (2 * h));
        }
    }
    if (rep.non_finite && rep.notes.empty()) rep.notes.push_back("non-finite derivative value");
    return rep;
}

}  // namespace soc
