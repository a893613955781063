// Strategy error of a sample-based method: squared bias plus variance of its
// feedback policy against the optimal one, weighted by the optimal-state law.
#pragma once

#include <boost/random/sobol.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "soc/core.hpp"
#include "soc/csv.hpp"
#include "soc/policy.hpp"

namespace soc {

enum class PointMode { Qmc, PseudoRandom };

inline const char* to_string(PointMode m) { return m == PointMode::Qmc ? "qmc" : "pseudo"; }

/// Sobol points in [0,1)^dim with a Cranley-Patterson shift.
class ShiftedSobol {
public:
    ShiftedSobol(std::size_t dim, std::vector<double> shift) : engine_(dim), shift_(std::move(shift)) {
        if (shift_.size() != dim) throw std::invalid_argument("ShiftedSobol: shift must have dim entries");
    }

    void next(std::span<double> out) {
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53 + shift_[k];
            out[k] = u >= 1.0 ? u - 1.0 : u;
        }
    }

private:
    boost::random::sobol engine_;
    std::vector<double> shift_;
};

/// States distributed like the optimal state at each stage t = 0..T-1:
/// points[t] holds `count` states (flat, count x n_x).
struct EvalPointSet {
    int horizon = 0;
    int state_dim = 1;
    std::size_t count = 0;
    PointMode mode = PointMode::Qmc;
    std::vector<std::vector<double>> points;

    std::span<const double> point(int t, std::size_t p) const {
        return {points[t].data() + p * state_dim, static_cast<std::size_t>(state_dim)};
    }
};

/// Each point is a uniform vector in [0,1]^{T n_w} (low-discrepancy or
/// pseudo-random) mapped through the inverse-CDF noise laws and propagated
/// in closed loop under the optimal policy from x_0 = w_0. The stage-t state
/// only uses the first (t+1) n_w coordinates.
template <ControlProblem P>
EvalPointSet gen_eval_points(const P& problem, const FeedbackPolicy& optimal, std::size_t count, PointMode mode,
                             RngStream& rng) {
    if (count < 1) throw std::invalid_argument("gen_eval_points: need at least one point");
    const Dimensions d = problem.dims();
    if (d.state_dim != d.noise_dim) throw std::invalid_argument("gen_eval_points: x_0 = w_0 needs n_x == n_w");
    const std::size_t nw = d.noise_dim, nx = d.state_dim, nu = d.control_dim;
    const std::size_t dim = static_cast<std::size_t>(d.horizon) * nw;

    EvalPointSet set;
    set.horizon = d.horizon;
    set.state_dim = d.state_dim;
    set.count = count;
    set.mode = mode;
    set.points.assign(d.horizon, std::vector<double>(count * nx));

    std::vector<double> shift(dim);
    for (double& s : shift) s = rng.uniform();
    ShiftedSobol sobol(dim, shift);

    std::vector<double> unif(dim), x(nx), u(nu), w(nw), next(nx);
    for (std::size_t p = 0; p < count; ++p) {
        if (mode == PointMode::Qmc)
            sobol.next(unif);
        else
            for (double& v : unif) v = rng.uniform();
        problem.noise().map(0, std::span<const double>(unif.data(), nw), x);
        for (int t = 0; t < d.horizon; ++t) {
            std::copy(x.begin(), x.end(), set.points[t].begin() + p * nx);
            if (t + 1 == d.horizon) break;
            optimal.eval(t, x, u);
            problem.noise().map(t + 1, std::span<const double>(unif.data() + (t + 1) * nw, nw), w);
            problem.dynamics(t, x, u, w, next);
            x.swap(next);
        }
    }
    return set;
}

struct MseReport {
    std::string method;
    std::string param_name;
    double param_value = 0.0;
    std::size_t replications = 0;  // requested
    std::size_t used = 0;          // replications that entered the estimate
    std::size_t excluded = 0;
    std::size_t points = 0;
    std::uint64_t seed = 0;
    std::vector<double> squared_bias;  // per stage
    std::vector<double> variance;      // 1/R normalisation
    std::vector<double> mse;           // squared_bias + variance
    std::vector<double> mse_direct;    // mean of |gamma* - Gamma|^2, same evaluations

    double total_mse() const {
        double s = 0.0;
        for (double v : mse) s += v;
        return s;
    }
};

/// One replication's policy; unusable replicas are counted and skipped.
struct Replica {
    FeedbackPolicy policy;
    bool usable = true;
};

/// For every stage and point, v_r = Gamma_r(x_p) over the usable replicas,
/// m_p their mean, and
///   squared_bias = (1/P) sum_p |gamma*(x_p) - m_p|^2,
///   variance     = (1/P) sum_p (1/R) sum_r |v_r - m_p|^2.
/// Means and spreads are accumulated with Welford updates in replica order.
template <class MakePolicy>
MseReport mse_evaluate(MakePolicy&& make_policy, const FeedbackPolicy& optimal, const EvalPointSet& points,
                       std::size_t replications) {
    if (replications < 2) throw std::invalid_argument("mse_evaluate: need at least two replications");
    const int T = points.horizon;
    const std::size_t P = points.count;
    const std::size_t nu = optimal.control_dim();

    std::vector<std::vector<double>> target(T, std::vector<double>(P * nu));
    for (int t = 0; t < T; ++t)
        for (std::size_t p = 0; p < P; ++p)
            optimal.eval(t, points.point(t, p), std::span<double>(target[t].data() + p * nu, nu));

    std::vector<std::vector<double>> mean(T, std::vector<double>(P * nu, 0.0));
    std::vector<std::vector<double>> m2(T, std::vector<double>(P * nu, 0.0));
    std::vector<double> direct(T, 0.0);

    MseReport rep;
    rep.replications = replications;
    rep.points = P;
    std::vector<double> v(nu);
    for (std::size_t r = 0; r < replications; ++r) {
        Replica replica = make_policy(r);
        if (!replica.usable) {
            ++rep.excluded;
            continue;
        }
        const double n = static_cast<double>(++rep.used);
        for (int t = 0; t < T; ++t)
            for (std::size_t p = 0; p < P; ++p) {
                replica.policy.eval(t, points.point(t, p), v);
                for (std::size_t k = 0; k < nu; ++k) {
                    const std::size_t m = p * nu + k;
                    const double delta = v[k] - mean[t][m];
                    mean[t][m] += delta / n;
                    m2[t][m] += delta * (v[k] - mean[t][m]);
                    const double e = target[t][m] - v[k];
                    direct[t] += e * e;
                }
            }
    }
    if (rep.used < 2)
        throw std::runtime_error("mse_evaluate: fewer than two usable replications (" +
                                 std::to_string(rep.excluded) + " excluded)");

    const double inv_p = 1.0 / static_cast<double>(P);
    const double inv_r = 1.0 / static_cast<double>(rep.used);
    rep.squared_bias.assign(T, 0.0);
    rep.variance.assign(T, 0.0);
    rep.mse.assign(T, 0.0);
    rep.mse_direct.assign(T, 0.0);
    for (int t = 0; t < T; ++t) {
        double b = 0.0, s = 0.0;
        for (std::size_t m = 0; m < P * nu; ++m) {
            const double e = target[t][m] - mean[t][m];
            b += e * e;
            s += m2[t][m];
        }
        rep.squared_bias[t] = b * inv_p;
        rep.variance[t] = s * inv_r * inv_p;
        rep.mse[t] = rep.squared_bias[t] + rep.variance[t];
        rep.mse_direct[t] = direct[t] * inv_r * inv_p;
    }
    return rep;
}

/// Mean over M fresh scenarios and all stages of |u_dagger - u_star|^2,
/// each control taken along its own closed loop on shared noises.
template <ControlProblem P>
double simulation_indicator(const FeedbackPolicy& policy, const FeedbackPolicy& optimal, const P& problem,
                            std::size_t scenarios, RngStream& rng) {
    if (scenarios < 1) throw std::invalid_argument("simulation_indicator: need at least one scenario");
    const Dimensions d = problem.dims();
    const std::size_t nx = d.state_dim, nu = d.control_dim;
    const ScenarioBatch batch = sample_scenarios(problem, scenarios, rng);
    std::vector<double> xa(nx), xs(nx), ua(nu), us(nu), tmp(nx);
    double total = 0.0;
    for (std::size_t m = 0; m < scenarios; ++m) {
        auto w0 = batch.value(m, 0);
        std::copy(w0.begin(), w0.end(), xa.begin());
        std::copy(w0.begin(), w0.end(), xs.begin());
        for (int t = 0; t < d.horizon; ++t) {
            policy.eval(t, xa, ua);
            optimal.eval(t, xs, us);
            for (std::size_t k = 0; k < nu; ++k) total += (ua[k] - us[k]) * (ua[k] - us[k]);
            problem.dynamics(t, xa, ua, batch.value(m, t + 1), tmp);
            xa.swap(tmp);
            problem.dynamics(t, xs, us, batch.value(m, t + 1), tmp);
            xs.swap(tmp);
        }
    }
    return total / (static_cast<double>(scenarios) * d.horizon);
}

struct RateFit {
    std::vector<double> sizes;
    std::vector<double> errors;
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // sum of squared log residuals
};

/// Least squares of log(error) on log(size).
inline RateFit fit_rate(std::span<const double> sizes, std::span<const double> errors) {
    if (sizes.size() != errors.size()) throw std::invalid_argument("fit_rate: size/error length mismatch");
    if (sizes.size() < 3) throw std::invalid_argument("fit_rate: need at least three points");
    const std::size_t n = sizes.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sizes[i] > 0.0) || !(errors[i] > 0.0))
            throw std::invalid_argument("fit_rate: sizes and errors must be strictly positive");
        lx[i] = std::log(sizes[i]);
        ly[i] = std::log(errors[i]);
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw std::invalid_argument("fit_rate: sizes must not all be equal");
    RateFit fit;
    fit.sizes.assign(sizes.begin(), sizes.end());
    fit.errors.assign(errors.begin(), errors.end());
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        fit.residual += r * r;
    }
    return fit;
}

inline constexpr const char* kReportColumns =
    "method,param_name,param_value,t,bias_sq,variance,mse,R,P,excluded,seed";

/// One row per stage in the report CSV layout.
inline void write_report_rows(std::ostream& os, const MseReport& rep) {
    for (std::size_t t = 0; t < rep.mse.size(); ++t)
        os << rep.method << ',' << rep.param_name << ',' << csv_number(rep.param_value) << ',' << t << ','
           << csv_number(rep.squared_bias[t]) << ',' << csv_number(rep.variance[t]) << ','
           << csv_number(rep.mse[t]) << ',' << rep.replications << ',' << rep.points << ',' << rep.excluded << ','
           << rep.seed << '\n';
}

}  // namespace soc
