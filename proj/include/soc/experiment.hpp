// Convergence experiments on the LQ benchmark: configuration, replication
// drivers for both methods, and CSV output.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "soc/benchmarks.hpp"
#include "soc/core.hpp"
#include "soc/csv.hpp"
#include "soc/evaluation.hpp"
#include "soc/particle.hpp"
#include "soc/policy.hpp"
#include "soc/scenario_tree.hpp"

namespace soc {

enum class Method { Tree, Particle };
enum class TreeSolver { Analytic, Gradient };

inline const char* to_string(Method m) { return m == Method::Tree ? "tree" : "particle"; }
inline const char* to_string(TreeSolver s) { return s == TreeSolver::Analytic ? "analytic" : "gradient"; }

/// Fully resolved experiment settings. A step or tol of 0 means "use the
/// method default" and is replaced by resolved().
struct ExperimentConfig {
    LqBenchmark bench;
    Method method = Method::Tree;
    std::vector<std::size_t> grid;
    std::size_t replications = 1000;
    std::size_t points = 1000;
    PointMode point_mode = PointMode::Qmc;
    TreeSolver solver = TreeSolver::Analytic;
    double step = 0.0;
    double tol = 0.0;
    int max_iter = 0;
    int stall_window = 25;
    std::size_t node_budget = kDefaultNodeBudget;
    std::uint64_t seed = 1;
    std::string out;

    const char* param_name() const { return method == Method::Tree ? "n_b" : "N"; }

    ExperimentConfig resolved() const {
        ExperimentConfig c = *this;
        const double T = bench.horizon, eps = bench.epsilon;
        if (c.method == Method::Tree) {
            if (c.step == 0.0) c.step = 0.5 / (eps + T);
            if (c.tol == 0.0) c.tol = 1e-9;
            if (c.max_iter == 0) c.max_iter = 100000;
        } else {
            if (c.step == 0.0) c.step = 0.1 / (1.0 + eps);
            if (c.tol == 0.0) c.tol = 1e-4;
            if (c.max_iter == 0) c.max_iter = 1000;
        }
        return c;
    }

    void validate() const {
        bench.validate();
        if (grid.empty()) throw std::invalid_argument("config: grid is empty");
        for (std::size_t g : grid)
            if (g < 1) throw std::invalid_argument("config: grid values must be >= 1");
        if (replications < 2) throw std::invalid_argument("config: replications must be >= 2");
        if (points < 1) throw std::invalid_argument("config: points must be >= 1");
        if (step < 0.0 || tol < 0.0 || max_iter < 0 || stall_window < 0)
            throw std::invalid_argument("config: solver settings must be non-negative");
        if (method == Method::Tree && solver == TreeSolver::Analytic && bench.dim != 1)
            throw std::invalid_argument("config: the analytic tree solver needs dim = 1; use solver = gradient");
    }

    /// `key = value` lines, the same format parse_config reads.
    std::vector<std::string> echo() const {
        const ExperimentConfig c = resolved();
        std::string g;
        for (std::size_t k = 0; k < c.grid.size(); ++k) g += (k ? "," : "") + std::to_string(c.grid[k]);
        return {
            std::string("method = ") + to_string(c.method),
            "horizon = " + std::to_string(c.bench.horizon),
            "epsilon = " + csv_number(c.bench.epsilon),
            "dim = " + std::to_string(c.bench.dim),
            "grid = " + g,
            "replications = " + std::to_string(c.replications),
            "points = " + std::to_string(c.points),
            std::string("point_mode = ") + to_string(c.point_mode),
            std::string("solver = ") + to_string(c.solver),
            "step = " + csv_number(c.step),
            "tol = " + csv_number(c.tol),
            "max_iter = " + std::to_string(c.max_iter),
            "stall_window = " + std::to_string(c.stall_window),
            "node_budget = " + std::to_string(c.node_budget),
            "seed = " + std::to_string(c.seed),
        };
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (is.fail() || !is.eof())
        throw std::invalid_argument("config: bad value '" + v + "' for key '" + key + "'");
    return out;
}

}  // namespace detail

inline std::vector<std::size_t> parse_grid(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        if (item.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument("config: bad grid entry '" + item + "'");
        out.push_back(std::stoull(item));
    }
    return out;
}

/// Applies one `key = value` setting.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_number;
    if (key == "method") {
        if (value == "tree") c.method = Method::Tree;
        else if (value == "particle") c.method = Method::Particle;
        else throw std::invalid_argument("config: method must be tree or particle");
    } else if (key == "horizon") {
        c.bench.horizon = parse_number<int>(key, value);
    } else if (key == "epsilon") {
        c.bench.epsilon = parse_number<double>(key, value);
    } else if (key == "dim") {
        c.bench.dim = parse_number<int>(key, value);
    } else if (key == "grid") {
        c.grid = parse_grid(value);
    } else if (key == "replications") {
        c.replications = parse_number<std::size_t>(key, value);
    } else if (key == "points") {
        c.points = parse_number<std::size_t>(key, value);
    } else if (key == "point_mode") {
        if (value == "qmc") c.point_mode = PointMode::Qmc;
        else if (value == "pseudo") c.point_mode = PointMode::PseudoRandom;
        else throw std::invalid_argument("config: point_mode must be qmc or pseudo");
    } else if (key == "solver") {
        if (value == "analytic") c.solver = TreeSolver::Analytic;
        else if (value == "gradient") c.solver = TreeSolver::Gradient;
        else throw std::invalid_argument("config: solver must be analytic or gradient");
    } else if (key == "step") {
        c.step = parse_number<double>(key, value);
    } else if (key == "tol") {
        c.tol = parse_number<double>(key, value);
    } else if (key == "max_iter") {
        c.max_iter = parse_number<int>(key, value);
    } else if (key == "stall_window") {
        c.stall_window = parse_number<int>(key, value);
    } else if (key == "node_budget") {
        c.node_budget = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "out") {
        c.out = value;
    } else {
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }
}

/// Flat text config: one `key = value` per line, `#` starts a comment.
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        try {
            apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    return parse_config(in, std::move(base));
}

// ---------------------------------------------------------------------------
// Replications
// ---------------------------------------------------------------------------

inline std::string stream_tag(Method m, std::size_t size) {
    return std::string(to_string(m)) + "/" + std::to_string(size);
}

struct TreeReplica {
    ScenarioTree tree;
    TreeSolution solution;
    FeedbackPolicy policy;
};

/// Replication r of the tree method at branching factor nb. Depends only on
/// (config, nb, r).
inline TreeReplica tree_replica(const ExperimentConfig& config, std::size_t nb, std::size_t r) {
    const ExperimentConfig c = config.resolved();
    const LqProblem problem(c.bench);
    RngStream rng = SeedPlan(c.seed).stream(r, stream_tag(Method::Tree, nb));
    TreeReplica rep;
    rep.tree = build_tree(problem, nb, rng, c.node_budget);
    if (c.solver == TreeSolver::Analytic) {
        rep.solution = solve_tree_lq_analytic(rep.tree, c.bench.epsilon);
    } else {
        TreeGradientOptions opt;
        opt.step = c.step;
        opt.tol = c.tol;
        opt.max_iter = c.max_iter;
        rep.solution = solve_tree_gradient(problem, rep.tree, opt);
    }
    rep.policy = tree_to_policy(rep.tree, rep.solution);
    return rep;
}

/// Replication r of the particle method with N scenarios.
inline ParticleResult particle_replica(const ExperimentConfig& config, std::size_t n, std::size_t r) {
    const ExperimentConfig c = config.resolved();
    const LqProblem problem(c.bench);
    RngStream rng = SeedPlan(c.seed).stream(r, stream_tag(Method::Particle, n));
    const ScenarioBatch scenarios = sample_scenarios(problem, n, rng);
    ParticleSolveConfig pc;
    pc.step = c.step;
    pc.tol = c.tol;
    pc.max_iter = c.max_iter;
    pc.stall_window = c.stall_window;
    return particle_solve(problem, scenarios, pc);
}

/// The evaluation points shared by every grid value of an experiment.
inline EvalPointSet experiment_points(const ExperimentConfig& config) {
    const ExperimentConfig c = config.resolved();
    const LqProblem problem(c.bench);
    RngStream rng = SeedPlan(c.seed).stream(0, "eval-points");
    return gen_eval_points(problem, lq_optimal_policy(c.bench), c.points, c.point_mode, rng);
}

struct ExperimentResult {
    ExperimentConfig config;  // resolved
    std::vector<MseReport> reports;
    std::vector<std::string> skipped;
    /// Per-stage least-squares rate of variance against the grid parameter
    /// (n_b or N); empty with fewer than three reports.
    std::vector<RateFit> variance_rates;
    /// Tree runs only: the same rates against the scenario count nb^{T+1}.
    std::vector<RateFit> variance_rates_by_scenarios;
    /// Particle runs only: how replications terminated.
    std::map<std::string, std::size_t> solve_status_counts;
};

namespace detail {

inline std::vector<RateFit> stage_rates(const std::vector<MseReport>& reports, int horizon, bool by_scenarios) {
    std::vector<RateFit> fits;
    if (reports.size() < 3) return fits;
    for (int t = 0; t < horizon; ++t) {
        std::vector<double> sizes, errors;
        for (const auto& r : reports) {
            sizes.push_back(by_scenarios ? std::pow(r.param_value, horizon + 1) : r.param_value);
            errors.push_back(r.variance[t]);
        }
        fits.push_back(fit_rate(sizes, errors));
    }
    return fits;
}

}  // namespace detail

inline ExperimentResult run_tree_experiment(const ExperimentConfig& config, std::ostream* log = nullptr) {
    ExperimentConfig c = config.resolved();
    c.method = Method::Tree;
    c.validate();
    ExperimentResult res;
    res.config = c;
    const EvalPointSet points = experiment_points(c);
    const FeedbackPolicy optimal = lq_optimal_policy(c.bench);
    for (std::size_t nb : c.grid) {
        const auto nodes = tree_node_count(nb, c.bench.horizon, c.node_budget);
        if (!nodes || *nodes > c.node_budget) {
            res.skipped.push_back("n_b=" + std::to_string(nb) + ": tree exceeds the node budget of " +
                                  std::to_string(c.node_budget));
            if (log) *log << "skipping " << res.skipped.back() << '\n';
            continue;
        }
        MseReport rep = mse_evaluate(
            [&](std::size_t r) {
                TreeReplica tr = tree_replica(c, nb, r);
                return Replica{std::move(tr.policy), tr.solution.converged};
            },
            optimal, points, c.replications);
        rep.method = "tree";
        rep.param_name = "n_b";
        rep.param_value = static_cast<double>(nb);
        rep.seed = c.seed;
        if (log) *log << "tree n_b=" << nb << " done, total mse " << rep.total_mse() << '\n';
        res.reports.push_back(std::move(rep));
    }
    res.variance_rates = detail::stage_rates(res.reports, c.bench.horizon, false);
    res.variance_rates_by_scenarios = detail::stage_rates(res.reports, c.bench.horizon, true);
    return res;
}

inline ExperimentResult run_particle_experiment(const ExperimentConfig& config, std::ostream* log = nullptr) {
    ExperimentConfig c = config.resolved();
    c.method = Method::Particle;
    c.validate();
    ExperimentResult res;
    res.config = c;
    const EvalPointSet points = experiment_points(c);
    const FeedbackPolicy optimal = lq_optimal_policy(c.bench);
    for (std::size_t n : c.grid) {
        MseReport rep = mse_evaluate(
            [&](std::size_t r) {
                ParticleResult pr = particle_replica(c, n, r);
                ++res.solve_status_counts[to_string(pr.status)];
                return Replica{std::move(pr.policy), usable(pr.status)};
            },
            optimal, points, c.replications);
        rep.method = "particle";
        rep.param_name = "N";
        rep.param_value = static_cast<double>(n);
        rep.seed = c.seed;
        if (log) *log << "particle N=" << n << " done, total mse " << rep.total_mse() << '\n';
        res.reports.push_back(std::move(rep));
    }
    res.variance_rates = detail::stage_rates(res.reports, c.bench.horizon, false);
    return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr) {
    return config.method == Method::Tree ? run_tree_experiment(config, log) : run_particle_experiment(config, log);
}

inline void write_config_echo(std::ostream& os, const ExperimentConfig& c) {
    for (const auto& line : c.echo()) os << "# " << line << '\n';
}

inline void write_rate_comments(std::ostream& os, const char* label, const std::vector<RateFit>& fits) {
    for (std::size_t t = 0; t < fits.size(); ++t)
        os << "# " << label << " t=" << t << " slope=" << csv_number(fits[t].slope)
           << " intercept=" << csv_number(fits[t].intercept) << " residual=" << csv_number(fits[t].residual)
           << '\n';
}

/// Config echo, then the report table, then skipped grid points and rate
/// fits as trailing comment lines.
inline void write_experiment_csv(std::ostream& os, const ExperimentResult& res) {
    write_config_echo(os, res.config);
    os << kReportColumns << '\n';
    for (const auto& rep : res.reports) write_report_rows(os, rep);
    for (const auto& s : res.skipped) os << "# skipped " << s << '\n';
    write_rate_comments(os, "variance_rate", res.variance_rates);
    write_rate_comments(os, "variance_rate_vs_N", res.variance_rates_by_scenarios);
}

struct CompareRow {
    std::string method;
    std::string param_name;
    double param_value = 0.0;
    double scenarios = 0.0;  // N for both methods
    int t = 0;
    double bias_sq = 0.0, variance = 0.0, mse = 0.0;
    std::size_t replications = 0, points = 0, excluded = 0;
    std::uint64_t seed = 0;
};

struct CompareResult {
    ExperimentResult tree;
    ExperimentResult particle;
    std::vector<CompareRow> rows;  // sorted by (N, method, t)
};

/// Runs both methods on one benchmark and keys tree rows by nb^{T+1}.
inline CompareResult run_compare(const ExperimentConfig& tree_config, const ExperimentConfig& particle_config,
                                 std::ostream* log = nullptr) {
    if (!(tree_config.bench == particle_config.bench))
        throw std::invalid_argument("compare: tree and particle configs use different benchmarks");
    CompareResult out;
    out.tree = run_tree_experiment(tree_config, log);
    out.particle = run_particle_experiment(particle_config, log);
    const int T = tree_config.bench.horizon;
    for (const auto* res : {&out.tree, &out.particle})
        for (const auto& rep : res->reports)
            for (std::size_t t = 0; t < rep.mse.size(); ++t) {
                CompareRow row;
                row.method = rep.method;
                row.param_name = rep.param_name;
                row.param_value = rep.param_value;
                row.scenarios = rep.method == "tree" ? std::pow(rep.param_value, T + 1) : rep.param_value;
                row.t = static_cast<int>(t);
                row.bias_sq = rep.squared_bias[t];
                row.variance = rep.variance[t];
                row.mse = rep.mse[t];
                row.replications = rep.replications;
                row.points = rep.points;
                row.excluded = rep.excluded;
                row.seed = rep.seed;
                out.rows.push_back(row);
            }
    std::stable_sort(out.rows.begin(), out.rows.end(), [](const CompareRow& a, const CompareRow& b) {
        return std::tie(a.scenarios, a.method, a.t) < std::tie(b.scenarios, b.method, b.t);
    });
    return out;
}

inline void write_compare_csv(std::ostream& os, const CompareResult& res) {
    os << "# tree\n";
    write_config_echo(os, res.tree.config);
    os << "# particle\n";
    write_config_echo(os, res.particle.config);
    os << "method,param_name,param_value,N,t,bias_sq,variance,mse,R,P,excluded,seed\n";
    for (const auto& r : res.rows)
        os << r.method << ',' << r.param_name << ',' << csv_number(r.param_value) << ',' << csv_number(r.scenarios)
           << ',' << r.t << ',' << csv_number(r.bias_sq) << ',' << csv_number(r.variance) << ','
           << csv_number(r.mse) << ',' << r.replications << ',' << r.points << ',' << r.excluded << ','
           << r.seed << '\n';
    for (const auto& s : res.tree.skipped) os << "# skipped " << s << '\n';
}

}  // namespace soc
