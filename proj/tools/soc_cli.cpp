// soc_cli: tree and particle convergence studies, comparison runs and the
// validation suite. CSV goes to --out (or stdout); progress goes to stderr.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "soc/soc.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> replications, points;
    std::string grid;
    std::optional<int> dim, horizon, max_iter, stall_window;
    std::optional<double> epsilon, step, tol;
    std::string solver, point_mode;
};

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", o.seed, "master seed");
    app->add_option("--out", o.out, "output CSV (default stdout)");
    app->add_option("--replications", o.replications, "replications R");
    app->add_option("--points", o.points, "evaluation points P");
    app->add_option("--grid", o.grid, "comma-separated n_b or N values");
    app->add_option("--dim", o.dim, "state dimension")->check(CLI::Range(1, 2));
    app->add_option("--epsilon", o.epsilon, "final cost weight");
    app->add_option("--horizon", o.horizon, "horizon T");
    app->add_option("--solver", o.solver, "tree solver")->check(CLI::IsMember({"analytic", "gradient"}));
    app->add_option("--step", o.step, "gradient step (0 = method default)");
    app->add_option("--tol", o.tol, "stopping tolerance (0 = method default)");
    app->add_option("--max-iter", o.max_iter, "iteration cap (0 = method default)");
    app->add_option("--stall-window", o.stall_window, "particle stall window (0 disables)");
    app->add_option("--point-mode", o.point_mode, "evaluation points")->check(CLI::IsMember({"qmc", "pseudo"}));
}

/// Defaults, then the config file, then flags.
soc::ExperimentConfig build_config(const Overrides& o, soc::Method method, const std::string& default_grid) {
    soc::ExperimentConfig c;
    c.method = method;
    c.grid = soc::parse_grid(default_grid);
    if (!o.config.empty()) c = soc::load_config(o.config, c);
    c.method = method;
    if (o.seed) c.seed = *o.seed;
    if (!o.out.empty()) c.out = o.out;
    if (o.replications) c.replications = *o.replications;
    if (o.points) c.points = *o.points;
    if (!o.grid.empty()) c.grid = soc::parse_grid(o.grid);
    if (o.dim) c.bench.dim = *o.dim;
    if (o.epsilon) c.bench.epsilon = *o.epsilon;
    if (o.horizon) c.bench.horizon = *o.horizon;
    if (!o.solver.empty()) soc::apply_setting(c, "solver", o.solver);
    if (o.step) c.step = *o.step;
    if (o.tol) c.tol = *o.tol;
    if (o.max_iter) c.max_iter = *o.max_iter;
    if (o.stall_window) c.stall_window = *o.stall_window;
    if (!o.point_mode.empty()) soc::apply_setting(c, "point_mode", o.point_mode);
    c.validate();
    return c;
}

template <class Write>
void emit(const std::string& path, Write&& write) {
    if (path.empty()) {
        write(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write(out);
}

void print_status_counts(const soc::ExperimentResult& res) {
    for (const auto& [status, n] : res.solve_status_counts) std::cerr << "  " << status << ": " << n << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scenario-tree and particle solvers for stochastic optimal control"};
    app.require_subcommand(1);

    Overrides tree_o, particle_o, compare_o;
    std::string dump_tree, dump_policy, trace;
    std::string tree_grid = "2,3,4,5,6,8", particle_grid = "27,81,243,729";

    auto* tree = app.add_subcommand("tree", "scenario-tree convergence study");
    add_common(tree, tree_o);
    tree->add_option("--dump-tree", dump_tree, "write replica 0 of the first n_b as a node CSV");
    tree->add_option("--dump-policy", dump_policy, "write the policy of that replica as CSV");

    auto* particle = app.add_subcommand("particle", "particle-method convergence study");
    add_common(particle, particle_o);
    particle->add_option("--trace", trace, "write the particle system of replica 0 of the first N");
    particle->add_option("--dump-policy", dump_policy, "write the policy of that replica as CSV");

    auto* compare = app.add_subcommand("compare", "both methods keyed by scenario count");
    add_common(compare, compare_o);
    compare->add_option("--tree-grid", tree_grid, "n_b values");
    compare->add_option("--particle-grid", particle_grid, "N values");

    auto* validate = app.add_subcommand("validate", "oracle checks and the property suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (tree->parsed()) {
            const auto c = build_config(tree_o, soc::Method::Tree, tree_grid);
            if (!dump_tree.empty() || !dump_policy.empty()) {
                const soc::TreeReplica rep = soc::tree_replica(c, c.grid.front(), 0);
                if (!dump_tree.empty())
                    emit(dump_tree, [&](std::ostream& os) { soc::write_tree_csv(os, rep.tree, &rep.solution); });
                if (!dump_policy.empty())
                    emit(dump_policy, [&](std::ostream& os) { soc::write_policy_csv(os, rep.policy); });
            }
            const auto res = soc::run_tree_experiment(c, &std::cerr);
            emit(c.out, [&](std::ostream& os) { soc::write_experiment_csv(os, res); });
        } else if (particle->parsed()) {
            const auto c = build_config(particle_o, soc::Method::Particle, particle_grid);
            if (!trace.empty() || !dump_policy.empty()) {
                const soc::ParticleResult rep = soc::particle_replica(c, c.grid.front(), 0);
                std::cerr << "replica 0: " << soc::to_string(rep.status) << '\n';
                if (!trace.empty())
                    emit(trace, [&](std::ostream& os) { soc::write_trace_csv(os, rep.system); });
                if (!dump_policy.empty())
                    emit(dump_policy, [&](std::ostream& os) { soc::write_policy_csv(os, rep.policy); });
            }
            const auto res = soc::run_particle_experiment(c, &std::cerr);
            print_status_counts(res);
            emit(c.out, [&](std::ostream& os) { soc::write_experiment_csv(os, res); });
        } else if (compare->parsed()) {
            // The size grids come from --tree-grid and --particle-grid only.
            Overrides o = compare_o;
            o.grid.clear();
            auto tc = build_config(o, soc::Method::Tree, tree_grid);
            auto pc = build_config(o, soc::Method::Particle, particle_grid);
            tc.grid = soc::parse_grid(tree_grid);
            pc.grid = soc::parse_grid(particle_grid);
            const auto res = soc::run_compare(tc, pc, &std::cerr);
            print_status_counts(res.particle);
            emit(tc.out, [&](std::ostream& os) { soc::write_compare_csv(os, res); });
        } else if (validate->parsed()) {
            std::vector<soc::CheckResult> checks{soc::check_closed_form_vs_dp(), soc::check_tree_solvers()};
            for (auto& c : soc::property_suite()) checks.push_back(std::move(c));
            bool ok = true;
            for (const auto& c : checks) {
                soc::print_check(std::cout, c);
                ok = ok && c.pass;
            }
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
