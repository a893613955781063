// Acceptance run: one PASS/FAIL line per criterion 1-9.
// Usage: acceptance [csv_dir]   (writes the experiment CSVs there when given)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "soc/soc.hpp"

using namespace soc;

namespace {

// Tolerances and run sizes.
constexpr double kTreeSlopeLo = -1.3, kTreeSlopeHi = -0.7;
constexpr double kTreeSlopeVsNLo = -0.30, kTreeSlopeVsNHi = -0.12;
constexpr double kParticle1dSlopeLo = -1.2, kParticle1dSlopeHi = -0.6;
constexpr double kParticle2dSlopeLo = -0.75, kParticle2dSlopeHi = -0.30;
constexpr double kStageRatioMax = 3.0;
constexpr std::size_t kTreeReplications = 1000, kParticleReplications = 100, kPoints = 1000;
// Particle solver settings for the study (see README): step 0.15 is below
// the 2/L stability bound of the LQ benchmark, and the stall window ends a
// replica once the regression floor is reached.
constexpr double kParticleStep = 0.15;
constexpr int kParticleStallWindow = 10;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string slopes_text(const std::vector<RateFit>& fits) {
    std::ostringstream os;
    os << "slopes [";
    for (std::size_t t = 0; t < fits.size(); ++t) os << (t ? ", " : "") << fits[t].slope;
    os << "]";
    return os.str();
}

bool slopes_within(const std::vector<RateFit>& fits, double lo, double hi, int horizon) {
    if (static_cast<int>(fits.size()) != horizon) return false;
    return std::ranges::all_of(fits, [&](const RateFit& f) { return f.slope >= lo && f.slope <= hi; });
}

const MseReport* find_report(const ExperimentResult& res, double param) {
    for (const auto& r : res.reports)
        if (r.param_value == param) return &r;
    return nullptr;
}

void save(const std::string& dir, const std::string& name, const ExperimentResult& res) {
    if (dir.empty()) return;
    std::ofstream out(dir + "/" + name);
    write_experiment_csv(out, res);
}

ExperimentConfig particle_config(int dim) {
    ExperimentConfig c;
    c.method = Method::Particle;
    c.bench.dim = dim;
    c.grid = {27, 81, 243, 729};
    c.replications = kParticleReplications;
    c.points = kPoints;
    c.step = kParticleStep;
    c.stall_window = kParticleStallWindow;
    return c;
}

std::string status_text(const ExperimentResult& res) {
    std::string s;
    for (const auto& [k, n] : res.solve_status_counts) s += " " + k + "=" + std::to_string(n);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string dir = argc > 1 ? argv[1] : "";
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    {
        const CheckResult c = check_closed_form_vs_dp();
        report(1, c.pass, c.detail);
    }
    {
        const CheckResult c = check_tree_solvers();
        report(2, c.pass, c.detail);
    }

    // 3, 4: tree convergence
    ExperimentConfig tc;
    tc.grid = {2, 3, 4, 5, 6, 8};
    tc.replications = kTreeReplications;
    tc.points = kPoints;
    const ExperimentResult tree = run_tree_experiment(tc, &std::cerr);
    save(dir, "tree.csv", tree);
    {
        bool dominance = true;
        for (const auto& r : tree.reports)
            for (std::size_t t = 0; t < r.mse.size(); ++t) dominance = dominance && r.variance[t] > r.squared_bias[t];
        const bool slopes = slopes_within(tree.variance_rates, kTreeSlopeLo, kTreeSlopeHi, tc.bench.horizon);
        report(3, slopes && dominance && tree.reports.size() == tc.grid.size(),
               "variance vs n_b " + slopes_text(tree.variance_rates) + " in [-1.3, -0.7]" +
                   (slopes ? "" : " (violated)") + "; variance > bias^2 everywhere: " + (dominance ? "yes" : "no"));
        const bool vs_n =
            slopes_within(tree.variance_rates_by_scenarios, kTreeSlopeVsNLo, kTreeSlopeVsNHi, tc.bench.horizon);
        report(4, vs_n, "variance vs N = n_b^5 " + slopes_text(tree.variance_rates_by_scenarios) +
                            " in [-0.30, -0.12]");
    }
    std::cerr << "tree study done at " << elapsed() << " s\n";

    // 5, 6: particles, d = 1
    const ExperimentResult p1 = run_particle_experiment(particle_config(1), &std::cerr);
    save(dir, "particle_d1.csv", p1);
    {
        bool dominance = true;
        for (const auto& r : p1.reports)
            for (std::size_t t = 0; t < r.mse.size(); ++t) dominance = dominance && r.variance[t] > r.squared_bias[t];
        const bool slopes = slopes_within(p1.variance_rates, kParticle1dSlopeLo, kParticle1dSlopeHi, 4);
        report(5, slopes && dominance,
               "variance vs N " + slopes_text(p1.variance_rates) + " in [-1.2, -0.6]; variance > bias^2 everywhere: " +
                   (dominance ? "yes" : "no") + ";" + status_text(p1));
        const MseReport* r = find_report(p1, 243);
        double ratio = 0.0;
        if (r) ratio = *std::ranges::max_element(r->mse) / *std::ranges::min_element(r->mse);
        std::ostringstream os;
        os << "N=243 max_t MSE / min_t MSE = " << ratio << " (<= " << kStageRatioMax << ")";
        report(6, r && ratio <= kStageRatioMax, os.str());
    }
    std::cerr << "particle d=1 done at " << elapsed() << " s\n";

    // 7: particles, d = 2
    const ExperimentResult p2 = run_particle_experiment(particle_config(2), &std::cerr);
    save(dir, "particle_d2.csv", p2);
    {
        const bool slopes = slopes_within(p2.variance_rates, kParticle2dSlopeLo, kParticle2dSlopeHi, 4);
        const MseReport& last = p2.reports.back();
        bool bias_wins = true;
        std::ostringstream os;
        os << "variance vs N " << slopes_text(p2.variance_rates) << " in [-0.75, -0.30]; at N=729 bias^2/variance = [";
        for (std::size_t t = 0; t < last.mse.size(); ++t) {
            bias_wins = bias_wins && last.squared_bias[t] >= last.variance[t];
            os << (t ? ", " : "") << last.squared_bias[t] / last.variance[t];
        }
        os << "] (>= 1);" << status_text(p2);
        report(7, slopes && bias_wins, os.str());
    }
    std::cerr << "particle d=2 done at " << elapsed() << " s\n";

    // 8: head-to-head at N = 243 (tree n_b = 3); both runs share the evaluation points
    {
        const MseReport* t = find_report(tree, 3);
        const MseReport* p = find_report(p1, 243);
        bool pass = t && p;
        std::ostringstream os;
        os << "N=243 MSE particle/tree per stage = [";
        for (std::size_t s = 0; pass && s < t->mse.size(); ++s) {
            pass = pass && p->mse[s] < t->mse[s];
            os << (s ? ", " : "") << p->mse[s] / t->mse[s];
        }
        os << "] (< 1)";
        report(8, pass, os.str());
    }

    // 9: property suite
    {
        bool pass = true;
        std::string failed;
        for (const auto& c : property_suite()) {
            std::cerr << (c.pass ? "  ok   " : "  FAIL ") << c.name << ": " << c.detail << '\n';
            if (!c.pass) failed += " " + c.name;
            pass = pass && c.pass;
        }
        report(9, pass, pass ? "all six properties hold" : "failed:" + failed);
    }

    std::printf("acceptance: %d of 9 criteria failed (%.0f s)\n", failures, elapsed());
    return failures == 0 ? 0 : 1;
}
