// Command-line front end: validate scenario files, run single solves,
// parameter sweeps, and print the closed-form quadratic-cost oracle.
// Exit codes: 0 success, 2 configuration error, 3 solver failure.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "brsmfg/analytic.hpp"
#include "brsmfg/scenario.hpp"

namespace {

using namespace brsmfg;

int cmd_validate(const std::string& path) {
    const ScenarioConfig cfg = load_config(path);
    const Grid g = build_grid(cfg.x_lo, cfg.x_hi, cfg.n);
    const CostModel cost = make_cost(cfg.cost, g.measure);
    std::printf("config ok: %s\n", path.c_str());
    std::printf("  domain [%g, %g], n = %zu, sigma2 = %g, cost = %s\n", cfg.x_lo, cfg.x_hi,
                cfg.n, cfg.sigma2, cost.description.c_str());

    const double m_ref = 1.0 / g.measure;
    const double m_lo = 1e-4 * m_ref;
    const double m_hi = std::isfinite(cost.m_sup)
                            ? m_ref + 0.999 * (cost.m_sup - m_ref)
                            : 1e4 * m_ref;
    const AssumptionReport rep = validate_assumptions(cost, g, m_lo, m_hi, 33);
    std::printf("  assumption window m in [%g, %g]:\n", m_lo, m_hi);
    std::printf("    monotone in m:        %s\n", rep.monotone_ok ? "yes" : "NO");
    std::printf("    lower window (MFG):   %s\n", rep.mfg_lower_ok ? "yes" : "NO");
    std::printf("    upper window (MFG):   %s\n", rep.mfg_upper_ok ? "yes" : "NO");
    if (rep.worst_violation > 0.0) {
        std::printf("    worst violation:      %g\n", rep.worst_violation);
        std::printf("  note: window checks are sufficient conditions; the solvers may\n"
                    "  still converge (they report their own failures).\n");
    }
    return 0;
}

void print_mfg_line(const char* tag, const mfg::Solution& s, const Grid& g) {
    std::printf("  %s: lambda = %.12g, Z = %.12g, variance = %.12g, iterations = %d\n", tag,
                s.lambda, s.Z, density_moments(s.m, g).variance, s.iterations);
    std::printf("    residuals: hjb %.3e, fpe %.3e, mass %.3e, u-mean %.3e\n",
                s.hjb_residual, s.fpe_residual, s.mass_residual, s.u_mean_residual);
}

int cmd_solve(const std::string& path) {
    const ScenarioConfig cfg = load_config(path);
    const ScenarioResult res = run_scenario(cfg);
    const Grid g = build_grid(cfg.x_lo, cfg.x_hi, cfg.n);
    if (res.status != 0) {
        std::fprintf(stderr, "solver failure: %s\n", res.error.c_str());
        std::fprintf(stderr, "metadata written to %s_meta.json\n", cfg.output_prefix.c_str());
        return 3;
    }
    if (res.brs_solution) {
        const brs::Solution& s = *res.brs_solution;
        std::printf("  brs: Z = %.12g, variance = %.12g, outer iterations = %d\n", s.Z,
                    density_moments(s.m, g).variance, s.outer_iterations);
        std::printf("    residuals: mass %.3e, pointwise %.3e, pde %.3e\n", s.mass_residual,
                    s.pointwise_residual, s.pde_residual);
    }
    if (res.mfg_solution) {
        print_mfg_line(res.mfg_reference_solution ? "mfg (picard)" : "mfg",
                       *res.mfg_solution, g);
    }
    if (res.mfg_reference_solution) {
        print_mfg_line("mfg (nested reference)", *res.mfg_reference_solution, g);
        std::printf("    cross-solver max |dm| = %.3e\n",
                    max_abs_diff(res.mfg_solution->m, res.mfg_reference_solution->m));
    }
    if (res.metrics) {
        const ComparisonMetrics& m = *res.metrics;
        std::printf("  comparison: L1 = %.6g, Linf = %.6g, variance ratio = %.6g\n",
                    m.l1_distance, m.linf_distance, m.variance_ratio);
        std::printf("    mass halves at x = %g: brs %.6g/%.6g, mfg %.6g/%.6g\n", m.split_x,
                    m.mass_left_brs, m.mass_right_brs, m.mass_left_mfg, m.mass_right_mfg);
    }
    std::printf("outputs: %s_density.csv, %s_meta.json%s\n", cfg.output_prefix.c_str(),
                cfg.output_prefix.c_str(), res.metrics ? ", *_metrics.json" : "");
    return 0;
}

int cmd_sweep(const std::string& path, const std::string& parameter,
              const std::vector<double>& values) {
    const ScenarioConfig cfg = load_config(path);
    const std::vector<SweepRow> rows = sweep(cfg, parameter, values);
    std::printf("%10s %14s %14s %10s %14s %6s\n", parameter.c_str(), "variance_brs",
                "variance_mfg", "ratio", "analytic", "status");
    bool any_failed = false;
    for (const SweepRow& r : rows) {
        std::printf("%10g %14.6g %14.6g %10.5g ", r.value, r.variance_brs, r.variance_mfg,
                    r.ratio);
        if (std::isfinite(r.analytic_ratio)) std::printf("%14.5g ", r.analytic_ratio);
        else std::printf("%14s ", "-");
        std::printf("%6d\n", r.status);
        if (r.status != 0) any_failed = true;
    }
    std::printf("sweep table: %s_sweep.csv\n", cfg.output_prefix.c_str());
    return any_failed ? 3 : 0;
}

int cmd_oracle(double beta, double sigma2) {
    const double sigma = std::sqrt(sigma2);
    const analytic::QuadraticMfgSolution s = analytic::mfg_quadratic(beta, sigma);
    std::printf("quadratic potential, logarithmic congestion: beta = %g, sigma2 = %g\n", beta,
                sigma2);
    std::printf("  mfg Gaussian: rate a = %.12g, value coefficient b = %.12g\n", s.a, s.b);
    std::printf("  mfg variance a1 = %.12g\n", s.variance);
    if (beta > 0.0 && sigma2 > 0.0) {
        const analytic::ComparisonRecord r = analytic::variance_ratio(beta, sigma2);
        std::printf("  brs variance a2 = %.12g\n", r.a2);
        std::printf("  ratio a2/a1 = %.12g\n", r.ratio);
        const analytic::RatioLimits l = analytic::ratio_limits(beta, sigma2);
        std::printf("  limits: sigma2->0: %g, sigma2->inf: %.12g, beta->0: %.12g, "
                    "beta->inf (scaled by sqrt(2 beta)): %.12g\n",
                    l.sigma2_to_zero, l.sigma2_to_inf, l.beta_to_zero, l.beta_to_inf_scaled);
        const analytic::BarrierAsymptotics b = analytic::barrier_asymptotics(beta, sigma2);
        std::printf("  barrier large-m_max forms: brs %.12g, mfg %.12g, relative difference %g\n",
                    b.brs_variance, b.mfg_variance, b.ratio);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stationary best-reply and mean-field-game equilibria on an interval"};
    app.require_subcommand(1);

    std::string config_path;
    auto* validate = app.add_subcommand("validate", "check a scenario file and its cost");
    validate->add_option("config", config_path, "scenario JSON file")->required();

    std::string solve_path;
    auto* solve = app.add_subcommand("solve", "run a scenario and write outputs");
    solve->add_option("config", solve_path, "scenario JSON file")->required();

    std::string sweep_path, sweep_param;
    std::vector<double> sweep_values;
    auto* sw = app.add_subcommand("sweep", "run a scenario once per parameter value");
    sw->add_option("config", sweep_path, "scenario JSON file")->required();
    sw->add_option("--param", sweep_param, "beta|sigma2|m_max")->required();
    sw->add_option("--values", sweep_values, "comma-separated list")
        ->required()
        ->delimiter(',');

    double beta = 0.0, sigma2 = 0.0;
    auto* oracle = app.add_subcommand("oracle", "print closed forms for the quadratic cost");
    oracle->add_option("beta", beta, "potential strength")->required();
    oracle->add_option("sigma2", sigma2, "noise variance")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) return cmd_validate(config_path);
        if (*solve) return cmd_solve(solve_path);
        if (*sw) return cmd_sweep(sweep_path, sweep_param, sweep_values);
        if (*oracle) return cmd_oracle(beta, sigma2);
    } catch (const brsmfg::ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const brsmfg::SolverError& e) {
        std::fprintf(stderr, "solver failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
