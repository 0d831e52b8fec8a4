#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "brsmfg/analytic.hpp"
#include "brsmfg/brs.hpp"
#include "brsmfg/cost.hpp"
#include "brsmfg/errors.hpp"
#include "brsmfg/grid.hpp"
#include "brsmfg/mfg.hpp"

namespace brsmfg {

enum class SolverChoice { brs, mfg_picard, mfg_nested, both };

/// Tagged cost description as it appears in scenario files.
struct CostSpec {
    std::string kind;  // quad_log | power_law | barrier | double_well_log
    double beta = 0.0;
    double alpha = 0.0;
    double m_max = 0.0;
    double depth1 = 0.0, width1 = 0.0, center1 = 0.0;
    double depth2 = 0.0, width2 = 0.0, center2 = 0.0;
};

struct ScenarioConfig {
    double x_lo = 0.0;
    double x_hi = 0.0;
    std::size_t n = 0;
    double sigma2 = 0.0;
    CostSpec cost;
    SolverChoice solver = SolverChoice::both;
    std::string output_prefix;

    // Solver tolerances; defaults match the solver configs.
    double inner_tol = 1e-12;
    double outer_tol = 1e-10;
    double picard_tol = 1e-8;
    double newton_tol = 1e-10;
    double bisect_tol = 1e-10;
    double damping = 0.5;
    double epsilon = 0.0;
    int max_inner = 100;
    int max_outer = 200;
    int max_picard = 500;
    int max_newton = 50;

    double sigma() const { return std::sqrt(sigma2); }
    brs::Config brs_config() const {
        brs::Config c;
        c.sigma = sigma();
        c.inner_tol = inner_tol;
        c.outer_tol = outer_tol;
        c.max_inner = max_inner;
        c.max_outer = max_outer;
        return c;
    }
    mfg::Config mfg_config() const {
        mfg::Config c;
        c.sigma = sigma();
        c.damping = damping;
        c.picard_tol = picard_tol;
        c.newton_tol = newton_tol;
        c.bisect_tol = bisect_tol;
        c.max_picard = max_picard;
        c.max_newton = max_newton;
        c.epsilon = epsilon;
        return c;
    }
};

struct ComparisonMetrics {
    double l1_distance = 0.0;
    double linf_distance = 0.0;
    double variance_brs = 0.0;
    double variance_mfg = 0.0;
    double variance_ratio = 0.0;
    double mass_left_brs = 0.0, mass_right_brs = 0.0;
    double mass_left_mfg = 0.0, mass_right_mfg = 0.0;
    double split_x = 0.0;
};

struct ScenarioResult {
    int status = 0;  // 0 ok, 3 solver failure
    std::string error;
    std::optional<brs::Solution> brs_solution;
    std::optional<mfg::Solution> mfg_solution;            // primary (Picard when both)
    std::optional<mfg::Solution> mfg_reference_solution;  // nested cross-check
    std::optional<ComparisonMetrics> metrics;
};

inline CostModel make_cost(const CostSpec& spec, double grid_measure) {
    if (spec.kind == "quad_log") return quad_log(spec.beta);
    if (spec.kind == "power_law") return power_law(spec.alpha, spec.beta);
    if (spec.kind == "barrier") return barrier(spec.m_max, spec.beta, grid_measure);
    if (spec.kind == "double_well_log") {
        return potential_plus_log(double_well(spec.depth1, spec.width1, spec.center1,
                                              spec.depth2, spec.width2, spec.center2),
                                  "double_well_log");
    }
    throw ConfigError("cost.kind: unknown cost kind '" + spec.kind + "'");
}

namespace detail_io {

inline double require_number(const nlohmann::json& j, const std::string& path) {
    const nlohmann::json* cur = &j;
    std::string walked;
    std::size_t pos = 0;
    while (pos != std::string::npos) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        walked += (walked.empty() ? "" : ".") + key;
        if (!cur->contains(key)) throw ConfigError("config: missing field '" + walked + "'");
        cur = &(*cur)[key];
        pos = (dot == std::string::npos) ? dot : dot + 1;
    }
    if (!cur->is_number()) throw ConfigError("config: field '" + path + "' must be a number");
    return cur->get<double>();
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::filesystem::path target(path);
    if (target.has_parent_path()) {
        std::filesystem::create_directories(target.parent_path());
    }
    const std::filesystem::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write output file " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, target);
}

inline void remove_if_exists(const std::string& path) {
    std::error_code ec;
    std::filesystem::remove(std::filesystem::path(path), ec);
}

}  // namespace detail_io

/// Parse and validate a scenario file (JSON). Unknown cost kinds, missing
/// fields and out-of-range values are reported with their field path.
inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }

    ScenarioConfig cfg;
    cfg.x_lo = detail_io::require_number(j, "domain.x_lo");
    cfg.x_hi = detail_io::require_number(j, "domain.x_hi");
    const double n_raw = detail_io::require_number(j, "domain.n");
    if (n_raw < 3 || n_raw != std::floor(n_raw)) {
        throw ConfigError("config: domain.n must be an integer >= 3");
    }
    cfg.n = static_cast<std::size_t>(n_raw);
    if (!(cfg.x_hi > cfg.x_lo)) throw ConfigError("config: domain requires x_hi > x_lo");

    cfg.sigma2 = detail_io::require_number(j, "sigma2");
    if (!(cfg.sigma2 > 0.0)) throw ConfigError("config: sigma2 must be > 0");

    if (!j.contains("cost") || !j["cost"].is_object()) {
        throw ConfigError("config: missing object field 'cost'");
    }
    const auto& jc = j["cost"];
    if (!jc.contains("kind") || !jc["kind"].is_string()) {
        throw ConfigError("config: missing string field 'cost.kind'");
    }
    cfg.cost.kind = jc["kind"].get<std::string>();
    const double measure = cfg.x_hi - cfg.x_lo;
    if (cfg.cost.kind == "quad_log") {
        cfg.cost.beta = detail_io::require_number(j, "cost.beta");
    } else if (cfg.cost.kind == "power_law") {
        cfg.cost.alpha = detail_io::require_number(j, "cost.alpha");
        cfg.cost.beta = detail_io::require_number(j, "cost.beta");
    } else if (cfg.cost.kind == "barrier") {
        cfg.cost.m_max = detail_io::require_number(j, "cost.m_max");
        cfg.cost.beta = detail_io::require_number(j, "cost.beta");
        if (!(cfg.cost.m_max > 1.0 / measure)) {
            throw ConfigError("config: cost.m_max must exceed 1/|Omega| = " +
                              std::to_string(1.0 / measure) +
                              " or the unit-mass constraint is infeasible");
        }
    } else if (cfg.cost.kind == "double_well_log") {
        cfg.cost.depth1 = detail_io::require_number(j, "cost.depth1");
        cfg.cost.width1 = detail_io::require_number(j, "cost.width1");
        cfg.cost.center1 = detail_io::require_number(j, "cost.center1");
        cfg.cost.depth2 = detail_io::require_number(j, "cost.depth2");
        cfg.cost.width2 = detail_io::require_number(j, "cost.width2");
        cfg.cost.center2 = detail_io::require_number(j, "cost.center2");
    } else {
        throw ConfigError("config: unknown cost.kind '" + cfg.cost.kind + "'");
    }
    make_cost(cfg.cost, measure);  // surfaces remaining parameter errors now

    if (j.contains("solver")) {
        const std::string s = j["solver"].get<std::string>();
        if (s == "brs") cfg.solver = SolverChoice::brs;
        else if (s == "mfg_picard") cfg.solver = SolverChoice::mfg_picard;
        else if (s == "mfg_nested") cfg.solver = SolverChoice::mfg_nested;
        else if (s == "both") cfg.solver = SolverChoice::both;
        else throw ConfigError("config: solver must be brs|mfg_picard|mfg_nested|both");
    }
    if (!j.contains("output_prefix") || !j["output_prefix"].is_string()) {
        throw ConfigError("config: missing string field 'output_prefix'");
    }
    cfg.output_prefix = j["output_prefix"].get<std::string>();

    if (j.contains("tolerances")) {
        const auto& jt = j["tolerances"];
        auto opt = [&](const char* key, double& slot) {
            if (jt.contains(key)) {
                slot = jt[key].get<double>();
                if (!(slot > 0.0) && std::string(key) != "damping" &&
                    std::string(key) != "epsilon") {
                    throw ConfigError(std::string("config: tolerances.") + key +
                                      " must be > 0");
                }
            }
        };
        opt("inner_tol", cfg.inner_tol);
        opt("outer_tol", cfg.outer_tol);
        opt("picard_tol", cfg.picard_tol);
        opt("newton_tol", cfg.newton_tol);
        opt("bisect_tol", cfg.bisect_tol);
        if (jt.contains("damping")) {
            cfg.damping = jt["damping"].get<double>();
            if (!(cfg.damping >= 0.0 && cfg.damping < 1.0)) {
                throw ConfigError("config: tolerances.damping must lie in [0, 1)");
            }
        }
        if (jt.contains("epsilon")) {
            cfg.epsilon = jt["epsilon"].get<double>();
            if (cfg.epsilon < 0.0) throw ConfigError("config: tolerances.epsilon must be >= 0");
        }
    }
    return cfg;
}

/// Node index at which well-occupancy mass is split: the interior local
/// maximum of the double-well potential between the two centers, or the
/// domain midpoint for single-well costs.
inline std::size_t split_index(const ScenarioConfig& cfg, const Grid& g) {
    if (cfg.cost.kind != "double_well_log") return g.n / 2;
    const Potential p = double_well(cfg.cost.depth1, cfg.cost.width1, cfg.cost.center1,
                                    cfg.cost.depth2, cfg.cost.width2, cfg.cost.center2);
    const double lo = std::min(cfg.cost.center1, cfg.cost.center2);
    const double hi = std::max(cfg.cost.center1, cfg.cost.center2);
    std::size_t k = g.n / 2;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.n; ++i) {
        const double x = g.nodes[i];
        if (x <= lo || x >= hi) continue;
        const double v = p.value(x);
        if (v > best) {
            best = v;
            k = i;
        }
    }
    return k;
}

/// Trapezoid mass on each side of the split node (the node is shared, so the
/// halves sum to the total mass exactly).
inline std::pair<double, double> mass_split(const ScalarField& m, const Grid& g,
                                            std::size_t k) {
    require_aligned(m, g, "mass_split");
    double left = 0.0, right = 0.0;
    for (std::size_t i = 0; i + 1 < g.n; ++i) {
        const double cell = 0.5 * (m[i] + m[i + 1]) * g.dx;
        if (i + 1 <= k) left += cell;
        else right += cell;
    }
    return {left, right};
}

inline ComparisonMetrics compare(const brs::Solution& b, const mfg::Solution& m,
                                 const Grid& g, std::size_t split_at) {
    require_aligned(b.m, g, "compare(brs)");
    require_aligned(m.m, g, "compare(mfg)");
    ComparisonMetrics out;
    ScalarField diff(g.n);
    for (std::size_t i = 0; i < g.n; ++i) diff[i] = std::abs(b.m[i] - m.m[i]);
    out.l1_distance = integrate(diff, g);
    out.linf_distance = max_abs_diff(b.m, m.m);
    out.variance_brs = density_moments(b.m, g).variance;
    out.variance_mfg = density_moments(m.m, g).variance;
    out.variance_ratio = out.variance_brs / out.variance_mfg;
    const auto [bl, br] = mass_split(b.m, g, split_at);
    const auto [ml, mr] = mass_split(m.m, g, split_at);
    out.mass_left_brs = bl;
    out.mass_right_brs = br;
    out.mass_left_mfg = ml;
    out.mass_right_mfg = mr;
    out.split_x = g.nodes[split_at];
    return out;
}

inline ComparisonMetrics compare(const brs::Solution& b, const mfg::Solution& m,
                                 const Grid& g) {
    return compare(b, m, g, g.n / 2);
}

namespace detail_io {

inline nlohmann::json brs_block(const brs::Solution& s, const Grid& g) {
    nlohmann::json j;
    j["Z"] = s.Z;
    j["mass_residual"] = s.mass_residual;
    j["pointwise_residual"] = s.pointwise_residual;
    j["pde_residual"] = s.pde_residual;
    j["outer_iterations"] = s.outer_iterations;
    j["variance"] = density_moments(s.m, g).variance;
    return j;
}

inline nlohmann::json mfg_block(const mfg::Solution& s, const Grid& g) {
    nlohmann::json j;
    j["lambda"] = s.lambda;
    j["Z"] = s.Z;
    j["hjb_residual"] = s.hjb_residual;
    j["fpe_residual"] = s.fpe_residual;
    j["mass_residual"] = s.mass_residual;
    j["u_mean_residual"] = s.u_mean_residual;
    j["iterations"] = s.iterations;
    j["variance"] = density_moments(s.m, g).variance;
    return j;
}

inline nlohmann::json config_block(const ScenarioConfig& cfg) {
    nlohmann::json j;
    j["domain"] = {{"x_lo", cfg.x_lo}, {"x_hi", cfg.x_hi}, {"n", cfg.n}};
    j["sigma2"] = cfg.sigma2;
    nlohmann::json jc;
    jc["kind"] = cfg.cost.kind;
    if (cfg.cost.kind == "quad_log") jc["beta"] = cfg.cost.beta;
    if (cfg.cost.kind == "power_law") {
        jc["alpha"] = cfg.cost.alpha;
        jc["beta"] = cfg.cost.beta;
    }
    if (cfg.cost.kind == "barrier") {
        jc["m_max"] = cfg.cost.m_max;
        jc["beta"] = cfg.cost.beta;
    }
    if (cfg.cost.kind == "double_well_log") {
        jc["depth1"] = cfg.cost.depth1;
        jc["width1"] = cfg.cost.width1;
        jc["center1"] = cfg.cost.center1;
        jc["depth2"] = cfg.cost.depth2;
        jc["width2"] = cfg.cost.width2;
        jc["center2"] = cfg.cost.center2;
    }
    j["cost"] = jc;
    j["tolerances"] = {{"inner_tol", cfg.inner_tol},   {"outer_tol", cfg.outer_tol},
                       {"picard_tol", cfg.picard_tol}, {"newton_tol", cfg.newton_tol},
                       {"bisect_tol", cfg.bisect_tol}, {"damping", cfg.damping},
                       {"epsilon", cfg.epsilon}};
    return j;
}

}  // namespace detail_io

/// Run one scenario: solve the selected models, write the density CSV and
/// metadata JSON (plus the metrics JSON when both models run). Solver
/// failures are recorded in the metadata with a nonzero status; partial
/// data files are removed.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
    const Grid g = build_grid(cfg.x_lo, cfg.x_hi, cfg.n);
    const CostModel cost = make_cost(cfg.cost, g.measure);
    const std::string density_path = cfg.output_prefix + "_density.csv";
    const std::string meta_path = cfg.output_prefix + "_meta.json";
    const std::string metrics_path = cfg.output_prefix + "_metrics.json";

    ScenarioResult result;
    nlohmann::json meta = detail_io::config_block(cfg);
    const bool want_brs = cfg.solver == SolverChoice::brs || cfg.solver == SolverChoice::both;
    const bool want_picard =
        cfg.solver == SolverChoice::mfg_picard || cfg.solver == SolverChoice::both;
    const bool want_nested =
        cfg.solver == SolverChoice::mfg_nested || cfg.solver == SolverChoice::both;
    meta["solver"] = cfg.solver == SolverChoice::brs          ? "brs"
                     : cfg.solver == SolverChoice::mfg_picard ? "mfg_picard"
                     : cfg.solver == SolverChoice::mfg_nested ? "mfg_nested"
                                                              : "both";

    try {
        if (want_brs) {
            result.brs_solution = brs::solve(cost, g, cfg.brs_config());
            meta["brs"] = detail_io::brs_block(*result.brs_solution, g);
        }
        if (want_picard) {
            result.mfg_solution = mfg::solve_picard(cost, g, cfg.mfg_config());
            meta["mfg_picard"] = detail_io::mfg_block(*result.mfg_solution, g);
        }
        if (want_nested) {
            mfg::Solution nested = mfg::solve_nested(cost, g, cfg.mfg_config());
            meta["mfg_nested"] = detail_io::mfg_block(nested, g);
            if (cfg.solver == SolverChoice::mfg_nested) {
                result.mfg_solution = std::move(nested);
            } else {
                // Both MFG routes ran: the nested solution is the
                // proof-backed reference, the Picard one the primary output.
                meta["cross_solver_max_diff_m"] =
                    max_abs_diff(result.mfg_solution->m, nested.m);
                result.mfg_reference_solution = std::move(nested);
            }
        }
    } catch (const SolverError& e) {
        result.status = 3;
        result.error = e.what();
        meta["status"] = 3;
        meta["error"] = result.error;
        detail_io::remove_if_exists(density_path);
        detail_io::remove_if_exists(metrics_path);
        detail_io::write_text_atomic(meta_path, meta.dump(2) + "\n");
        return result;
    }

    if (cfg.cost.kind == "quad_log" && cfg.cost.beta > 0.0) {
        const analytic::ComparisonRecord rec = analytic::variance_ratio(cfg.cost.beta, cfg.sigma2);
        meta["analytic"] = {{"a1", rec.a1}, {"a2", rec.a2}, {"ratio", rec.ratio}};
    }
    meta["status"] = 0;

    // Density CSV: x, m_brs, m_mfg, u_mfg with absent columns omitted.
    std::string csv = "x";
    if (result.brs_solution) csv += ",m_brs";
    if (result.mfg_solution) csv += ",m_mfg,u_mfg";
    csv += "\n";
    for (std::size_t i = 0; i < g.n; ++i) {
        csv += detail_io::format_double(g.nodes[i]);
        if (result.brs_solution) {
            csv += "," + detail_io::format_double(result.brs_solution->m[i]);
        }
        if (result.mfg_solution) {
            csv += "," + detail_io::format_double(result.mfg_solution->m[i]);
            csv += "," + detail_io::format_double(result.mfg_solution->u[i]);
        }
        csv += "\n";
    }
    detail_io::write_text_atomic(density_path, csv);

    if (result.brs_solution && result.mfg_solution) {
        result.metrics = compare(*result.brs_solution, *result.mfg_solution, g,
                                 split_index(cfg, g));
        const ComparisonMetrics& mt = *result.metrics;
        nlohmann::json jm;
        jm["l1_distance"] = mt.l1_distance;
        jm["linf_distance"] = mt.linf_distance;
        jm["variance_brs"] = mt.variance_brs;
        jm["variance_mfg"] = mt.variance_mfg;
        jm["variance_ratio"] = mt.variance_ratio;
        jm["mass_left_brs"] = mt.mass_left_brs;
        jm["mass_right_brs"] = mt.mass_right_brs;
        jm["mass_left_mfg"] = mt.mass_left_mfg;
        jm["mass_right_mfg"] = mt.mass_right_mfg;
        jm["split_x"] = mt.split_x;
        detail_io::write_text_atomic(metrics_path, jm.dump(2) + "\n");
    } else {
        detail_io::remove_if_exists(metrics_path);
    }
    detail_io::write_text_atomic(meta_path, meta.dump(2) + "\n");
    return result;
}

struct SweepRow {
    double value = 0.0;
    int status = 0;
    double variance_brs = 0.0;
    double variance_mfg = 0.0;
    double ratio = 0.0;
    double analytic_ratio = std::numeric_limits<double>::quiet_NaN();
    int iterations_brs = 0;
    int iterations_mfg = 0;
};

/// Run the base scenario once per parameter value; per-row failures are
/// recorded and the sweep continues. Writes <prefix>_sweep.csv.
inline std::vector<SweepRow> sweep(const ScenarioConfig& base, const std::string& parameter,
                                   const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep: empty value list");
    if (parameter != "beta" && parameter != "sigma2" && parameter != "m_max") {
        throw ConfigError("sweep: parameter must be beta|sigma2|m_max");
    }
    if (parameter == "beta" && base.cost.kind == "double_well_log") {
        throw ConfigError("sweep: cost kind double_well_log has no beta parameter");
    }
    if (parameter == "m_max" && base.cost.kind != "barrier") {
        throw ConfigError("sweep: parameter m_max requires the barrier cost");
    }

    std::vector<SweepRow> rows;
    for (double v : values) {
        ScenarioConfig cfg = base;
        if (parameter == "beta") cfg.cost.beta = v;
        if (parameter == "sigma2") cfg.sigma2 = v;
        if (parameter == "m_max") cfg.cost.m_max = v;
        cfg.output_prefix = base.output_prefix + "_" + parameter + "_" +
                            detail_io::format_double(v);
        SweepRow row;
        row.value = v;
        try {
            const ScenarioResult res = run_scenario(cfg);
            row.status = res.status;
            if (res.status == 0) {
                const Grid g = build_grid(cfg.x_lo, cfg.x_hi, cfg.n);
                if (res.brs_solution) {
                    row.variance_brs = density_moments(res.brs_solution->m, g).variance;
                    row.iterations_brs = res.brs_solution->outer_iterations;
                }
                if (res.mfg_solution) {
                    row.variance_mfg = density_moments(res.mfg_solution->m, g).variance;
                    row.iterations_mfg = res.mfg_solution->iterations;
                }
                if (res.brs_solution && res.mfg_solution) {
                    row.ratio = row.variance_brs / row.variance_mfg;
                }
                if (cfg.cost.kind == "quad_log" && cfg.cost.beta > 0.0) {
                    row.analytic_ratio =
                        analytic::variance_ratio(cfg.cost.beta, cfg.sigma2).ratio;
                }
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            row.status = 3;
        }
        rows.push_back(row);
    }

    std::string csv = parameter +
                      ",variance_brs,variance_mfg,ratio,analytic_ratio,"
                      "iterations_brs,iterations_mfg,status\n";
    for (const SweepRow& r : rows) {
        csv += detail_io::format_double(r.value);
        csv += "," + detail_io::format_double(r.variance_brs);
        csv += "," + detail_io::format_double(r.variance_mfg);
        csv += "," + detail_io::format_double(r.ratio);
        csv += ",";
        if (std::isfinite(r.analytic_ratio)) csv += detail_io::format_double(r.analytic_ratio);
        csv += "," + std::to_string(r.iterations_brs);
        csv += "," + std::to_string(r.iterations_mfg);
        csv += "," + std::to_string(r.status);
        csv += "\n";
    }
    detail_io::write_text_atomic(base.output_prefix + "_sweep.csv", csv);
    return rows;
}

}  // namespace brsmfg
