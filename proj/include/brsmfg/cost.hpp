#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "brsmfg/errors.hpp"
#include "brsmfg/grid.hpp"

namespace brsmfg {

/// Running cost h(x, m) with partial derivatives. The congestion argument m
/// ranges over the open interval (0, m_sup); evaluations outside it may
/// return +inf (barrier costs do), which the solvers treat as infeasible.
struct CostModel {
    std::function<double(double, double)> eval;  ///< h(x, m)
    std::function<double(double, double)> d_m;   ///< dh/dm
    std::function<double(double, double)> d_x;   ///< dh/dx
    double m_sup = std::numeric_limits<double>::infinity();
    bool strictly_increasing = false;
    std::string description;
};

/// Result of sampling the standing assumptions on a finite lattice.
/// The m -> 0 and m -> m_sup limits are stood in for by the window
/// endpoints m_lo, m_hi; all catalog costs are monotone in m, so the
/// endpoint values bracket the limits.
struct AssumptionReport {
    bool monotone_ok = false;   ///< dh/dm >= -1e-12 at every sample
    bool mfg_lower_ok = false;  ///< sup_x h(x, m_lo) < inf_x h(x, 1/|Omega|)
    bool mfg_upper_ok = false;  ///< sup_x h(x, 1/|Omega|) < inf_x h(x, m_hi)
    double worst_violation = 0.0;
    std::size_t samples_used = 0;
};

/// Spatial potential with an analytic slope, for F1(x) + log(m) costs.
struct Potential {
    std::function<double(double)> value;
    std::function<double(double)> slope;
};

/// h(x, m) = beta*x^2 + log m.
inline CostModel quad_log(double beta) {
    if (beta < 0.0) throw ConfigError("quad_log: require beta >= 0");
    CostModel c;
    c.eval = [beta](double x, double m) { return beta * x * x + std::log(m); };
    c.d_m = [](double, double m) { return 1.0 / m; };
    c.d_x = [beta](double x, double) { return 2.0 * beta * x; };
    c.strictly_increasing = true;
    c.description = "quad_log(beta=" + std::to_string(beta) + ")";
    return c;
}

/// h(x, m) = m^alpha + beta*x^2.
inline CostModel power_law(double alpha, double beta) {
    if (!(alpha > 0.0)) throw ConfigError("power_law: require alpha > 0");
    if (beta < 0.0) throw ConfigError("power_law: require beta >= 0");
    CostModel c;
    c.eval = [alpha, beta](double x, double m) { return std::pow(m, alpha) + beta * x * x; };
    c.d_m = [alpha](double, double m) { return alpha * std::pow(m, alpha - 1.0); };
    c.d_x = [beta](double x, double) { return 2.0 * beta * x; };
    c.strictly_increasing = true;
    c.description = "power_law(alpha=" + std::to_string(alpha) + ", beta=" + std::to_string(beta) + ")";
    return c;
}

/// h(x, m) = 1/(m_max - m) + beta*x^2 on m in (0, m_max).
/// Requires m_max > 1/|Omega| so the unit-mass constraint is feasible.
inline CostModel barrier(double m_max, double beta, double grid_measure) {
    if (!(grid_measure > 0.0)) throw ConfigError("barrier: require grid_measure > 0");
    if (!(m_max > 1.0 / grid_measure)) {
        throw ConfigError("barrier: require m_max > 1/|Omega| (got m_max = " +
                          std::to_string(m_max) + ", 1/|Omega| = " +
                          std::to_string(1.0 / grid_measure) + ")");
    }
    if (beta < 0.0) throw ConfigError("barrier: require beta >= 0");
    const double inf = std::numeric_limits<double>::infinity();
    CostModel c;
    c.eval = [m_max, beta, inf](double x, double m) {
        if (m >= m_max) return inf;
        return 1.0 / (m_max - m) + beta * x * x;
    };
    c.d_m = [m_max, inf](double, double m) {
        if (m >= m_max) return inf;
        const double d = m_max - m;
        return 1.0 / (d * d);
    };
    c.d_x = [beta](double x, double) { return 2.0 * beta * x; };
    c.m_sup = m_max;
    c.strictly_increasing = true;
    c.description = "barrier(m_max=" + std::to_string(m_max) + ", beta=" + std::to_string(beta) + ")";
    return c;
}

/// Double-well potential: sum of two inverted Gaussian bumps,
///   F1(x) = -d1*exp(-((x-c1)/w1)^2) - d2*exp(-((x-c2)/w2)^2).
/// Smooth, bounded; depth/width/center map directly onto well geometry.
inline Potential double_well(double depth1, double width1, double center1,
                             double depth2, double width2, double center2) {
    if (!(depth1 > 0.0) || !(depth2 > 0.0)) {
        throw ConfigError("double_well: require positive depths");
    }
    if (!(width1 > 0.0) || !(width2 > 0.0)) {
        throw ConfigError("double_well: require positive widths");
    }
    Potential p;
    p.value = [=](double x) {
        const double t1 = (x - center1) / width1;
        const double t2 = (x - center2) / width2;
        return -depth1 * std::exp(-t1 * t1) - depth2 * std::exp(-t2 * t2);
    };
    p.slope = [=](double x) {
        const double t1 = (x - center1) / width1;
        const double t2 = (x - center2) / width2;
        return 2.0 * depth1 * t1 / width1 * std::exp(-t1 * t1) +
               2.0 * depth2 * t2 / width2 * std::exp(-t2 * t2);
    };
    return p;
}

/// h(x, m) = F1(x) + log m with an analytic potential slope.
inline CostModel potential_plus_log(Potential f1, std::string name = "potential_plus_log") {
    CostModel c;
    auto value = f1.value;
    c.eval = [value](double x, double m) { return value(x) + std::log(m); };
    c.d_m = [](double, double m) { return 1.0 / m; };
    c.d_x = [slope = f1.slope](double x, double) { return slope(x); };
    c.strictly_increasing = true;
    c.description = std::move(name);
    return c;
}

/// h(x, m) = F1(x) + log m from grid samples of F1; the potential and its
/// slope are linearly interpolated between nodes (slope by centered
/// differences of the samples).
inline CostModel potential_plus_log(const ScalarField& f1_samples, const Grid& g) {
    require_aligned(f1_samples, g, "potential_plus_log");
    auto interp = [g, f1_samples](double x) {
        const double t = std::clamp((x - g.x_lo) / g.dx, 0.0, static_cast<double>(g.n - 1));
        const std::size_t i = std::min(static_cast<std::size_t>(t), g.n - 2);
        const double frac = t - static_cast<double>(i);
        return f1_samples[i] * (1.0 - frac) + f1_samples[i + 1] * frac;
    };
    Potential p;
    p.value = interp;
    ScalarField df = gradient(f1_samples, g);
    p.slope = [g, df](double x) {
        const double t = std::clamp((x - g.x_lo) / g.dx, 0.0, static_cast<double>(g.n - 1));
        const std::size_t i = std::min(static_cast<std::size_t>(t), g.n - 2);
        const double frac = t - static_cast<double>(i);
        return df[i] * (1.0 - frac) + df[i + 1] * frac;
    };
    return potential_plus_log(std::move(p), "potential_plus_log(sampled)");
}

/// Log-regularized cost h_eps(x, m) = h(x, m) + eps*log(|Omega| m).
/// Strictly increasing for any eps > 0; coincides with h at m = 1/|Omega|.
inline CostModel regularize(const CostModel& c, double eps, double grid_measure) {
    if (!(eps > 0.0)) throw ConfigError("regularize: require eps > 0");
    if (!(grid_measure > 0.0)) throw ConfigError("regularize: require grid_measure > 0");
    CostModel r = c;
    r.eval = [base = c.eval, eps, grid_measure](double x, double m) {
        return base(x, m) + eps * std::log(grid_measure * m);
    };
    r.d_m = [base = c.d_m, eps](double x, double m) { return base(x, m) + eps / m; };
    r.strictly_increasing = true;
    r.description = c.description + " + " + std::to_string(eps) + "*log(|Omega|*m)";
    return r;
}

/// Sample the monotonicity and MFG window assumptions on grid nodes times a
/// log-spaced lattice of m values in [m_lo, m_hi].
inline AssumptionReport validate_assumptions(const CostModel& c, const Grid& g,
                                             double m_lo, double m_hi, std::size_t samples) {
    const double m_ref = 1.0 / g.measure;
    if (!(m_lo > 0.0) || !(m_lo < m_ref) || !(m_hi > m_ref) || !(m_hi < c.m_sup)) {
        throw ConfigError("validate_assumptions: require 0 < m_lo < 1/|Omega| < m_hi < m_sup");
    }
    if (samples < 2) throw ConfigError("validate_assumptions: require samples >= 2");

    AssumptionReport rep;
    const double log_lo = std::log(m_lo), log_hi = std::log(m_hi);
    double monotone_violation = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double m = std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(k) /
                                               static_cast<double>(samples - 1));
        for (double x : g.nodes) {
            monotone_violation = std::max(monotone_violation, -(c.d_m(x, m) + 1e-12));
            ++rep.samples_used;
        }
    }
    rep.monotone_ok = monotone_violation <= 0.0;

    auto min_over_x = [&](double m) {
        double lo = std::numeric_limits<double>::infinity();
        for (double x : g.nodes) lo = std::min(lo, c.eval(x, m));
        return lo;
    };
    auto max_over_x = [&](double m) {
        double hi = -std::numeric_limits<double>::infinity();
        for (double x : g.nodes) hi = std::max(hi, c.eval(x, m));
        return hi;
    };
    const double lower_violation = max_over_x(m_lo) - min_over_x(m_ref);
    const double upper_violation = max_over_x(m_ref) - min_over_x(m_hi);
    rep.mfg_lower_ok = lower_violation < 0.0;
    rep.mfg_upper_ok = upper_violation < 0.0;

    rep.worst_violation = std::max({0.0, monotone_violation, lower_violation, upper_violation});
    return rep;
}

}  // namespace brsmfg
