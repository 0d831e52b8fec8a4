#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "brsmfg/cost.hpp"
#include "brsmfg/errors.hpp"
#include "brsmfg/grid.hpp"

namespace brsmfg::brs {

struct Config {
    double sigma = 0.0;       ///< noise intensity, > 0
    double inner_tol = 1e-12; ///< |G_{Z,x}(m)| stopping tolerance
    double outer_tol = 1e-10; ///< |Phi(Z) - 1| stopping tolerance
    int max_inner = 100;
    int max_outer = 200;
};

inline void validate(const Config& cfg) {
    if (!(cfg.sigma > 0.0)) throw ConfigError("brs::Config: require sigma > 0");
    if (!(cfg.inner_tol > 0.0) || !(cfg.outer_tol > 0.0)) {
        throw ConfigError("brs::Config: tolerances must be positive");
    }
}

struct Solution {
    ScalarField m;
    double Z = 0.0;                  ///< normalization constant Z*
    double pointwise_residual = 0.0; ///< max_i |G_{Z,x_i}(m_i)|
    double mass_residual = 0.0;      ///< |Phi(Z) - 1|
    double pde_residual = 0.0;       ///< divergence_flux_residual of (m, grad h)
    int outer_iterations = 0;
};

namespace detail {

// G_{Z,x}(m) = (1/Z) exp(-(2/sigma^2) h(x,m)) - m, strictly decreasing in m
// whenever h is increasing. Infinite h (barrier beyond m_sup) maps to G = -m.
inline double g_value(const CostModel& c, double z, double x, double m, double two_over_s2) {
    const double h = c.eval(x, m);
    if (h == std::numeric_limits<double>::infinity()) return -m;
    return std::exp(-two_over_s2 * h) / z - m;
}

}  // namespace detail

/// Root of G_{Z,x} by safeguarded Newton inside a sign-change bracket.
/// The bracket is grown geometrically from a seed near
/// (1/Z) exp(-(2/sigma^2) h(x, m_ref)); G > 0 near m = 0 and G < 0 for large
/// m, so a bracket always exists for admissible costs. m_ref defaults to 1
/// (or m_sup/2 when the congestion domain is bounded); mass() passes
/// 1/|Omega|. The converged root does not depend on the seed.
inline double pointwise_density(const CostModel& c, double Z, double x, const Config& cfg,
                                double m_ref = 0.0) {
    validate(cfg);
    if (!(Z > 0.0)) throw ConfigError("pointwise_density: require Z > 0");
    const double two_over_s2 = 2.0 / (cfg.sigma * cfg.sigma);
    const bool bounded = std::isfinite(c.m_sup);
    if (m_ref <= 0.0) m_ref = bounded ? 0.5 * c.m_sup : 1.0;
    if (bounded) m_ref = std::min(m_ref, 0.5 * c.m_sup);

    auto G = [&](double m) { return detail::g_value(c, Z, x, m, two_over_s2); };

    double seed = std::exp(-two_over_s2 * c.eval(x, m_ref)) / Z;
    if (!std::isfinite(seed) || seed <= 0.0) seed = m_ref;
    if (bounded) seed = std::min(seed, 0.5 * (m_ref + c.m_sup));

    // Grow a sign-change bracket [lo, hi] around the seed.
    double lo = seed, hi = seed;
    double g_lo = G(lo), g_hi = g_lo;
    int steps = 0;
    while (g_lo < 0.0) {
        lo *= 0.5;
        g_lo = G(lo);
        if (++steps > 1100) {
            throw SolverError("pointwise_density: no sign change toward m = 0 at x = " +
                              std::to_string(x) + ", Z = " + std::to_string(Z));
        }
    }
    steps = 0;
    while (g_hi >= 0.0) {
        hi = bounded ? 0.5 * (hi + c.m_sup) : 2.0 * hi;
        g_hi = G(hi);
        if (++steps > 1100) {
            throw SolverError("pointwise_density: no sign change toward m_sup at x = " +
                              std::to_string(x) + ", Z = " + std::to_string(Z));
        }
    }
    // |G| scales with m itself, so the tolerance is relative for large
    // densities (far bracket probes) and equals inner_tol near unit mass.
    auto tol_at = [&](double m) { return cfg.inner_tol * std::max(1.0, m); };
    if (std::abs(g_lo) <= tol_at(lo)) return lo;
    if (std::abs(g_hi) <= tol_at(hi)) return hi;

    // Safeguarded Newton: fall back to bisection whenever the Newton step
    // leaves [lo, hi] or fails to shrink the interval fast enough.
    double m = 0.5 * (lo + hi);
    double step_old = std::abs(hi - lo);
    double step = step_old;
    for (int it = 0; it < cfg.max_inner; ++it) {
        const double g = G(m);
        if (std::abs(g) <= tol_at(m)) return m;
        if (g > 0.0) lo = m; else hi = m;

        const double dg = -two_over_s2 * c.d_m(x, m) * (g + m) - 1.0;  // G' <= -1
        double m_next = m - g / dg;
        const bool newton_ok = std::isfinite(m_next) && m_next > lo && m_next < hi &&
                               std::abs(2.0 * g) <= std::abs(step_old * dg);
        step_old = step;
        if (newton_ok) {
            step = std::abs(m_next - m);
        } else {
            m_next = 0.5 * (lo + hi);
            step = 0.5 * (hi - lo);
        }
        m = m_next;
        // Bracket exhausted: m is resolved to machine precision. |G| may
        // still exceed the tolerance next to a barrier pole where G' blows
        // up, but the root itself cannot be located any better.
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(m)) {
            return m;
        }
    }
    throw SolverError("pointwise_density: no convergence at x = " + std::to_string(x) +
                      ", Z = " + std::to_string(Z));
}

/// Density field m_Z sampled at every grid node.
inline ScalarField density_field(const CostModel& c, double Z, const Grid& g, const Config& cfg) {
    ScalarField m(g.n);
    const double m_ref = std::isfinite(c.m_sup)
                             ? std::min(1.0 / g.measure, 0.5 * c.m_sup)
                             : 1.0 / g.measure;
    for (std::size_t i = 0; i < g.n; ++i) {
        m[i] = pointwise_density(c, Z, g.nodes[i], cfg, m_ref);
    }
    return m;
}

/// Mass map Phi(Z) = integral of m_Z over Omega; strictly decreasing in Z.
inline double mass(const CostModel& c, double Z, const Grid& g, const Config& cfg) {
    return integrate(density_field(c, Z, g, cfg), g);
}

/// dPhi/dZ from differentiating the implicit relation for m_Z:
///   dm_Z/dZ = -m_Z / (Z (1 + (2/sigma^2) m_Z dh/dm));  strictly negative.
inline double mass_derivative(const CostModel& c, double Z, const Grid& g, const Config& cfg) {
    const ScalarField m = density_field(c, Z, g, cfg);
    const double two_over_s2 = 2.0 / (cfg.sigma * cfg.sigma);
    ScalarField dm(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        dm[i] = -m[i] / (Z * (1.0 + two_over_s2 * m[i] * c.d_m(g.nodes[i], m[i])));
    }
    return integrate(dm, g);
}

/// Solve the stationary best-reply problem: find Z* with Phi(Z*) = 1 by
/// safeguarded Newton on Phi - 1 inside the bracket
///   [|Omega| e^{-(2/sigma^2) C2}, |Omega| e^{-(2/sigma^2) C1}],
/// C1 = min_x h(x, 1/|Omega|), C2 = max_x h(x, 1/|Omega|), which straddles
/// the root for monotone costs (grown geometrically if rounding spoils it).
inline Solution solve(const CostModel& c, const Grid& g, const Config& cfg) {
    validate(cfg);
    const double two_over_s2 = 2.0 / (cfg.sigma * cfg.sigma);
    const double m_ref = std::isfinite(c.m_sup)
                             ? std::min(1.0 / g.measure, 0.5 * c.m_sup)
                             : 1.0 / g.measure;

    double c1 = std::numeric_limits<double>::infinity(), c2 = -c1;
    for (double x : g.nodes) {
        const double h = c.eval(x, m_ref);
        c1 = std::min(c1, h);
        c2 = std::max(c2, h);
    }
    double z_lo = g.measure * std::exp(-two_over_s2 * c2);  // Phi >= 1 end
    double z_hi = g.measure * std::exp(-two_over_s2 * c1);  // Phi <= 1 end
    if (z_lo > z_hi) std::swap(z_lo, z_hi);

    double phi_lo = mass(c, z_lo, g, cfg);
    double phi_hi = mass(c, z_hi, g, cfg);
    int grow = 0;
    while (phi_lo < 1.0) {
        z_lo *= 0.5;
        phi_lo = mass(c, z_lo, g, cfg);
        if (++grow > 60) throw SolverError("brs::solve: cannot bracket Phi(Z) = 1 from below");
    }
    grow = 0;
    while (phi_hi > 1.0) {
        z_hi *= 2.0;
        phi_hi = mass(c, z_hi, g, cfg);
        if (++grow > 60) throw SolverError("brs::solve: cannot bracket Phi(Z) = 1 from above");
    }

    double z = 0.5 * (z_lo + z_hi);
    double f = mass(c, z, g, cfg) - 1.0;
    int iterations = 1;
    double step_old = z_hi - z_lo;
    double step = step_old;
    while (std::abs(f) > cfg.outer_tol) {
        if (iterations >= cfg.max_outer) {
            throw SolverError("brs::solve: outer iteration limit reached, |Phi - 1| = " +
                              std::to_string(std::abs(f)));
        }
        if (f > 0.0) z_lo = z; else z_hi = z;
        const double df = mass_derivative(c, z, g, cfg);
        double z_next = z - f / df;
        const bool newton_ok = std::isfinite(z_next) && z_next > z_lo && z_next < z_hi &&
                               std::abs(2.0 * f) <= std::abs(step_old * df);
        step_old = step;
        if (newton_ok) {
            step = std::abs(z_next - z);
        } else {
            z_next = 0.5 * (z_lo + z_hi);
            step = 0.5 * (z_hi - z_lo);
        }
        z = z_next;
        f = mass(c, z, g, cfg) - 1.0;
        ++iterations;
    }

    Solution sol;
    sol.Z = z;
    sol.m = density_field(c, z, g, cfg);
    sol.mass_residual = std::abs(f);
    sol.outer_iterations = iterations;
    for (std::size_t i = 0; i < g.n; ++i) {
        sol.pointwise_residual = std::max(
            sol.pointwise_residual,
            std::abs(detail::g_value(c, z, g.nodes[i], sol.m[i], two_over_s2)));
    }
    // Residual of the divergence-form PDE with drift grad[h(x, m(x))]
    // recovered by the chain rule.
    const ScalarField grad_m = gradient(sol.m, g);
    ScalarField drift(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        const double x = g.nodes[i];
        drift[i] = c.d_x(x, sol.m[i]) + c.d_m(x, sol.m[i]) * grad_m[i];
    }
    sol.pde_residual = divergence_flux_residual(sol.m, drift, cfg.sigma, g);
    return sol;
}

}  // namespace brsmfg::brs
