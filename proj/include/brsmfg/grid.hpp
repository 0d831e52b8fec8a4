#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "brsmfg/errors.hpp"

namespace brsmfg {

/// Grid-sampled scalar function, aligned with Grid::nodes.
using ScalarField = std::vector<double>;

/// Uniform 1-D mesh of Omega = [x_lo, x_hi], both endpoints included.
/// The no-flux boundary handling lives in the operators below; the grid
/// itself only carries geometry.
struct Grid {
    double x_lo = 0.0;
    double x_hi = 0.0;
    std::size_t n = 0;           ///< node count, >= 3
    double dx = 0.0;             ///< mesh width (x_hi - x_lo)/(n-1)
    double measure = 0.0;        ///< |Omega| = x_hi - x_lo
    std::vector<double> nodes;   ///< x_i = x_lo + i*dx, strictly increasing
};

inline Grid build_grid(double x_lo, double x_hi, std::size_t n) {
    if (!(x_hi > x_lo)) {
        throw ConfigError("build_grid: empty interval, require x_hi > x_lo (got [" +
                          std::to_string(x_lo) + ", " + std::to_string(x_hi) + "])");
    }
    if (n < 3) {
        throw ConfigError("build_grid: require n >= 3 nodes (got " + std::to_string(n) + ")");
    }
    Grid g;
    g.x_lo = x_lo;
    g.x_hi = x_hi;
    g.n = n;
    g.measure = x_hi - x_lo;
    g.dx = g.measure / static_cast<double>(n - 1);
    g.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.nodes[i] = x_lo + static_cast<double>(i) * g.dx;
    }
    g.nodes.back() = x_hi;  // endpoint exact regardless of rounding
    return g;
}

inline void require_aligned(const ScalarField& f, const Grid& g, const char* where) {
    if (f.size() != g.n) {
        throw ContractViolation(std::string(where) + ": field length " +
                                std::to_string(f.size()) + " does not match grid n = " +
                                std::to_string(g.n));
    }
}

/// Trapezoid quadrature weights: dx at interior nodes, dx/2 at the endpoints.
inline std::vector<double> quadrature_weights(const Grid& g) {
    std::vector<double> w(g.n, g.dx);
    w.front() = 0.5 * g.dx;
    w.back() = 0.5 * g.dx;
    return w;
}

/// Trapezoid-rule approximation of the integral of f over Omega.
/// Exact for affine f.
inline double integrate(const ScalarField& f, const Grid& g) {
    require_aligned(f, g, "integrate");
    double sum = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < g.n; ++i) sum += f[i];
    return sum * g.dx;
}

/// Second-order derivative estimate: centered differences at interior nodes,
/// one-sided three-point stencils at the endpoints. Exact on quadratics.
inline ScalarField gradient(const ScalarField& f, const Grid& g) {
    require_aligned(f, g, "gradient");
    const std::size_t n = g.n;
    ScalarField d(n);
    const double inv2dx = 1.0 / (2.0 * g.dx);
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * inv2dx;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        d[i] = (f[i + 1] - f[i - 1]) * inv2dx;
    }
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * inv2dx;
    return d;
}

/// Max-norm residual of the stationary Fokker-Planck operator
///   -(sigma^2/2) m'' - (m * drift)' = 0
/// on the interior, with the boundary rows encoding the no-flux condition
///   (sigma^2/2) m' + m * drift = 0  at x_lo and x_hi
/// via the same second-order one-sided stencils as gradient().
inline double divergence_flux_residual(const ScalarField& m, const ScalarField& drift,
                                       double sigma, const Grid& g) {
    if (!(sigma > 0.0)) {
        throw ConfigError("divergence_flux_residual: require sigma > 0");
    }
    require_aligned(m, g, "divergence_flux_residual(m)");
    require_aligned(drift, g, "divergence_flux_residual(drift)");

    const std::size_t n = g.n;
    const double half_s2 = 0.5 * sigma * sigma;
    const double inv_dx2 = 1.0 / (g.dx * g.dx);
    const double inv2dx = 1.0 / (2.0 * g.dx);

    ScalarField p(n);  // advective flux m * drift
    for (std::size_t i = 0; i < n; ++i) p[i] = m[i] * drift[i];

    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double diff = -half_s2 * (m[i + 1] - 2.0 * m[i] + m[i - 1]) * inv_dx2;
        const double adv = -(p[i + 1] - p[i - 1]) * inv2dx;
        worst = std::max(worst, std::abs(diff + adv));
    }
    const double flux_lo = half_s2 * (-3.0 * m[0] + 4.0 * m[1] - m[2]) * inv2dx + p[0];
    const double flux_hi = half_s2 * (3.0 * m[n - 1] - 4.0 * m[n - 2] + m[n - 3]) * inv2dx + p[n - 1];
    worst = std::max(worst, std::max(std::abs(flux_lo), std::abs(flux_hi)));
    return worst;
}

/// Mass, mean and variance of a density sample under trapezoid quadrature.
struct DensityMoments {
    double mass = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

inline DensityMoments density_moments(const ScalarField& m, const Grid& g) {
    require_aligned(m, g, "density_moments");
    ScalarField xm(g.n), xxm(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        xm[i] = g.nodes[i] * m[i];
        xxm[i] = g.nodes[i] * xm[i];
    }
    DensityMoments mom;
    mom.mass = integrate(m, g);
    mom.mean = integrate(xm, g);
    mom.variance = integrate(xxm, g) - mom.mean * mom.mean;
    return mom;
}

inline double max_abs_diff(const ScalarField& a, const ScalarField& b) {
    if (a.size() != b.size()) {
        throw ContractViolation("max_abs_diff: mismatched field lengths");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace brsmfg
