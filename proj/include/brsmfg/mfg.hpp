#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "brsmfg/cost.hpp"
#include "brsmfg/errors.hpp"
#include "brsmfg/grid.hpp"
#include "brsmfg/tridiagonal.hpp"

namespace brsmfg::mfg {

struct Config {
    double sigma = 0.0;        ///< noise intensity, > 0
    double damping = 0.5;      ///< Picard damping weight omega in [0, 1)
    double picard_tol = 1e-8;  ///< successive-iterate max-norm change
    double newton_tol = 1e-10; ///< max-norm PDE residual per Newton solve
    double bisect_tol = 1e-10; ///< |I1| and |I2 - 1| stopping tolerance
    int max_picard = 500;
    int max_newton = 50;
    double epsilon = 0.0;      ///< log-regularization strength, >= 0
};

inline void validate(const Config& cfg) {
    if (!(cfg.sigma > 0.0)) throw ConfigError("mfg::Config: require sigma > 0");
    if (!(cfg.damping >= 0.0 && cfg.damping < 1.0)) {
        throw ConfigError("mfg::Config: require damping in [0, 1)");
    }
    if (!(cfg.picard_tol > 0.0) || !(cfg.newton_tol > 0.0) || !(cfg.bisect_tol > 0.0)) {
        throw ConfigError("mfg::Config: tolerances must be positive");
    }
    if (cfg.epsilon < 0.0) throw ConfigError("mfg::Config: require epsilon >= 0");
}

struct Solution {
    ScalarField m;
    ScalarField u;
    double lambda = 0.0;
    double Z = 0.0;
    double hjb_residual = 0.0;
    double fpe_residual = 0.0;
    double mass_residual = 0.0;
    double u_mean_residual = 0.0;
    int iterations = 0;
};

struct GibbsDensity {
    ScalarField m;
    double Z = 0.0;
};

/// Normalized Gibbs density m = (1/Z) exp(-2u/sigma^2), Z = integral of the
/// exponential. The exponent is shifted by its maximum before exponentiating;
/// the normalized ratio is invariant, so this only guards against overflow.
inline GibbsDensity gibbs_density(const ScalarField& u, double sigma, const Grid& g) {
    require_aligned(u, g, "gibbs_density");
    if (!(sigma > 0.0)) throw ConfigError("gibbs_density: require sigma > 0");
    const double two_over_s2 = 2.0 / (sigma * sigma);
    double smax = -std::numeric_limits<double>::infinity();
    for (double ui : u) smax = std::max(smax, -two_over_s2 * ui);
    GibbsDensity out;
    out.m.resize(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        out.m[i] = std::exp(-two_over_s2 * u[i] - smax);
    }
    const double z_shifted = integrate(out.m, g);
    for (double& mi : out.m) mi /= z_shifted;
    out.Z = std::exp(smax) * z_shifted;
    return out;
}

namespace detail {

// Rows of the discrete HJB operator
//   -(sigma^2/2) u'' + |u'|^2/2 - h + lambda
// with Neumann ghost rows: the ghost value u_{-1} = u_1 makes the boundary
// gradient vanish and the second difference one-sided-symmetric.
inline void hjb_rows(const ScalarField& u, const ScalarField& h, double lambda,
                     double sigma, const Grid& g, ScalarField& out) {
    const std::size_t n = g.n;
    const double s2 = sigma * sigma;
    const double inv_dx2 = 1.0 / (g.dx * g.dx);
    const double inv2dx = 1.0 / (2.0 * g.dx);
    out.resize(n);
    out[0] = -s2 * (u[1] - u[0]) * inv_dx2 - h[0] + lambda;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double du = (u[i + 1] - u[i - 1]) * inv2dx;
        out[i] = -0.5 * s2 * (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv_dx2 +
                 0.5 * du * du - h[i] + lambda;
    }
    out[n - 1] = -s2 * (u[n - 2] - u[n - 1]) * inv_dx2 - h[n - 1] + lambda;
}

// Tridiagonal Jacobian of hjb_rows with respect to u; extra_diag holds the
// congestion coupling d/du[-h(x, m(u))] when m depends on u, zeros otherwise.
inline void hjb_jacobian(const ScalarField& u, double sigma, const Grid& g,
                         const ScalarField& extra_diag,
                         std::vector<double>& lower, std::vector<double>& diag,
                         std::vector<double>& upper) {
    const std::size_t n = g.n;
    const double s2 = sigma * sigma;
    const double inv_dx2 = 1.0 / (g.dx * g.dx);
    const double inv2dx = 1.0 / (2.0 * g.dx);
    lower.assign(n - 1, 0.0);
    diag.assign(n, 0.0);
    upper.assign(n - 1, 0.0);
    diag[0] = s2 * inv_dx2 + extra_diag[0];
    upper[0] = -s2 * inv_dx2;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double du = (u[i + 1] - u[i - 1]) * inv2dx;
        lower[i - 1] = -0.5 * s2 * inv_dx2 - du * inv2dx;
        diag[i] = s2 * inv_dx2 + extra_diag[i];
        upper[i] = -0.5 * s2 * inv_dx2 + du * inv2dx;
    }
    lower[n - 2] = -s2 * inv_dx2;
    diag[n - 1] = s2 * inv_dx2 + extra_diag[n - 1];
}

inline double max_abs(const ScalarField& f) {
    double worst = 0.0;
    for (double v : f) worst = std::max(worst, std::abs(v));
    return worst;
}

// Backtracking merit: Newton directions are descent directions for the
// least-squares functional, not for the max-norm, so step acceptance uses
// the former while convergence is still declared on the latter.
inline double sum_squares(const ScalarField& f) {
    double s = 0.0;
    for (double v : f) s += v * v;
    return s;
}

// Solve the bordered Newton system
//   A du + 1 dlambda = -R,   w' du = -f_con,
// where the PDE-row Jacobian A is tridiagonal with exactly zero row sums
// (the rows are invariant under constant shifts of u). Zero row sums let the
// system be rewritten in the difference variables g_i = du_{i+1} - du_i:
//   row 0:      upper_0 g_0 = r_0
//   row i:      -lower_{i-1} g_{i-1} + upper_i g_i = r_i
//   row n-1:    -lower_{n-2} g_{n-2} = r_{n-1}.
// The recurrences are run from each wall toward the meeting index k (the
// minimizer of u): the per-step factors |lower/upper| are contractions in
// the advection's downhill direction, which keeps the sweeps stable where a
// pinned elimination would amplify like exp(2 max(u) - 2 min(u))/sigma^2.
// Row k is left over and determines dlambda; the quadrature row fixes the
// additive constant. Returns false if a sweep degenerates.
inline bool solve_gauge_bordered(const std::vector<double>& lower,
                                 const std::vector<double>& upper,
                                 const ScalarField& R, double f_con,
                                 const std::vector<double>& w, double measure,
                                 std::size_t k, ScalarField& du, double& dlambda) {
    const std::size_t n = R.size();
    std::vector<double> ga(n - 1, 0.0), gb(n - 1, 0.0);
    // rhs of the PDE rows: rA = -R (residual part), rB = -1 (lambda column).
    if (k > 0) {
        ga[0] = -R[0] / upper[0];
        gb[0] = -1.0 / upper[0];
        for (std::size_t i = 1; i < k; ++i) {
            ga[i] = (-R[i] + lower[i - 1] * ga[i - 1]) / upper[i];
            gb[i] = (-1.0 + lower[i - 1] * gb[i - 1]) / upper[i];
        }
    }
    if (k + 1 < n) {
        ga[n - 2] = R[n - 1] / lower[n - 2];
        gb[n - 2] = 1.0 / lower[n - 2];
        for (std::size_t i = n - 2; i > k; --i) {
            ga[i - 1] = (upper[i] * ga[i] + R[i]) / lower[i - 1];
            gb[i - 1] = (upper[i] * gb[i] + 1.0) / lower[i - 1];
        }
    }
    double sa = 0.0, sb = 0.0;
    if (k > 0) {
        sa -= lower[k - 1] * ga[k - 1];
        sb -= lower[k - 1] * gb[k - 1];
    }
    if (k + 1 < n) {
        sa += upper[k] * ga[k];
        sb += upper[k] * gb[k];
    }
    const double denom = sb + 1.0;
    if (!std::isfinite(sa) || !std::isfinite(sb) || std::abs(denom) < 1e-300) return false;
    dlambda = (-R[k] - sa) / denom;

    du.assign(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        du[i + 1] = du[i] + ga[i] + dlambda * gb[i];
    }
    double wdu = 0.0;
    for (std::size_t i = 0; i < n; ++i) wdu += w[i] * du[i];
    const double shift = (-f_con - wdu) / measure;
    for (double& v : du) v += shift;
    for (double v : du) {
        if (!std::isfinite(v)) return false;
    }
    return std::isfinite(dlambda);
}

}  // namespace detail

/// Max-norm of the discrete HJB residual at (u, lambda) against density m.
inline double hjb_residual(const CostModel& c, const ScalarField& u, double lambda,
                           const ScalarField& m, double sigma, const Grid& g) {
    require_aligned(u, g, "hjb_residual(u)");
    require_aligned(m, g, "hjb_residual(m)");
    ScalarField h(g.n), rows;
    for (std::size_t i = 0; i < g.n; ++i) h[i] = c.eval(g.nodes[i], m[i]);
    detail::hjb_rows(u, h, lambda, sigma, g, rows);
    return detail::max_abs(rows);
}

struct HjbResult {
    ScalarField u;
    double lambda = 0.0;
    int newton_iterations = 0;
    double residual = 0.0;
};

/// Solve the HJB equation for a frozen density m, together with the zero-mean
/// constraint on u and the ergodic constant lambda as an extra unknown:
/// Newton on the (n+1)-unknown bordered system (n PDE rows with Neumann ghost
/// rows, one quadrature row for the constraint). The PDE rows are invariant
/// under constant shifts of u, so each linear solve is done in the pinned
/// gauge (delta_u_0 = 0) and the shift is recovered from the constraint row;
/// this solves the bordered system exactly while keeping every solve
/// tridiagonal.
inline HjbResult solve_hjb_given_m(const CostModel& c, const ScalarField& m,
                                   const Config& cfg, const Grid& g) {
    validate(cfg);
    require_aligned(m, g, "solve_hjb_given_m");
    const std::size_t n = g.n;
    ScalarField h(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(m[i] > 0.0)) throw ContractViolation("solve_hjb_given_m: density must be positive");
        h[i] = c.eval(g.nodes[i], m[i]);
        if (!std::isfinite(h[i])) {
            throw SolverError("solve_hjb_given_m: cost is not finite at node " +
                              std::to_string(i) + " (density " + std::to_string(m[i]) +
                              " outside the congestion domain)");
        }
    }
    const std::vector<double> w = quadrature_weights(g);

    HjbResult res;
    res.u.assign(n, 0.0);
    res.lambda = integrate(h, g) / g.measure;

    // Initializer: the substitution phi = e^{-u/sigma^2} linearizes the
    // continuum equation into the principal Neumann eigenpair of
    // -(sigma^4/2) phi'' + h phi = lambda phi. Inverse iteration on the
    // shifted operator gives a starting point with the right global shape
    // (including wall layers); Newton below does the actual convergence.
    {
        const double s4 = cfg.sigma * cfg.sigma * cfg.sigma * cfg.sigma;
        const double inv_dx2 = 1.0 / (g.dx * g.dx);
        double h_min = h[0];
        for (double v : h) h_min = std::min(h_min, v);
        const double mu = h_min - 1.0;
        std::vector<double> lo(n - 1, -0.5 * s4 * inv_dx2);
        std::vector<double> up(n - 1, -0.5 * s4 * inv_dx2);
        std::vector<double> dg(n);
        for (std::size_t i = 0; i < n; ++i) dg[i] = s4 * inv_dx2 + h[i] - mu;
        lo[n - 2] = -s4 * inv_dx2;
        up[0] = -s4 * inv_dx2;
        ScalarField phi(n, 1.0), psi;
        double lambda_est = res.lambda;
        bool positive = true;
        for (int it = 0; it < 200; ++it) {
            if (!brsmfg::detail::solve_tridiagonal(lo, dg, up, phi, psi)) {
                positive = false;
                break;
            }
            double dot_fp = 0.0, dot_pp = 0.0, norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dot_fp += phi[i] * psi[i];
                dot_pp += psi[i] * psi[i];
                norm = std::max(norm, std::abs(psi[i]));
            }
            const double lambda_new = mu + dot_fp / dot_pp;
            for (std::size_t i = 0; i < n; ++i) {
                psi[i] /= norm;
                if (psi[i] <= 0.0) positive = false;
            }
            if (!positive) break;
            phi = psi;
            if (std::abs(lambda_new - lambda_est) <=
                1e-12 * (1.0 + std::abs(lambda_new)) && it > 2) {
                lambda_est = lambda_new;
                break;
            }
            lambda_est = lambda_new;
        }
        if (positive) {
            const double s2 = cfg.sigma * cfg.sigma;
            for (std::size_t i = 0; i < n; ++i) res.u[i] = -s2 * std::log(phi[i]);
            const double mean = integrate(res.u, g) / g.measure;
            for (double& v : res.u) v -= mean;
            res.lambda = lambda_est;
        } else {
            res.u.assign(n, 0.0);
        }
    }

    ScalarField rows, zeros(n, 0.0);
    std::vector<double> lower, diag, upper;

    auto residual_norm = [&](const ScalarField& u, double lambda) {
        detail::hjb_rows(u, h, lambda, cfg.sigma, g, rows);
        return std::max(detail::max_abs(rows), std::abs(integrate(u, g)));
    };
    auto merit = [&](const ScalarField& u, double lambda) {
        detail::hjb_rows(u, h, lambda, cfg.sigma, g, rows);
        const double f_con = integrate(u, g);
        return detail::sum_squares(rows) + f_con * f_con;
    };
    // Rounding floor of the residual evaluation; the second difference
    // amplifies value rounding by sigma^2/dx^2.
    double h_max_abs = 0.0;
    for (double v : h) h_max_abs = std::max(h_max_abs, std::abs(v));
    const double s2 = cfg.sigma * cfg.sigma;
    auto noise_floor = [&](const ScalarField& u, double lambda) {
        double umax = 0.0;
        for (double v : u) umax = std::max(umax, std::abs(v));
        return 8.0 * std::numeric_limits<double>::epsilon() *
               (4.0 * (s2 / (g.dx * g.dx)) * umax + h_max_abs + std::abs(lambda));
    };

    double res_norm = residual_norm(res.u, res.lambda);
    double res_merit = merit(res.u, res.lambda);
    for (int it = 0; it < cfg.max_newton; ++it) {
        if (res_norm <= std::max(cfg.newton_tol, noise_floor(res.u, res.lambda))) {
            res.newton_iterations = it;
            res.residual = res_norm;
            return res;
        }
        detail::hjb_rows(res.u, h, res.lambda, cfg.sigma, g, rows);
        const double f_con = integrate(res.u, g);
        detail::hjb_jacobian(res.u, cfg.sigma, g, zeros, lower, diag, upper);

        std::size_t k_min = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (res.u[i] < res.u[k_min]) k_min = i;
        }
        ScalarField du;
        double dlambda = 0.0;
        if (!detail::solve_gauge_bordered(lower, upper, rows, f_con, w, g.measure,
                                          k_min, du, dlambda)) {
            throw SolverError("solve_hjb_given_m: degenerate bordered system");
        }

        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls <= 30; ++ls) {
            ScalarField u_try(n);
            for (std::size_t i = 0; i < n; ++i) u_try[i] = res.u[i] + t * du[i];
            const double lambda_try = res.lambda + t * dlambda;
            const double try_merit = merit(u_try, lambda_try);
            if (std::isfinite(try_merit) && try_merit < res_merit) {
                res.u = std::move(u_try);
                res.lambda = lambda_try;
                res_merit = try_merit;
                res_norm = residual_norm(res.u, res.lambda);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            throw SolverError("solve_hjb_given_m: line search stalled at residual " +
                              std::to_string(res_norm));
        }
    }
    if (res_norm <= std::max(cfg.newton_tol, noise_floor(res.u, res.lambda))) {
        res.newton_iterations = cfg.max_newton;
        res.residual = res_norm;
        return res;
    }
    throw SolverError("solve_hjb_given_m: Newton did not converge, residual " +
                      std::to_string(res_norm));
}

/// Damped Picard iteration: HJB solve against the current density, damped
/// value and density updates, Gibbs closed form for the density. Stops when
/// the successive-iterate max-norm change of both u and m drops below
/// picard_tol.
inline Solution solve_picard(const CostModel& cost, const Grid& g, const Config& cfg) {
    validate(cfg);
    const CostModel c = (cfg.epsilon > 0.0) ? regularize(cost, cfg.epsilon, g.measure) : cost;
    const double omega = cfg.damping;

    ScalarField m(g.n, 1.0 / g.measure);
    ScalarField u(g.n, 0.0);
    double lambda = 0.0;
    int iterations = 0;
    double change = std::numeric_limits<double>::infinity();

    for (int l = 1; l <= cfg.max_picard; ++l) {
        const HjbResult hjb = solve_hjb_given_m(c, m, cfg, g);
        ScalarField u_new(g.n), m_new(g.n);
        for (std::size_t i = 0; i < g.n; ++i) {
            u_new[i] = omega * u[i] + (1.0 - omega) * hjb.u[i];
        }
        const GibbsDensity gd = gibbs_density(u_new, cfg.sigma, g);
        for (std::size_t i = 0; i < g.n; ++i) {
            m_new[i] = omega * m[i] + (1.0 - omega) * gd.m[i];
        }
        change = std::max(max_abs_diff(u_new, u), max_abs_diff(m_new, m));
        u = std::move(u_new);
        m = std::move(m_new);
        lambda = hjb.lambda;
        iterations = l;
        if (change <= cfg.picard_tol) break;
    }
    if (change > cfg.picard_tol) {
        throw SolverError("solve_picard: no convergence after " +
                          std::to_string(cfg.max_picard) + " iterations (last change " +
                          std::to_string(change) + "); a damping weight closer to 1 may help");
    }

    Solution sol;
    const GibbsDensity gd = gibbs_density(u, cfg.sigma, g);
    sol.m = gd.m;
    sol.Z = gd.Z;
    sol.u = u;
    sol.lambda = lambda;
    sol.iterations = iterations;
    sol.hjb_residual = hjb_residual(c, sol.u, sol.lambda, sol.m, cfg.sigma, g);
    sol.fpe_residual = divergence_flux_residual(sol.m, gradient(sol.u, g), cfg.sigma, g);
    sol.mass_residual = std::abs(integrate(sol.m, g) - 1.0);
    sol.u_mean_residual = std::abs(integrate(sol.u, g));
    return sol;
}

struct UlzResult {
    ScalarField u;
    int newton_iterations = 0;
    double residual = 0.0;
    bool within_value_bounds = true;
};

namespace detail {

// Largest density threshold with h(x, m) <= lambda uniformly in x, and the
// smallest with h(x, m) >= lambda uniformly in x (the Lemma constants M1,
// M2 behind the constant sub/super-solutions). Returns 0 or +inf when the
// threshold does not exist inside the congestion domain.
inline double threshold_below(const CostModel& c, double lambda, const Grid& g) {
    const double inf = std::numeric_limits<double>::infinity();
    auto h_max = [&](double m) {
        double hi = -inf;
        for (double x : g.nodes) hi = std::max(hi, c.eval(x, m));
        return hi;
    };
    const bool bounded = std::isfinite(c.m_sup);
    double a = bounded ? 0.5 * c.m_sup : 1.0;
    int k = 0;
    while (h_max(a) > lambda) {
        a *= 0.5;
        if (++k > 1100) return 0.0;
    }
    double b = a;
    k = 0;
    while (h_max(b) <= lambda) {
        b = bounded ? 0.5 * (b + c.m_sup) : 2.0 * b;
        if (++k > 1100) return inf;
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        if (h_max(mid) <= lambda) a = mid; else b = mid;
    }
    return a;
}

inline double threshold_above(const CostModel& c, double lambda, const Grid& g) {
    const double inf = std::numeric_limits<double>::infinity();
    auto h_min = [&](double m) {
        double lo = inf;
        for (double x : g.nodes) lo = std::min(lo, c.eval(x, m));
        return lo;
    };
    const bool bounded = std::isfinite(c.m_sup);
    double b = bounded ? 0.5 * c.m_sup : 1.0;
    int k = 0;
    while (h_min(b) < lambda) {
        b = bounded ? 0.5 * (b + c.m_sup) : 2.0 * b;
        if (++k > 1100) return inf;
    }
    double a = b;
    k = 0;
    while (h_min(a) >= lambda) {
        a *= 0.5;
        if (++k > 1100) return 0.0;
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        if (h_min(mid) >= lambda) b = mid; else a = mid;
    }
    return b;
}

// Damped Newton for the semilinear Neumann problem
//   -(sigma^2/2) u'' + |u'|^2/2 - h(x, (1/Z) e^{-2u/sigma^2}) + lambda = 0.
// The congestion coupling contributes (2/sigma^2) m dh/dm >= 0 to the
// Jacobian diagonal. Cold starts use the constant lower barrier
// u = min(-(sigma^2/2) log(Z M2), 0): at that level the congestion
// coupling is engaged by construction, whereas starting at u = 0 can leave
// dh/dm zero to machine precision (density 1/Z deep in the cost's flat
// region) and the Jacobian exactly singular. The start is also floored so a
// bounded congestion domain is never left.
inline UlzResult ulz_solve_from(const CostModel& c, double lambda, double Z,
                                const Config& cfg, const Grid& g, ScalarField u) {
    const std::size_t n = g.n;
    const double s2 = cfg.sigma * cfg.sigma;
    const double two_over_s2 = 2.0 / s2;
    if (std::isfinite(c.m_sup)) {
        // Keep the Gibbs density of the start strictly inside the domain.
        const double u_floor = -0.5 * s2 * std::log(Z * c.m_sup * (1.0 - 1e-9));
        for (double& ui : u) ui = std::max(ui, u_floor);
    }

    ScalarField m(n), h(n), rows, extra(n);
    auto refresh = [&](const ScalarField& uu) {
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = std::exp(-two_over_s2 * uu[i]) / Z;
            h[i] = c.eval(g.nodes[i], m[i]);
        }
    };
    auto residual_norm = [&](const ScalarField& uu) {
        refresh(uu);
        for (std::size_t i = 0; i < n; ++i) {
            // An underflowed density means the iterate escaped to the
            // degenerate flat region of the cost; reject it even when h
            // stays finite there (barrier and power-law costs do).
            if (!std::isfinite(h[i]) || m[i] <= 0.0) {
                return std::numeric_limits<double>::infinity();
            }
        }
        hjb_rows(uu, h, lambda, cfg.sigma, g, rows);
        return max_abs(rows);
    };
    auto merit = [&](const ScalarField& uu) {
        const double r = residual_norm(uu);
        if (!std::isfinite(r)) return r;
        return sum_squares(rows);
    };
    // Best residual representable in double precision at the iterate: the
    // second difference amplifies value rounding by sigma^2/dx^2, and near a
    // congestion pole the h term amplifies it by m dh/dm. Barrier-hugging
    // states (bracket-endpoint probes force the density against the wall)
    // sit above a fixed newton_tol, so the stop tolerance adapts to this
    // floor. The cap matters: an intermediate iterate pressed into the pole
    // would otherwise inflate the floor enough to accept a non-solution.
    // Assumes refresh(u) ran for the current iterate.
    const double eps = std::numeric_limits<double>::epsilon();
    auto noise_floor = [&](const ScalarField& uu) {
        double umax = 0.0;
        for (double v : uu) umax = std::max(umax, std::abs(v));
        double worst = 4.0 * (s2 / (g.dx * g.dx)) * umax;
        for (std::size_t i = 0; i < n; ++i) {
            const double dm = c.d_m(g.nodes[i], m[i]);
            if (std::isfinite(dm)) {
                worst = std::max(worst, m[i] * dm * (1.0 + two_over_s2 * std::abs(uu[i])) +
                                            std::abs(h[i]));
            }
        }
        return std::min(8.0 * eps * (worst + std::abs(lambda)),
                        1e-6 * (1.0 + std::abs(lambda)));
    };

    std::vector<double> lower, diag, upper, rhs, du;
    double res_norm = residual_norm(u);
    double res_merit = std::isfinite(res_norm) ? sum_squares(rows)
                                               : std::numeric_limits<double>::infinity();
    if (!std::isfinite(res_norm)) {
        throw SolverError("solve_u_lambda_Z: infeasible initial iterate (Z = " +
                          std::to_string(Z) + ")");
    }
    UlzResult out;
    for (int it = 0; it < cfg.max_newton; ++it) {
        refresh(u);
        if (res_norm <= std::max(cfg.newton_tol, noise_floor(u))) {
            out.u = std::move(u);
            out.newton_iterations = it;
            out.residual = res_norm;
            return out;
        }
        refresh(u);
        hjb_rows(u, h, lambda, cfg.sigma, g, rows);
        for (std::size_t i = 0; i < n; ++i) {
            extra[i] = two_over_s2 * m[i] * c.d_m(g.nodes[i], m[i]);
            if (!std::isfinite(extra[i])) extra[i] = 0.0;
        }
        hjb_jacobian(u, cfg.sigma, g, extra, lower, diag, upper);
        rhs.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) rhs[i] = -rows[i];
        if (!brsmfg::detail::solve_tridiagonal(lower, diag, upper, rhs, du)) {
            throw SolverError("solve_u_lambda_Z: singular Jacobian (cost may not be "
                              "strictly increasing; try epsilon regularization)");
        }

        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls <= 30; ++ls) {
            ScalarField u_try(n);
            for (std::size_t i = 0; i < n; ++i) u_try[i] = u[i] + t * du[i];
            const double try_merit = merit(u_try);
            if (std::isfinite(try_merit) && try_merit < res_merit) {
                u = std::move(u_try);
                res_merit = try_merit;
                res_norm = residual_norm(u);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            throw SolverError("solve_u_lambda_Z: line search stalled at residual " +
                              std::to_string(res_norm) + " (lambda = " +
                              std::to_string(lambda) + ", Z = " + std::to_string(Z) + ")");
        }
    }
    refresh(u);
    if (res_norm <= std::max(cfg.newton_tol, noise_floor(u))) {
        out.u = std::move(u);
        out.newton_iterations = cfg.max_newton;
        out.residual = res_norm;
        return out;
    }
    throw SolverError("solve_u_lambda_Z: Newton did not converge (lambda = " +
                      std::to_string(lambda) + ", Z = " + std::to_string(Z) +
                      ", residual " + std::to_string(res_norm) + ")");
}

// Constant iterate at the Lemma's lower barrier; the congestion term is
// engaged there by construction.
inline ScalarField engagement_start(const CostModel& c, double lambda, double Z,
                                    const Config& cfg, const Grid& g) {
    double u0 = 0.0;
    const double m2 = threshold_above(c, lambda, g);
    if (m2 > 0.0 && std::isfinite(m2)) {
        u0 = std::min(-0.5 * cfg.sigma * cfg.sigma * std::log(Z * m2), 0.0);
    }
    return ScalarField(g.n, u0);
}

inline UlzResult ulz_solve(const CostModel& c, double lambda, double Z, const Config& cfg,
                           const Grid& g, const ScalarField* warm_start = nullptr) {
    if (!(Z > 0.0)) throw ConfigError("solve_u_lambda_Z: require Z > 0");
    if (warm_start) {
        // A stale warm start can steer Newton into a degenerate region
        // (e.g. the Jacobian losing its congestion coupling); fall back to
        // the engagement iterate before reporting failure.
        try {
            return ulz_solve_from(c, lambda, Z, cfg, g, *warm_start);
        } catch (const SolverError&) {
        }
    }
    return ulz_solve_from(c, lambda, Z, cfg, g, engagement_start(c, lambda, Z, cfg, g));
}

}  // namespace detail

/// Constant sub/super-solutions for the semilinear problem at (lambda, Z):
/// u_bar = max(-(sigma^2/2) log(Z M1), 0) with h(x, m) <= lambda for m <= M1,
/// u_low = min(-(sigma^2/2) log(Z M2), 0) with h(x, m) >= lambda for m >= M2.
/// Returns (-inf, +inf) components when the corresponding threshold does not
/// exist inside the congestion domain.
inline std::pair<double, double> value_bounds(const CostModel& c, double lambda, double Z,
                                              double sigma, const Grid& g) {
    const double inf = std::numeric_limits<double>::infinity();
    const double half_s2 = 0.5 * sigma * sigma;
    const double m1 = detail::threshold_below(c, lambda, g);
    const double m2 = detail::threshold_above(c, lambda, g);
    double upper = inf;
    double lower = -inf;
    if (m1 > 0.0 && std::isfinite(m1)) upper = std::max(-half_s2 * std::log(Z * m1), 0.0);
    if (m2 > 0.0 && std::isfinite(m2)) lower = std::min(-half_s2 * std::log(Z * m2), 0.0);
    return {lower, upper};
}

/// Solve the semilinear problem at fixed (lambda, Z) and check the result
/// against the constant sub/super-solution sandwich.
inline UlzResult solve_u_lambda_Z(const CostModel& c, double lambda, double Z,
                                  const Config& cfg, const Grid& g) {
    validate(cfg);
    UlzResult out = detail::ulz_solve(c, lambda, Z, cfg, g);
    const auto [lo, hi] = value_bounds(c, lambda, Z, cfg.sigma, g);
    double u_min = std::numeric_limits<double>::infinity(), u_max = -u_min;
    for (double v : out.u) {
        u_min = std::min(u_min, v);
        u_max = std::max(u_max, v);
    }
    const double band = 1e-8 * (1.0 + std::abs(lo) + std::abs(hi));
    out.within_value_bounds = (u_min >= lo - band) && (u_max <= hi + band);
    return out;
}

namespace detail {

struct LambdaSolve {
    double lambda = 0.0;
    ScalarField u;
    int solves = 0;
};

// Root of I1(lambda; Z) = integral of u_{lambda,Z}, strictly decreasing in
// lambda. The bracket is anchored at the proposition's endpoints
// [min_x h(x, 1/Z), max_x h(x, 1/Z)] (clamped to a feasible density when
// 1/Z leaves a bounded congestion domain). The high end is evaluated first
// and grown upward if its sign is wrong; the I1 >= 0 end is then reached by
// warm-started continuation walking downward, because cold solves far below
// the root sit in the cost's flat region where the Newton solve degenerates.
// The final iterate is shifted to zero mean, which perturbs the PDE residual
// by at most the congestion coupling times the shift.
inline LambdaSolve lambda_solve(const CostModel& c, double Z, const Config& cfg,
                                const Grid& g) {
    if (!(Z > 0.0)) throw ConfigError("lambda_of_Z: require Z > 0");
    LambdaSolve out;
    double m_at = 1.0 / Z;
    if (std::isfinite(c.m_sup)) m_at = std::min(m_at, 0.5 * c.m_sup);
    double lam_lo = std::numeric_limits<double>::infinity(), lam_hi = -lam_lo;
    for (double x : g.nodes) {
        const double h = c.eval(x, m_at);
        lam_lo = std::min(lam_lo, h);
        lam_hi = std::max(lam_hi, h);
    }

    auto snap_zero_mean = [&](ScalarField& u) {
        const double shift = integrate(u, g) / g.measure;
        for (double& v : u) v -= shift;
    };

    if (lam_hi - lam_lo <= 1e-13 * (1.0 + std::abs(lam_lo))) {
        const double lam = 0.5 * (lam_lo + lam_hi);
        UlzResult r = ulz_solve(c, lam, Z, cfg, g);
        ++out.solves;
        snap_zero_mean(r.u);
        out.lambda = lam;
        out.u = std::move(r.u);
        return out;
    }

    ScalarField warm;
    auto eval_I1 = [&](double lam) {
        UlzResult r = ulz_solve(c, lam, Z, cfg, g, warm.empty() ? nullptr : &warm);
        ++out.solves;
        warm = r.u;
        return std::pair<double, ScalarField>(integrate(r.u, g), std::move(r.u));
    };

    // I1 <= 0 end, growing upward if needed.
    double lam_neg = lam_hi;
    auto [i_neg, u_neg] = eval_I1(lam_neg);
    {
        double width = std::max(1.0, lam_hi - lam_lo);
        int grow = 0;
        while (i_neg > cfg.bisect_tol) {
            lam_neg += width;
            width *= 2.0;
            std::tie(i_neg, u_neg) = eval_I1(lam_neg);
            if (++grow > 60) {
                throw SolverError("lambda_of_Z: cannot establish I1 <= 0 end (Z = " +
                                  std::to_string(Z) + ")");
            }
        }
    }

    // I1 >= 0 end by continuation downward.
    double lam_pos = lam_neg;
    double i_pos = i_neg;
    ScalarField u_pos = u_neg;
    {
        double step = std::max((lam_neg - lam_lo) / 8.0,
                               1e-6 * (1.0 + std::abs(lam_neg)));
        const double span_limit = 1e6 * (1.0 + lam_neg - lam_lo);
        int walked = 0;
        while (i_pos < 0.0) {
            const double cand = lam_pos - step;
            bool ok = true;
            std::pair<double, ScalarField> probe;
            try {
                probe = eval_I1(cand);
            } catch (const SolverError&) {
                ok = false;
                warm = u_pos;  // failed probe must not poison the warm start
            }
            if (!ok) {
                step *= 0.5;
                if (step <= 64.0 * std::numeric_limits<double>::epsilon() *
                                (1.0 + std::abs(lam_pos))) {
                    throw SolverError("lambda_of_Z: inner solves fail before I1 >= 0 "
                                      "(Z = " + std::to_string(Z) + ")");
                }
                continue;
            }
            if (probe.first >= 0.0) {
                lam_neg = lam_pos;
                i_neg = i_pos;
                u_neg = u_pos;
                lam_pos = cand;
                i_pos = probe.first;
                u_pos = std::move(probe.second);
                break;
            }
            lam_pos = cand;
            i_pos = probe.first;
            u_pos = std::move(probe.second);
            if (lam_neg - lam_pos > span_limit || ++walked > 400) {
                throw SolverError("lambda_of_Z: cannot establish I1 >= 0 end (Z = " +
                                  std::to_string(Z) + ")");
            }
            step = std::min(step * 1.5, std::max(1.0, lam_neg - lam_lo));
        }
    }

    double lam = lam_pos;
    ScalarField u_best = u_pos;
    double i_best = i_pos;
    if (std::abs(i_neg) < std::abs(i_best)) {
        lam = lam_neg;
        u_best = u_neg;
        i_best = i_neg;
    }
    for (int it = 0; it < 200; ++it) {
        if (std::abs(i_best) <= cfg.bisect_tol) break;
        if (lam_neg - lam_pos <= 8.0 * std::numeric_limits<double>::epsilon() *
                                     std::max(1.0, std::max(std::abs(lam_pos), std::abs(lam_neg)))) {
            break;
        }
        const double mid = 0.5 * (lam_pos + lam_neg);
        auto [i_mid, u_mid] = eval_I1(mid);
        if (std::abs(i_mid) < std::abs(i_best)) {
            lam = mid;
            u_best = u_mid;
            i_best = i_mid;
        }
        if (i_mid > 0.0) lam_pos = mid; else lam_neg = mid;
    }
    snap_zero_mean(u_best);
    out.lambda = lam;
    out.u = std::move(u_best);
    return out;
}

}  // namespace detail

/// The unique lambda(Z) making the solution of the semilinear problem
/// integrate to zero; strictly decreasing in Z.
inline double lambda_of_Z(const CostModel& c, double Z, const Config& cfg, const Grid& g) {
    validate(cfg);
    return detail::lambda_solve(c, Z, cfg, g).lambda;
}

/// I1(lambda; Z) = integral of u_{lambda,Z} over Omega.
inline double value_integral(const CostModel& c, double lambda, double Z,
                             const Config& cfg, const Grid& g) {
    validate(cfg);
    return integrate(detail::ulz_solve(c, lambda, Z, cfg, g).u, g);
}

/// I2(Z) = integral of (1/Z) e^{-2 u_{lambda(Z),Z}/sigma^2}; strictly
/// decreasing in Z, equal to one exactly at the equilibrium normalizer.
inline double gibbs_mass(const CostModel& c, double Z, const Config& cfg, const Grid& g) {
    validate(cfg);
    const detail::LambdaSolve ls = detail::lambda_solve(c, Z, cfg, g);
    const double two_over_s2 = 2.0 / (cfg.sigma * cfg.sigma);
    ScalarField e(g.n);
    for (std::size_t i = 0; i < g.n; ++i) e[i] = std::exp(-two_over_s2 * ls.u[i]) / Z;
    return integrate(e, g);
}

/// Nested intermediate-value solver: outer bisection on Z for I2(Z) = 1,
/// with lambda(Z) resolved by the inner bisection at every probe. The
/// bracket for Z is grown geometrically from |Omega| until I2 straddles one;
/// I2 is strictly decreasing, so the scan terminates whenever an equilibrium
/// exists in the scanned range.
inline Solution solve_nested(const CostModel& cost, const Grid& g, const Config& cfg) {
    validate(cfg);
    const CostModel c = (cfg.epsilon > 0.0) ? regularize(cost, cfg.epsilon, g.measure) : cost;
    const double two_over_s2 = 2.0 / (cfg.sigma * cfg.sigma);

    int total_solves = 0;
    struct Probe {
        double Z = 0.0;
        double i2 = 0.0;
        double lambda = 0.0;
        ScalarField u;
    };
    auto eval = [&](double Z) {
        detail::LambdaSolve ls = detail::lambda_solve(c, Z, cfg, g);
        total_solves += ls.solves;
        ScalarField e(g.n);
        for (std::size_t i = 0; i < g.n; ++i) e[i] = std::exp(-two_over_s2 * ls.u[i]) / Z;
        Probe p;
        p.Z = Z;
        p.i2 = integrate(e, g);
        p.lambda = ls.lambda;
        p.u = std::move(ls.u);
        return p;
    };

    Probe best = eval(g.measure);
    double z_lo = g.measure, z_hi = g.measure;
    Probe lo_probe = best, hi_probe = best;
    int grow = 0;
    while (hi_probe.i2 > 1.0) {
        z_hi *= 2.0;
        try {
            hi_probe = eval(z_hi);
        } catch (const SolverError&) {
            throw SolverError("solve_nested: upward Z scan failed near Z = " +
                              std::to_string(z_hi) + " (assumptions violated numerically?)");
        }
        if (std::abs(hi_probe.i2 - 1.0) < std::abs(best.i2 - 1.0)) best = hi_probe;
        if (++grow > 60) throw SolverError("solve_nested: cannot bracket I2(Z) = 1 from above");
    }
    grow = 0;
    while (lo_probe.i2 < 1.0) {
        z_lo *= 0.5;
        try {
            lo_probe = eval(z_lo);
        } catch (const SolverError&) {
            throw SolverError("solve_nested: downward Z scan failed near Z = " +
                              std::to_string(z_lo) + " (assumptions violated numerically?)");
        }
        if (std::abs(lo_probe.i2 - 1.0) < std::abs(best.i2 - 1.0)) best = lo_probe;
        if (++grow > 60) throw SolverError("solve_nested: cannot bracket I2(Z) = 1 from below");
    }

    for (int it = 0; it < 200; ++it) {
        if (std::abs(best.i2 - 1.0) <= cfg.bisect_tol) break;
        if (z_hi - z_lo <= 8.0 * std::numeric_limits<double>::epsilon() * z_hi) break;
        const Probe mid = eval(0.5 * (z_lo + z_hi));
        if (std::abs(mid.i2 - 1.0) < std::abs(best.i2 - 1.0)) best = mid;
        if (mid.i2 > 1.0) z_lo = mid.Z; else z_hi = mid.Z;
    }

    Solution sol;
    const GibbsDensity gd = gibbs_density(best.u, cfg.sigma, g);
    sol.m = gd.m;
    sol.Z = gd.Z;
    sol.u = best.u;
    sol.lambda = best.lambda;
    sol.iterations = total_solves;
    sol.hjb_residual = hjb_residual(c, sol.u, sol.lambda, sol.m, cfg.sigma, g);
    sol.fpe_residual = divergence_flux_residual(sol.m, gradient(sol.u, g), cfg.sigma, g);
    sol.mass_residual = std::abs(integrate(sol.m, g) - 1.0);
    sol.u_mean_residual = std::abs(integrate(sol.u, g));
    return sol;
}

/// Residual of the divergence-form Fokker-Planck equation at (m, u): the
/// density is produced by the Gibbs closed form, and this check certifies
/// that it also solves the PDE the closed form replaced.
inline double fpe_cross_check(const Solution& sol, const Config& cfg, const Grid& g) {
    return divergence_flux_residual(sol.m, gradient(sol.u, g), cfg.sigma, g);
}

}  // namespace brsmfg::mfg
