#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "brsmfg/analytic.hpp"
#include "brsmfg/brs.hpp"
#include "brsmfg/cost.hpp"
#include "brsmfg/grid.hpp"

using namespace brsmfg;

namespace {

brs::Config config(double sigma) {
    brs::Config cfg;
    cfg.sigma = sigma;
    return cfg;
}

// Brute-force oracle for the pointwise fixed point: plain bisection on
// G_{Z,x}(m) = (1/Z) e^{-(2/sigma^2) h(x,m)} - m over a grown sign-change
// bracket, independent of the production solver's Newton path.
double bisection_oracle(const CostModel& c, double Z, double x, double sigma) {
    const double two_over_s2 = 2.0 / (sigma * sigma);
    auto G = [&](double m) {
        const double h = c.eval(x, m);
        if (std::isinf(h)) return -m;
        return std::exp(-two_over_s2 * h) / Z - m;
    };
    const bool bounded = std::isfinite(c.m_sup);
    double lo = bounded ? 0.25 * c.m_sup : 1.0;
    double hi = lo;
    while (G(lo) < 0.0) lo *= 0.5;
    while (G(hi) >= 0.0) hi = bounded ? 0.5 * (hi + c.m_sup) : 2.0 * hi;
    for (int it = 0; it < 500; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (G(mid) >= 0.0) lo = mid; else hi = mid;
        if (hi - lo <= 1e-16 * hi) break;
    }
    return 0.5 * (lo + hi);
}

CostModel constant_cost(double value) {
    CostModel c;
    c.eval = [value](double, double) { return value; };
    c.d_m = [](double, double) { return 0.0; };
    c.d_x = [](double, double) { return 0.0; };
    c.description = "constant";
    return c;
}

}  // namespace

TEST_CASE("pointwise_density closed forms") {
    const brs::Config cfg = config(std::sqrt(2.0));

    // h = log m, sigma^2 = 2: the fixed point satisfies m^2 = 1/Z.
    const CostModel logs = quad_log(0.0);
    CHECK(brs::pointwise_density(logs, 4.0, 0.3, cfg) == Catch::Approx(0.5).margin(1e-11));
    CHECK(brs::pointwise_density(logs, 9.0, -0.8, cfg) ==
          Catch::Approx(1.0 / 3.0).margin(1e-11));

    // Constant cost: G is affine, root (1/Z) e^{-2C/sigma^2}.
    const CostModel flat = constant_cost(0.7);
    CHECK(brs::pointwise_density(flat, 2.0, 0.0, cfg) ==
          Catch::Approx(std::exp(-0.7) / 2.0).margin(1e-12));

    CHECK_THROWS_AS(brs::pointwise_density(logs, -1.0, 0.0, cfg), ConfigError);
    brs::Config bad = cfg;
    bad.sigma = 0.0;
    CHECK_THROWS_AS(brs::pointwise_density(logs, 1.0, 0.0, bad), ConfigError);
}

TEST_CASE("pointwise_density matches the bisection oracle on the catalog") {
    const Grid g = build_grid(-1.0, 1.0, 21);
    const double sigma = std::sqrt(2.0);
    const brs::Config cfg = config(sigma);
    const std::vector<CostModel> catalog = {
        quad_log(1.0), power_law(10.0, 10.0), barrier(1.0, 1.0, g.measure),
        potential_plus_log(double_well(1.0, 0.3, -0.5, 1.0, 0.3, 0.5), "dw")};
    for (const CostModel& c : catalog) {
        for (double Z : {1.0, 2.0, 8.0}) {
            for (std::size_t i = 0; i < g.n; i += 4) {
                const double x = g.nodes[i];
                const double got = brs::pointwise_density(c, Z, x, cfg);
                const double want = bisection_oracle(c, Z, x, sigma);
                CHECK(got == Catch::Approx(want).margin(1e-10));
            }
        }
    }
}

TEST_CASE("mass map closed forms and monotonicity") {
    const Grid g = build_grid(0.0, 1.0, 51);
    const brs::Config cfg = config(std::sqrt(2.0));

    // h = log m on |Omega| = 1: Phi(Z) = Z^{-1/2} (the density is constant
    // in x, so the trapezoid rule is exact).
    const CostModel logs = quad_log(0.0);
    for (double Z : {0.25, 1.0, 4.0, 9.0}) {
        CHECK(brs::mass(logs, Z, g, cfg) == Catch::Approx(1.0 / std::sqrt(Z)).margin(1e-10));
    }

    // h constant: Phi(Z) = |Omega| e^{-2C/sigma^2} / Z (here C = 0).
    const CostModel flat = constant_cost(0.0);
    for (double Z : {0.5, 1.0, 2.0}) {
        CHECK(brs::mass(flat, Z, g, cfg) == Catch::Approx(g.measure / Z).margin(1e-11));
    }

    // Phi strictly decreasing on a geometric ladder, for two catalog costs.
    for (const CostModel& c : {quad_log(1.0), barrier(10.0, 1.0, g.measure)}) {
        double prev = brs::mass(c, 0.25, g, cfg);
        for (double Z = 0.5; Z <= 64.0; Z *= 2.0) {
            const double cur = brs::mass(c, Z, g, cfg);
            CHECK(cur < prev);
            prev = cur;
        }
    }

    // Pointwise monotonicity in Z at every node.
    const CostModel c = quad_log(1.0);
    for (std::size_t i = 0; i < g.n; i += 10) {
        const double m1 = brs::pointwise_density(c, 1.0, g.nodes[i], cfg);
        const double m2 = brs::pointwise_density(c, 3.0, g.nodes[i], cfg);
        CHECK(m2 < m1);
    }
}

TEST_CASE("mass_derivative closed form and finite-difference check") {
    const Grid g = build_grid(0.0, 1.0, 51);
    const brs::Config cfg = config(std::sqrt(2.0));

    // h = log m on |Omega| = 1: dPhi/dZ = -(1/2) Z^{-3/2}.
    const CostModel logs = quad_log(0.0);
    for (double Z : {0.5, 1.0, 4.0}) {
        CHECK(brs::mass_derivative(logs, Z, g, cfg) ==
              Catch::Approx(-0.5 * std::pow(Z, -1.5)).margin(1e-10));
    }

    // h constant: dPhi/dZ = -|Omega|/Z^2 for C = 0.
    const CostModel flat = constant_cost(0.0);
    CHECK(brs::mass_derivative(flat, 2.0, g, cfg) ==
          Catch::Approx(-g.measure / 4.0).margin(1e-11));

    // Centered-difference cross-check on catalog costs.
    for (const CostModel& c : {quad_log(1.0), power_law(10.0, 10.0),
                               barrier(10.0, 1.0, g.measure)}) {
        for (double Z : {0.7, 2.0, 5.0}) {
            const double d = 1e-6 * Z;
            const double fd = (brs::mass(c, Z + d, g, cfg) - brs::mass(c, Z - d, g, cfg)) /
                              (2.0 * d);
            CHECK(brs::mass_derivative(c, Z, g, cfg) ==
                  Catch::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("solve: uniform equilibria") {
    const brs::Config cfg = config(std::sqrt(2.0));

    // h = log m on [0,1]: Phi(Z) = Z^{-1/2} equals one only at Z = 1, m = 1.
    const Grid g1 = build_grid(0.0, 1.0, 41);
    const brs::Solution s1 = brs::solve(quad_log(0.0), g1, cfg);
    CHECK(s1.Z == Catch::Approx(1.0).margin(1e-9));
    for (double v : s1.m) CHECK(v == Catch::Approx(1.0).margin(1e-9));
    CHECK(s1.mass_residual <= cfg.outer_tol);
    CHECK(s1.pointwise_residual <= cfg.inner_tol);

    // Constant cost on [-1,1]: m = 1/|Omega|.
    const Grid g2 = build_grid(-1.0, 1.0, 41);
    const brs::Solution s2 = brs::solve(constant_cost(0.0), g2, cfg);
    CHECK(s2.Z == Catch::Approx(2.0).margin(1e-9));
    for (double v : s2.m) CHECK(v == Catch::Approx(0.5).margin(1e-10));
}

TEST_CASE("solve: truncated Gaussian matches the closed-form variance") {
    // a2 = (2 + sigma^2)/(4 beta) = 1 at beta = 1, sigma^2 = 2; the domain
    // holds more than six standard deviations so truncation is negligible.
    const double beta = 1.0, sigma = std::sqrt(2.0);
    const Grid g = build_grid(-8.0, 8.0, 401);
    const brs::Solution s = brs::solve(quad_log(beta), g, config(sigma));
    const DensityMoments mom = density_moments(s.m, g);
    CHECK(std::abs(mom.variance - 1.0) <= 0.01);
    CHECK(mom.mass == Catch::Approx(1.0).margin(1e-9));

    // Sampled analytic Gaussian, renormalized on the truncated domain.
    ScalarField exact(g.n);
    const double rate = 2.0 * beta / (2.0 + sigma * sigma);
    for (std::size_t i = 0; i < g.n; ++i) {
        exact[i] = std::exp(-rate * g.nodes[i] * g.nodes[i]);
    }
    const double mass = integrate(exact, g);
    for (double& v : exact) v /= mass;
    CHECK(max_abs_diff(s.m, exact) <= 1e-3);
}

TEST_CASE("solve: barrier keeps the density strictly below the wall") {
    const Grid g = build_grid(-1.0, 1.0, 101);
    const brs::Solution s = brs::solve(barrier(1.0, 1.0, g.measure), g, config(std::sqrt(2.0)));
    for (double v : s.m) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(s.mass_residual <= 1e-10);
}

TEST_CASE("solve: PDE residual shrinks at second order under refinement") {
    const double beta = 1.0, sigma = std::sqrt(2.0);
    auto residual_at = [&](std::size_t n) {
        const Grid g = build_grid(-6.0, 6.0, n);
        return brs::solve(quad_log(beta), g, config(sigma)).pde_residual;
    };
    const double r1 = residual_at(101);
    const double r2 = residual_at(201);
    const double r3 = residual_at(401);
    INFO("residuals " << r1 << " " << r2 << " " << r3);
    CHECK(std::log2(r1 / r2) >= 1.9);
    CHECK(std::log2(r2 / r3) >= 1.9);
}
