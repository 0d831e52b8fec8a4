#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "brsmfg/cost.hpp"
#include "brsmfg/grid.hpp"

using namespace brsmfg;

TEST_CASE("quad_log evaluates h = beta x^2 + log m") {
    const CostModel c = quad_log(1.0);
    CHECK(c.eval(2.0, 1.0) == Catch::Approx(4.0));
    CHECK(c.d_m(0.0, 0.5) == Catch::Approx(2.0));
    CHECK(c.strictly_increasing);
    CHECK(std::isinf(c.m_sup));

    const CostModel c0 = quad_log(0.0);
    CHECK(c0.eval(-3.0, std::exp(1.0)) == Catch::Approx(1.0));
    CHECK(c0.eval(7.0, std::exp(1.0)) == Catch::Approx(1.0));

    CHECK_THROWS_AS(quad_log(-0.5), ConfigError);
}

TEST_CASE("power_law evaluates h = m^alpha + beta x^2") {
    const CostModel fig2 = power_law(10.0, 10.0);
    CHECK(fig2.eval(1.0, 1.0) == Catch::Approx(11.0));

    const CostModel c = power_law(2.0, 0.0);
    CHECK(c.d_m(0.3, 3.0) == Catch::Approx(6.0));

    const CostModel lin = power_law(1.0, 1.0);
    CHECK(lin.eval(0.0, 0.7) == Catch::Approx(0.7));

    CHECK_THROWS_AS(power_law(0.0, 1.0), ConfigError);
    CHECK_THROWS_AS(power_law(-2.0, 1.0), ConfigError);
}

TEST_CASE("barrier enforces m_max > 1/|Omega| and diverges at the wall") {
    const CostModel c = barrier(10.0, 1.0, 2.0);
    CHECK(c.eval(0.0, 5.0) == Catch::Approx(0.2));
    CHECK(c.m_sup == 10.0);

    CHECK_NOTHROW(barrier(1.0, 1.0, 2.0));  // 1 > 1/2
    CHECK_THROWS_AS(barrier(0.4, 1.0, 2.0), ConfigError);

    CHECK(std::isinf(c.eval(0.0, 10.0)));
    CHECK(std::isinf(c.eval(0.0, 11.0)));
    CHECK(c.d_m(0.0, 8.0) == Catch::Approx(0.25));
}

TEST_CASE("double_well potential shape") {
    const Potential even = double_well(1.0, 0.3, -0.5, 1.0, 0.3, 0.5);
    for (double x : {0.1, 0.45, 0.9, 1.3}) {
        CHECK(even.value(x) == Catch::Approx(even.value(-x)).margin(1e-15));
    }
    // Direct evaluation at a well bottom.
    const double expected = -1.0 - std::exp(-100.0 / 9.0);
    CHECK(even.value(-0.5) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(even.value(0.5) == Catch::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(double_well(0.0, 0.3, -0.5, 1.0, 0.3, 0.5), ConfigError);
    CHECK_THROWS_AS(double_well(1.0, 0.3, -0.5, 1.0, -0.3, 0.5), ConfigError);
}

TEST_CASE("potential_plus_log reduces to quad_log for F1 = x^2 and to quad_log(0) for F1 = 0") {
    Potential zero{[](double) { return 0.0; }, [](double) { return 0.0; }};
    const CostModel c0 = potential_plus_log(std::move(zero));
    const CostModel q0 = quad_log(0.0);
    Potential sq{[](double x) { return x * x; }, [](double x) { return 2.0 * x; }};
    const CostModel cq = potential_plus_log(std::move(sq));
    const CostModel q1 = quad_log(1.0);
    for (double x : {-1.0, -0.2, 0.9}) {
        for (double m : {0.1, 1.0, 4.2}) {
            CHECK(c0.eval(x, m) == Catch::Approx(q0.eval(x, m)).margin(1e-15));
            CHECK(cq.eval(x, m) == Catch::Approx(q1.eval(x, m)).margin(1e-14));
            CHECK(cq.d_x(x, m) == Catch::Approx(q1.d_x(x, m)).margin(1e-14));
            CHECK(cq.d_m(x, m) == Catch::Approx(q1.d_m(x, m)).margin(1e-15));
        }
    }
}

TEST_CASE("sampled potential_plus_log interpolates the samples") {
    const Grid g = build_grid(-1.0, 1.0, 201);
    ScalarField f1(g.n);
    for (std::size_t i = 0; i < g.n; ++i) f1[i] = std::sin(g.nodes[i]);
    const CostModel c = potential_plus_log(f1, g);
    for (std::size_t i = 0; i < g.n; i += 37) {
        CHECK(c.eval(g.nodes[i], 1.0) == Catch::Approx(f1[i]).margin(1e-12));
        CHECK(c.d_x(g.nodes[i], 1.0) == Catch::Approx(std::cos(g.nodes[i])).margin(1e-3));
    }
}

TEST_CASE("regularize adds exactly eps log(|Omega| m)") {
    const Grid g = build_grid(-1.0, 1.0, 11);
    const CostModel base = power_law(10.0, 10.0);
    const double eps = 0.1;
    const CostModel reg = regularize(base, eps, g.measure);
    for (double x : {-0.8, 0.0, 0.4}) {
        for (double m : {0.2, 0.5, 1.0, 3.0}) {
            const double diff = reg.eval(x, m) - base.eval(x, m);
            CHECK(diff == Catch::Approx(eps * std::log(g.measure * m)).margin(1e-15));
            CHECK(reg.d_m(x, m) - base.d_m(x, m) == Catch::Approx(eps / m).margin(1e-15));
        }
        // h_eps and h coincide at the uniform density.
        CHECK(reg.eval(x, 1.0 / g.measure) == Catch::Approx(base.eval(x, 1.0 / g.measure)).margin(1e-15));
    }
    // Pointwise convergence as eps -> 0.
    for (double e : {1e-2, 1e-4, 1e-8}) {
        const CostModel r = regularize(base, e, g.measure);
        CHECK(std::abs(r.eval(0.3, 0.7) - base.eval(0.3, 0.7)) <= e * 2.0);
    }
    // A cost constant in m picks up d_m = eps/m.
    CostModel flat;
    flat.eval = [](double, double) { return 1.0; };
    flat.d_m = [](double, double) { return 0.0; };
    flat.d_x = [](double, double) { return 0.0; };
    const CostModel rf = regularize(flat, 0.1, g.measure);
    CHECK(rf.d_m(0.0, 0.5) == Catch::Approx(0.1 / 0.5));
    CHECK(rf.strictly_increasing);

    CHECK_THROWS_AS(regularize(base, 0.0, g.measure), ConfigError);
    CHECK_THROWS_AS(regularize(base, -1.0, g.measure), ConfigError);
}

TEST_CASE("derivatives agree with centered differences of eval") {
    const Grid g = build_grid(-1.0, 1.0, 9);
    const std::vector<CostModel> catalog = {
        quad_log(1.0), power_law(10.0, 10.0), barrier(10.0, 1.0, g.measure),
        potential_plus_log(double_well(1.0, 0.3, -0.5, 1.0, 0.3, 0.5), "dw")};
    for (const CostModel& c : catalog) {
        for (double x : {-0.7, -0.1, 0.5}) {
            for (double m : {0.3, 0.9, 2.0}) {
                const double dm = 1e-6 * m;
                const double fd_m = (c.eval(x, m + dm) - c.eval(x, m - dm)) / (2.0 * dm);
                CHECK(c.d_m(x, m) == Catch::Approx(fd_m).epsilon(1e-6).margin(1e-9));
                const double dx = 1e-6;
                const double fd_x = (c.eval(x + dx, m) - c.eval(x - dx, m)) / (2.0 * dx);
                CHECK(c.d_x(x, m) == Catch::Approx(fd_x).epsilon(1e-6).margin(1e-6));
                CHECK(c.d_m(x, m) > 0.0);  // strictly increasing catalog
            }
        }
    }
}

TEST_CASE("validate_assumptions on the catalog") {
    const Grid g = build_grid(-1.0, 1.0, 41);

    const AssumptionReport ql = validate_assumptions(quad_log(1.0), g, 1e-4, 1e4, 25);
    CHECK(ql.monotone_ok);
    CHECK(ql.mfg_lower_ok);
    CHECK(ql.mfg_upper_ok);
    CHECK(ql.worst_violation == 0.0);

    // Decreasing cost violates monotonicity by construction.
    CostModel dec;
    dec.eval = [](double, double m) { return -m; };
    dec.d_m = [](double, double) { return -1.0; };
    dec.d_x = [](double, double) { return 0.0; };
    const AssumptionReport rd = validate_assumptions(dec, g, 1e-4, 1e4, 9);
    CHECK_FALSE(rd.monotone_ok);
    CHECK(rd.worst_violation > 0.0);

    // Barrier cost with a quadratic potential on [-1,1]: the congestion term
    // is bounded near m = 0, so the x^2 contribution dominates the window
    // check at m_lo and the lower MFG inequality genuinely fails:
    //   sup_x h(x, m_lo) ~ 1/m_max + 1  >  inf_x h(x, 1/|Omega|) ~ 1/(m_max - 1/2).
    // The upper inequality holds because h blows up at the wall.
    const AssumptionReport rb = validate_assumptions(barrier(10.0, 1.0, g.measure), g,
                                                     1e-4, 9.9, 25);
    CHECK(rb.monotone_ok);
    CHECK_FALSE(rb.mfg_lower_ok);
    CHECK(rb.mfg_upper_ok);

    // Without the potential the same barrier passes the full window check.
    const AssumptionReport rb0 = validate_assumptions(barrier(10.0, 0.0, g.measure), g,
                                                      1e-4, 9.9, 25);
    CHECK(rb0.monotone_ok);
    CHECK(rb0.mfg_lower_ok);
    CHECK(rb0.mfg_upper_ok);

    CHECK_THROWS_AS(validate_assumptions(quad_log(1.0), g, 0.7, 1e4, 9), ConfigError);
    CHECK_THROWS_AS(validate_assumptions(quad_log(1.0), g, 1e-4, 0.3, 9), ConfigError);
    CHECK_THROWS_AS(validate_assumptions(quad_log(1.0), g, 1e-4, 1e4, 1), ConfigError);
}
