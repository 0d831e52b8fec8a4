#pragma once

#include <cmath>
#include <limits>

#include "brsmfg/errors.hpp"

namespace brsmfg::analytic {

inline constexpr double kPi = 3.14159265358979323846;

/// Closed-form stationary equilibrium of the mean field game with cost
/// h(x, m) = beta*x^2 + log m on the whole line:
///   m(x) = sqrt(a/pi) * exp(-a x^2),   u(x) = b x^2.
/// No boundary conditions or zero-mean constraint apply on R, so lambda here
/// follows the whole-line convention and is not comparable with the
/// bounded-domain ergodic constant.
struct QuadraticMfgSolution {
    double a = 0.0;         ///< density exponent rate
    double b = 0.0;         ///< value coefficient
    double lambda = 0.0;    ///< whole-line ergodic constant
    double variance = 0.0;  ///< 1/(2a) for a > 0
    bool normalizable = false;
};

inline QuadraticMfgSolution mfg_quadratic(double beta, double sigma) {
    if (beta < 0.0 || sigma < 0.0) {
        throw ConfigError("mfg_quadratic: require beta >= 0 and sigma >= 0");
    }
    if (beta == 0.0 && sigma == 0.0) {
        throw ConfigError("mfg_quadratic: beta = sigma = 0 has no normalizable density");
    }
    QuadraticMfgSolution s;
    if (sigma == 0.0) {
        s.a = beta;
        s.b = 0.0;
    } else {
        const double s2 = sigma * sigma;
        const double s4 = s2 * s2;
        const double root = std::sqrt(1.0 + 2.0 * s4 * beta);
        s.a = 2.0 * beta / (1.0 + root);  // == (root - 1)/s4, cancellation-free
        s.b = 0.5 * s.a * s2;
    }
    s.normalizable = s.a > 0.0;
    s.variance = s.normalizable ? 1.0 / (2.0 * s.a)
                                : std::numeric_limits<double>::infinity();
    // From substituting (m, u) into the stationary system: the constant term
    // balances when lambda = (1/2) log(pi/a) - sigma^2 b.
    const double s2 = sigma * sigma;
    s.lambda = 0.5 * std::log(kPi / s.a) - s2 * s.b;
    return s;
}

/// Variance a2 = (2 + sigma^2)/(4 beta) of the Gaussian solving the
/// stationary best-reply equation with the same quadratic-plus-log cost.
inline double brs_quadratic(double beta, double sigma) {
    if (!(beta > 0.0)) throw ConfigError("brs_quadratic: require beta > 0");
    if (!(sigma > 0.0)) throw ConfigError("brs_quadratic: require sigma > 0");
    const double s2 = sigma * sigma;
    return (2.0 + s2) / (4.0 * beta);
}

struct ComparisonRecord {
    double a1 = 0.0;     ///< MFG variance
    double a2 = 0.0;     ///< BRS variance
    double ratio = 0.0;  ///< a2/a1
    double beta = 0.0;
    double sigma2 = 0.0;
};

/// Variances of the two quadratic-plus-log equilibria and their ratio.
/// a1 uses the conjugate-rationalized form (1 + sqrt(1 + 2 sigma^4 beta))/(4 beta),
/// which stays accurate as sigma^2 -> 0 where the naive quotient cancels.
inline ComparisonRecord variance_ratio(double beta, double sigma2) {
    if (!(beta > 0.0) || !(sigma2 > 0.0)) {
        throw ConfigError("variance_ratio: require beta > 0 and sigma2 > 0");
    }
    const double root = std::sqrt(1.0 + 2.0 * sigma2 * sigma2 * beta);
    ComparisonRecord r;
    r.beta = beta;
    r.sigma2 = sigma2;
    r.a1 = (1.0 + root) / (4.0 * beta);
    r.a2 = (2.0 + sigma2) / (4.0 * beta);
    r.ratio = (2.0 + sigma2) / (1.0 + root);
    return r;
}

/// The four closed-form limits of the variance ratio a2/a1.
struct RatioLimits {
    double sigma2_to_zero = 0.0;      ///< lim_{sigma^2->0} a2/a1 = 1
    double sigma2_to_inf = 0.0;       ///< lim_{sigma^2->inf} a2/a1 = (2 beta)^{-1/2}
    double beta_to_zero = 0.0;        ///< lim_{beta->0} a2/a1 = 1 + sigma^2/2
    double beta_to_inf_scaled = 0.0;  ///< lim_{beta->inf} sqrt(2 beta) a2/a1 = (2+sigma^2)/sigma^2
};

inline RatioLimits ratio_limits(double beta, double sigma2) {
    RatioLimits l;
    l.sigma2_to_zero = 1.0;
    l.sigma2_to_inf = (beta > 0.0) ? 1.0 / std::sqrt(2.0 * beta)
                                   : std::numeric_limits<double>::infinity();
    l.beta_to_zero = 1.0 + 0.5 * sigma2;
    l.beta_to_inf_scaled = (sigma2 > 0.0) ? (2.0 + sigma2) / sigma2
                                          : std::numeric_limits<double>::infinity();
    return l;
}

/// Large-m_max Taylor limits for the barrier cost 1/(m_max - m) + beta*x^2:
/// both models tend to Gaussians; the reported variances and their ratio 1/2
/// are the closed forms of that formal expansion.
struct BarrierAsymptotics {
    double brs_variance = 0.0;  ///< sigma^2/(4 beta)
    double mfg_variance = 0.0;  ///< sigma^2/(2 beta)
    double ratio = 0.5;
};

inline BarrierAsymptotics barrier_asymptotics(double beta, double sigma2) {
    if (!(beta > 0.0) || !(sigma2 > 0.0)) {
        throw ConfigError("barrier_asymptotics: require beta > 0 and sigma2 > 0");
    }
    BarrierAsymptotics b;
    b.brs_variance = sigma2 / (4.0 * beta);
    b.mfg_variance = sigma2 / (2.0 * beta);
    b.ratio = 0.5;
    return b;
}

}  // namespace brsmfg::analytic
