#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace brsmfg::detail {

/// Thomas algorithm for a tridiagonal system. lower/upper have size n-1,
/// diag and rhs size n. Returns false on a vanishing pivot.
inline bool solve_tridiagonal(const std::vector<double>& lower,
                              const std::vector<double>& diag,
                              const std::vector<double>& upper,
                              const std::vector<double>& rhs,
                              std::vector<double>& x) {
    const std::size_t n = diag.size();
    std::vector<double> c(n, 0.0), d(n, 0.0);
    double pivot = diag[0];
    if (pivot == 0.0 || !std::isfinite(pivot)) return false;
    c[0] = upper.empty() ? 0.0 : upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for (std::size_t i = 1; i < n; ++i) {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if (pivot == 0.0 || !std::isfinite(pivot)) return false;
        c[i] = (i + 1 < n) ? upper[i] / pivot : 0.0;
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    x.assign(n, 0.0);
    x[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    return true;
}

}  // namespace brsmfg::detail
