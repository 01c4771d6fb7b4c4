#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "seisforge/errors.hpp"

namespace seisforge {

using Vec = std::vector<double>;

/// Diagonal matrix (story masses).
struct DiagMat {
    Vec d;
    std::size_t size() const { return d.size(); }
};

/// Symmetric tridiagonal matrix: diag[i] on the diagonal, off[i] couples
/// rows i and i+1 (off has size n-1).
struct SymTriDiag {
    Vec diag;
    Vec off;
    std::size_t size() const { return diag.size(); }

    Vec mul(const Vec& x) const {
        const std::size_t n = diag.size();
        Vec y(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = diag[i] * x[i];
            if (i > 0) acc += off[i - 1] * x[i - 1];
            if (i + 1 < n) acc += off[i] * x[i + 1];
            y[i] = acc;
        }
        return y;
    }
};

/// Solve Ax = b for symmetric tridiagonal A in place (Thomas algorithm,
/// no pivoting; the Newmark effective matrices here are diagonally dominant).
inline Vec solve_sym_tridiag(const SymTriDiag& A, const Vec& b) {
    const std::size_t n = A.size();
    Vec c(n > 1 ? n - 1 : 0), d(n), x(n);
    double piv = A.diag[0];
    if (piv == 0.0) throw NumericalError("tridiagonal solve: zero pivot at row 0");
    if (n > 1) c[0] = A.off[0] / piv;
    d[0] = b[0] / piv;
    for (std::size_t i = 1; i < n; ++i) {
        piv = A.diag[i] - A.off[i - 1] * c[i - 1];
        if (piv == 0.0)
            throw NumericalError("tridiagonal solve: zero pivot at row " + std::to_string(i));
        if (i + 1 < n) c[i] = A.off[i] / piv;
        d[i] = (b[i] - A.off[i - 1] * d[i - 1]) / piv;
    }
    x[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
    return x;
}

/// Eigenvalues of a symmetric tridiagonal matrix, ascending: QL iteration
/// with implicit Wilkinson shifts, values only. Throws NumericalError with
/// the iteration count if any eigenvalue needs more than 50 sweeps.
inline Vec sym_tridiag_eigenvalues(Vec d, Vec e) {
    const std::size_t n = d.size();
    if (n == 0) return {};
    e.resize(n, 0.0); // e[n-1] is workspace
    for (std::size_t l = 0; l < n; ++l) {
        int iter = 0;
        std::size_t m;
        do {
            for (m = l; m + 1 < n; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= std::numeric_limits<double>::epsilon() * dd) break;
            }
            if (m != l) {
                if (iter++ == 50)
                    throw NumericalError("tridiagonal QL: no convergence after 50 iterations "
                                         "for eigenvalue " + std::to_string(l));
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                bool underflow = false;
                for (std::size_t j = m; j-- > l;) {
                    double f = s * e[j];
                    const double b = c * e[j];
                    r = std::hypot(f, g);
                    e[j + 1] = r;
                    if (r == 0.0) { // deflate: rotation annihilated early
                        d[j + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[j + 1] - p;
                    r = (d[j] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[j + 1] = g + p;
                    g = c * r - b;
                }
                if (underflow) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
    std::sort(d.begin(), d.end());
    return d;
}

/// Cholesky solve of a small dense SPD system (row-major n*n), used by the
/// Levenberg normal equations. Throws NumericalError if not positive definite.
inline Vec solve_spd_dense(std::vector<double> A, Vec b) {
    const std::size_t n = b.size();
    for (std::size_t j = 0; j < n; ++j) {
        double diag = A[j * n + j];
        for (std::size_t k = 0; k < j; ++k) diag -= A[j * n + k] * A[j * n + k];
        if (diag <= 0.0) throw NumericalError("dense Cholesky: matrix not positive definite");
        const double ljj = std::sqrt(diag);
        A[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = A[i * n + j];
            for (std::size_t k = 0; k < j; ++k) v -= A[i * n + k] * A[j * n + k];
            A[i * n + j] = v / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i) { // L y = b
        double v = b[i];
        for (std::size_t k = 0; k < i; ++k) v -= A[i * n + k] * b[k];
        b[i] = v / A[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) { // L^T x = y
        double v = b[i];
        for (std::size_t k = i + 1; k < n; ++k) v -= A[k * n + i] * b[k];
        b[i] = v / A[i * n + i];
    }
    return b;
}

inline double inf_norm(const Vec& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace seisforge
