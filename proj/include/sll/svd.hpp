#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sll/errors.hpp"
#include "sll/matrix.hpp"
#include "sll/rng.hpp"

namespace sll {

/// Thin SVD of an m x n matrix: u (m x k) and v (n x k) with orthonormal
/// columns, sigma sorted non-increasing, k = min(m, n).
struct SvdFactors {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;

    Matrix reconstruct() const {
        Matrix scaled_u = u;
        for (int j = 0; j < u.cols(); ++j) {
            for (int i = 0; i < u.rows(); ++i) scaled_u(i, j) *= sigma[static_cast<std::size_t>(j)];
        }
        return matmul(scaled_u, transpose(v));
    }
};

namespace detail {

// Orthonormal replacement for a numerically-dead column: Gram-Schmidt of
// canonical basis vectors against every column already in place.
inline void complete_column(Matrix& u, int col) {
    const int m = u.rows();
    for (int cand = 0; cand < m; ++cand) {
        std::vector<double> e(static_cast<std::size_t>(m), 0.0);
        e[static_cast<std::size_t>(cand)] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (int j = 0; j < u.cols(); ++j) {
                if (j == col) continue;
                double proj = 0.0;
                for (int i = 0; i < m; ++i) proj += e[static_cast<std::size_t>(i)] * u(i, j);
                for (int i = 0; i < m; ++i) e[static_cast<std::size_t>(i)] -= proj * u(i, j);
            }
        }
        const double n = norm2(e);
        if (n > 0.5) {
            for (int i = 0; i < m; ++i) u(i, col) = e[static_cast<std::size_t>(i)] / n;
            return;
        }
    }
    throw NumericError("svd_thin: failed to complete orthonormal basis");
}

// One-sided Jacobi on the columns of a (rows >= cols assumed by caller).
// Returns the accumulated right rotations in v; a's columns end mutually
// orthogonal up to tol (relative).
inline int jacobi_sweeps(Matrix& a, Matrix& v, int max_sweeps, double tol, double& residual) {
    const int n = a.cols();
    const int m = a.rows();
    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                const double denom = std::sqrt(alpha * beta);
                if (denom == 0.0 || gamma == 0.0) continue;
                const double rel = std::abs(gamma) / denom;
                off = std::max(off, rel);
                if (rel <= tol) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (int i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        residual = off;
        if (off <= tol) return sweep;
    }
    return -1;
}

} // namespace detail

/// Thin SVD via one-sided Jacobi. Deterministic; U-column signs are fixed so
/// the largest-magnitude entry of each column is positive.
inline SvdFactors svd_thin(const Matrix& m, int max_sweeps = 60, double tol = 1e-12) {
    if (m.empty()) throw std::invalid_argument("svd_thin: empty matrix");
    if (!m.all_finite()) throw std::invalid_argument("svd_thin: matrix has non-finite entries");
    const int k = std::min(m.rows(), m.cols());
    if (k > 512) throw std::invalid_argument("svd_thin: dimensions beyond supported scale");

    const bool transposed = m.rows() < m.cols();
    Matrix a = transposed ? transpose(m) : m;
    Matrix rot = Matrix::identity(a.cols());

    double residual = 0.0;
    const int sweeps = detail::jacobi_sweeps(a, rot, max_sweeps, tol, residual);
    if (sweeps < 0) {
        throw NumericError("svd_thin: no convergence after " + std::to_string(max_sweeps) +
                           " sweeps, off-diagonal residual " + std::to_string(residual));
    }

    // Column norms are the singular values; sort descending.
    const int n = a.cols();
    std::vector<double> sig(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
        sig[static_cast<std::size_t>(j)] = std::sqrt(s);
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return sig[static_cast<std::size_t>(x)] > sig[static_cast<std::size_t>(y)];
    });

    Matrix left(a.rows(), n);
    Matrix right(rot.rows(), n);
    std::vector<double> sigma(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        const int src = order[static_cast<std::size_t>(j)];
        const double s = sig[static_cast<std::size_t>(src)];
        sigma[static_cast<std::size_t>(j)] = s;
        for (int i = 0; i < rot.rows(); ++i) right(i, j) = rot(i, src);
        if (s > 0.0) {
            for (int i = 0; i < a.rows(); ++i) left(i, j) = a(i, src) / s;
        }
    }
    for (int j = 0; j < n; ++j) {
        if (sigma[static_cast<std::size_t>(j)] == 0.0) detail::complete_column(left, j);
    }

    SvdFactors f;
    f.sigma = std::move(sigma);
    if (transposed) {
        f.u = std::move(right);
        f.v = std::move(left);
    } else {
        f.u = std::move(left);
        f.v = std::move(right);
    }

    // Sign convention: largest-magnitude entry of each U column positive.
    for (int j = 0; j < f.u.cols(); ++j) {
        int arg = 0;
        double best = -1.0;
        for (int i = 0; i < f.u.rows(); ++i) {
            const double mag = std::abs(f.u(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (f.u(arg, j) < 0.0) {
            for (int i = 0; i < f.u.rows(); ++i) f.u(i, j) = -f.u(i, j);
            for (int i = 0; i < f.v.rows(); ++i) f.v(i, j) = -f.v(i, j);
        }
    }
    return f;
}

struct SigmaMaxInfo {
    double value = 0.0;
    int iters = 0;
    bool degenerate = false; // input was the zero matrix
    bool converged = false;
};

namespace detail {
// Fixed seed for the power-iteration start vector; diagnostics must be
// reproducible run to run.
inline constexpr std::uint64_t kPowerStartSeed = 0x51f7a11ce5ULL;

// Eigenpair-residual stop: once the iterate lies in the top singular subspace
// the Rayleigh-quotient error is bounded by the residual, so
// ||m^T m v - est^2 v|| <= kPowerResidualTol * est^2 keeps the singular-value
// estimate within ~1e-7 relative even when the top of the spectrum is
// clustered and the per-iteration change decays too slowly to trigger tol.
inline constexpr double kPowerResidualTol = 2e-7;
} // namespace detail

/// Leading singular value by power iteration on m^T m with a deterministic
/// seeded start vector. The zero matrix yields value 0 flagged degenerate.
inline SigmaMaxInfo sigma_max_info(const Matrix& m, int max_iters, double tol) {
    if (max_iters < 1) throw std::invalid_argument("sigma_max: max_iters must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("sigma_max: tol must be positive");
    if (m.empty()) throw std::invalid_argument("sigma_max: empty matrix");
    if (m.all_zero()) return {0.0, 0, true, true};

    Rng rng(detail::kPowerStartSeed);
    auto draw_unit = [&](int len) {
        std::vector<double> v(static_cast<std::size_t>(len));
        double n = 0.0;
        while (n == 0.0) {
            for (double& x : v) x = rng.next_gaussian();
            n = norm2(v);
        }
        for (double& x : v) x /= n;
        return v;
    };

    std::vector<double> v = draw_unit(m.cols());
    double est = 0.0, prev = -1.0;
    for (int it = 1; it <= max_iters; ++it) {
        const std::vector<double> z = matvec(m, v);
        est = norm2(z); // = ||m v|| with unit v
        const std::vector<double> w = matvec_t(m, z);
        const double wn = norm2(w);
        if (wn == 0.0) {
            // start vector fell in the null space; redraw deterministically
            v = draw_unit(m.cols());
            continue;
        }
        double residual = 0.0;
        const double est2 = est * est;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double r = w[i] - est2 * v[i];
            residual += r * r;
        }
        v = w;
        for (double& x : v) x /= wn;
        const bool stalled = prev >= 0.0 && std::abs(est - prev) <= tol * std::max(est, 1e-300);
        if (std::sqrt(residual) <= detail::kPowerResidualTol * est2 || stalled) {
            return {est, it, false, true};
        }
        prev = est;
    }
    return {est, max_iters, false, false};
}

inline double sigma_max(const Matrix& m, int max_iters = 100000, double tol = 1e-12) {
    const SigmaMaxInfo info = sigma_max_info(m, max_iters, tol);
    if (!info.converged) {
        throw NumericError("sigma_max: power iteration did not converge in " +
                           std::to_string(max_iters) + " iterations, last estimate " +
                           std::to_string(info.value));
    }
    return info.value;
}

/// max_j |<u, basis_col_j>| / ||u|| over the (unit-norm) columns of basis.
inline double max_abs_cosine(std::span<const double> u, const Matrix& basis) {
    if (static_cast<int>(u.size()) != basis.rows()) {
        throw std::invalid_argument("max_abs_cosine: length mismatch");
    }
    const double un = norm2(u);
    if (un == 0.0) throw std::invalid_argument("max_abs_cosine: zero input vector");
    double best = 0.0;
    for (int j = 0; j < basis.cols(); ++j) {
        double d = 0.0;
        for (int i = 0; i < basis.rows(); ++i) d += u[static_cast<std::size_t>(i)] * basis(i, j);
        best = std::max(best, std::abs(d) / un);
    }
    return std::min(best, 1.0);
}

} // namespace sll
