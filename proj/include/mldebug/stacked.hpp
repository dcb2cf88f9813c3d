#pragma once

#include <cmath>

#include "mldebug/types.hpp"

namespace mldebug {

inline constexpr double kCondMax = 1e12;   // gram condition number cutoff
inline constexpr double kProjTol = 1e-8;   // projector identity tolerance

/// Two-pool system stacked into a single regression: the clean pool rows are
/// scaled by sqrt(eta*n/m) and appended below the first pool. The residual
/// projector is represented by an orthonormal basis Q of col(X'); the dense
/// matrices are materialized on demand only (they are quadratic in n + m).
struct StackedSystem {
    Matrix X_prime;   // (n+m) x p, clean rows pre-scaled
    Vector y_prime;   // n+m
    Matrix Q;         // (n+m) x p, orthonormal columns spanning col(X')
    Vector sing;      // singular values of X_prime
    Matrix V;         // p x p right singular vectors
    Index n = 0;      // first-pool rows
    Index m = 0;      // clean-pool rows
    double scale = 0.0;  // sqrt(eta*n/m); 0 in the one-pool path

    Index p() const { return X_prime.cols(); }
    Index rows() const { return X_prime.rows(); }

    /// P_perp = I - Q Q^T, the projector onto the orthogonal complement of
    /// col(X'). Dense; intended for small systems and tests.
    Matrix p_perp() const {
        const Index N = rows();
        Matrix P = Matrix::Identity(N, N) - Q * Q.transpose();
        return P;
    }

    /// P_bar: P_perp with the last m columns deleted ((n+m) x n).
    Matrix p_bar() const { return p_perp().leftCols(n); }

    /// Diagonal entries (P_perp)_ii for the first-pool rows; these are the
    /// per-coordinate curvatures of the reformulated Lasso.
    Vector p_perp_diag_first_pool() const {
        Vector a(n);
        for (Index i = 0; i < n; ++i)
            a[i] = std::max(0.0, 1.0 - Q.row(i).squaredNorm());
        return a;
    }

    /// Applies P_perp to a vector without forming the dense projector.
    Vector apply_p_perp(const Vector& v) const { return v - Q * (Q.transpose() * v); }

    /// Least-squares solve against X': argmin_b ||X' b - v||.
    Vector solve_least_squares(const Vector& v) const {
        Vector z = Q.transpose() * v;
        for (Index j = 0; j < sing.size(); ++j) z[j] /= sing[j];
        return V * z;
    }

    /// Extends a first-pool vector with zeros for the clean rows.
    Vector extend(const Vector& gamma) const {
        Vector g = Vector::Zero(rows());
        g.head(n) = gamma;
        return g;
    }
};

namespace detail {

inline StackedSystem decompose(Matrix X_prime, Vector y_prime, Index n, Index m,
                               double scale) {
    StackedSystem sys;
    Eigen::BDCSVD<Matrix> svd(X_prime, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const Index p = X_prime.cols();
    double smin = s[p - 1], smax = s[0];
    if (smin <= 0.0 || (smax / smin) * (smax / smin) > kCondMax)
        throw SingularDesign("gram matrix numerically singular (cond > 1e12)");
    sys.X_prime = std::move(X_prime);
    sys.y_prime = std::move(y_prime);
    sys.Q = svd.matrixU();
    sys.sing = s;
    sys.V = svd.matrixV();
    sys.n = n;
    sys.m = m;
    sys.scale = scale;
    return sys;
}

}  // namespace detail

/// Builds the stacked system from the two pools. m = 0 and eta = 0 both take
/// the one-pool route over X alone.
inline StackedSystem build_stacked(const ContaminatedPool& contaminated,
                                   const CleanPool& clean) {
    contaminated.validate();
    clean.validate();
    const Index n = contaminated.n();
    if (clean.one_pool())
        return detail::decompose(contaminated.X, contaminated.y, n, 0, 0.0);

    const Index m = clean.m();
    if (clean.X.cols() != contaminated.p())
        throw Error("build_stacked: pools disagree on feature count");
    const double scale =
        std::sqrt(clean.eta * static_cast<double>(n) / static_cast<double>(m));
    Matrix Xp(n + m, contaminated.p());
    Xp.topRows(n) = contaminated.X;
    Xp.bottomRows(m) = scale * clean.X;
    Vector yp(n + m);
    yp.head(n) = contaminated.y;
    yp.tail(m) = scale * clean.y;
    return detail::decompose(std::move(Xp), std::move(yp), n, m, scale);
}

inline StackedSystem build_stacked(const DebugProblem& problem) {
    return build_stacked(problem.contaminated, problem.clean);
}

/// One-pool residual projector P_perp = I - X (X^T X)^-1 X^T, dense.
inline Matrix residual_projection(const ContaminatedPool& pool) {
    return build_stacked(pool, CleanPool::empty(pool.p())).p_perp();
}

}  // namespace mldebug
