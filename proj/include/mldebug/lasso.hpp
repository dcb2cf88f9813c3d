#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "mldebug/stacked.hpp"
#include "mldebug/types.hpp"

namespace mldebug {

inline constexpr double kKktTol = 1e-8;
// |gamma_i| above this counts as support; separates solver noise from signal.
inline constexpr double kSupportThresh = 10.0 * kKktTol;

struct SolverOptions {
    double tol = kKktTol;
    long max_iter = 0;  // coordinate updates; 0 selects the 50*n default
};

struct LassoSolution {
    Vector gamma_hat;      // n
    Vector beta_hat;       // p
    IndexSet support;      // indices with |gamma_hat_i| > support threshold
    Vector z_hat;          // n, subgradient of ||gamma||_1 at gamma_hat
    double lambda = 0.0;
    double kkt_residual = 0.0;
    bool converged = false;
    long iterations = 0;
};

/// u - k*sign(u) outside the dead zone [-k, k], 0 inside; the |u| = k
/// boundary maps to 0 (subgradient convention sign(0) = 0).
inline double soft_threshold(double u, double k) {
    if (u > k) return u - k;
    if (u < -k) return u + k;
    return 0.0;
}

inline Vector soft_threshold(const Vector& u, double k) {
    Vector out(u.size());
    for (Index i = 0; i < u.size(); ++i) out[i] = soft_threshold(u[i], k);
    return out;
}

/// Huber loss with threshold k: quadratic inside [-k, k], linear outside.
inline double huber_loss(double u, double k) {
    double a = std::abs(u);
    return a > k ? k * a - 0.5 * k * k : 0.5 * u * u;
}

inline double huber_grad(double u, double k) {
    if (u > k) return k;
    if (u < -k) return -k;
    return u;
}

namespace detail {

// State for coordinate descent on the reformulated problem
//   min (1/2n) || P_perp y' - P_bar g ||^2 + lambda ||g||_1.
// With u = y' - [g; 0] and s = Q^T u, the projected residual is
// r = u - Q s, so r_i = u_i - q_i . s and the curvature of coordinate i is
// a_i = (P_perp)_ii = 1 - ||q_i||^2. A full sweep is O(n p).
struct GammaCd {
    const StackedSystem& sys;
    double lambda;
    Vector gamma;  // n
    Vector u;      // n+m
    Vector s;      // p
    Vector a;      // n, curvatures

    explicit GammaCd(const StackedSystem& system, double lam)
        : sys(system),
          lambda(lam),
          gamma(Vector::Zero(system.n)),
          u(system.y_prime),
          s(system.Q.transpose() * system.y_prime),
          a(system.p_perp_diag_first_pool()) {}

    double residual_at(Index i) const { return u[i] - sys.Q.row(i).dot(s); }

    // One cyclic sweep; returns largest coordinate move.
    double sweep() {
        double max_move = 0.0;
        const double nd = static_cast<double>(sys.n);
        for (Index i = 0; i < sys.n; ++i) {
            if (a[i] <= 1e-12) {
                // zero curvature: the l1 term pins the coordinate at 0
                if (gamma[i] != 0.0) {
                    apply_move(i, -gamma[i]);
                    max_move = std::max(max_move, std::abs(gamma[i]));
                }
                continue;
            }
            double c = residual_at(i) + a[i] * gamma[i];
            double next = soft_threshold(c, nd * lambda) / a[i];
            double delta = next - gamma[i];
            if (delta != 0.0) {
                apply_move(i, delta);
                max_move = std::max(max_move, std::abs(delta));
            }
        }
        return max_move;
    }

    void apply_move(Index i, double delta) {
        gamma[i] += delta;
        u[i] -= delta;
        s -= delta * sys.Q.row(i).transpose();
    }

    void refresh() {  // kill accumulated drift
        u = sys.y_prime - sys.extend(gamma);
        s = sys.Q.transpose() * u;
    }

    // Max-norm violation of stationarity plus the implied subgradient.
    double kkt(Vector* z_out) const {
        const double nd = static_cast<double>(sys.n);
        Vector r = u - sys.Q * s;
        double worst = 0.0;
        if (z_out) z_out->resize(sys.n);
        for (Index i = 0; i < sys.n; ++i) {
            double g = r[i] / nd;
            double viol;
            double z;
            if (std::abs(gamma[i]) > kSupportThresh) {
                z = gamma[i] > 0 ? 1.0 : -1.0;
                viol = std::abs(g - lambda * z);
            } else {
                z = g / lambda;
                viol = std::max(0.0, std::abs(g) - lambda);
            }
            if (z_out) (*z_out)[i] = z;
            worst = std::max(worst, viol);
        }
        return worst;
    }

    double objective() const {
        return (u.squaredNorm() - s.squaredNorm()) / (2.0 * static_cast<double>(sys.n)) +
               lambda * gamma.lpNorm<1>();
    }
};

inline void finalize(LassoSolution& sol, const StackedSystem& sys) {
    sol.support = support_of(sol.gamma_hat, kSupportThresh);
    sol.beta_hat = sys.solve_least_squares(sys.y_prime - sys.extend(sol.gamma_hat));
}

}  // namespace detail

/// Objective of the reformulated problem at a candidate gamma.
inline double gamma_objective(const StackedSystem& sys, const Vector& gamma,
                              double lambda) {
    Vector u = sys.y_prime - sys.extend(gamma);
    Vector s = sys.Q.transpose() * u;
    return (u.squaredNorm() - s.squaredNorm()) / (2.0 * static_cast<double>(sys.n)) +
           lambda * gamma.lpNorm<1>();
}

/// Cyclic coordinate descent on the reformulated Lasso. Convergence is
/// declared on the KKT residual, not on objective decrease. beta_hat is
/// recovered from the closed form (X'^T X')^-1 X'^T (y' - [gamma; 0]).
/// Uniqueness is not asserted here; it is certified separately through the
/// minimum eigenvalue condition.
inline LassoSolution solve_gamma(const StackedSystem& sys, double lambda,
                                 const SolverOptions& opts = {}) {
    if (lambda <= 0.0) throw Error("solve_gamma: lambda must be positive");
    const long max_updates =
        opts.max_iter > 0 ? opts.max_iter : 50L * static_cast<long>(sys.n);
    detail::GammaCd cd(sys, lambda);

    LassoSolution sol;
    sol.lambda = lambda;
    long updates = 0;
    int sweeps_since_refresh = 0;
    while (true) {
        cd.sweep();
        updates += sys.n;
        if (++sweeps_since_refresh >= 64) {
            cd.refresh();
            sweeps_since_refresh = 0;
        }
        double kkt = cd.kkt(nullptr);
        if (kkt <= opts.tol) {
            sol.converged = true;
            break;
        }
        if (updates >= max_updates) break;
    }
    cd.refresh();
    sol.kkt_residual = cd.kkt(&sol.z_hat);
    sol.converged = sol.kkt_residual <= opts.tol;
    sol.gamma_hat = cd.gamma;
    sol.iterations = updates;
    detail::finalize(sol, sys);
    return sol;
}

/// Solves the joint two-pool objective directly by alternating the exact
/// beta update (weighted least squares) with the gamma update
/// (soft-threshold of y - X beta at level n*lambda). Shares its gamma
/// solution with solve_gamma.
inline LassoSolution solve_joint(const DebugProblem& problem, double lambda,
                                 const SolverOptions& opts = {}) {
    if (lambda <= 0.0) throw Error("solve_joint: lambda must be positive");
    problem.contaminated.validate();
    problem.clean.validate();
    const Matrix& X = problem.contaminated.X;
    const Vector& y = problem.contaminated.y;
    const Index n = X.rows(), p = X.cols();
    const double nd = static_cast<double>(n);
    const bool one_pool = problem.clean.one_pool();

    Matrix A = X.transpose() * X / nd;
    Vector base_rhs = Vector::Zero(p);
    if (!one_pool) {
        const double md = static_cast<double>(problem.clean.m());
        A += problem.clean.eta / md * problem.clean.X.transpose() * problem.clean.X;
        base_rhs = problem.clean.eta / md * problem.clean.X.transpose() * problem.clean.y;
    }
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(A);
        double lo = es.eigenvalues()[0], hi = es.eigenvalues()[p - 1];
        if (lo <= 0.0 || hi / lo > kCondMax)
            throw SingularDesign("solve_joint: weighted gram matrix singular");
    }
    Eigen::LDLT<Matrix> fac(A);

    const long max_updates = opts.max_iter > 0 ? opts.max_iter : 50L * static_cast<long>(n);
    Vector gamma = Vector::Zero(n);
    Vector beta = fac.solve(base_rhs + X.transpose() * y / nd);
    LassoSolution sol;
    sol.lambda = lambda;
    long updates = 0;
    double kkt = 0.0;
    Vector z(n);
    while (true) {
        gamma = soft_threshold(y - X * beta, nd * lambda);
        beta = fac.solve(base_rhs + X.transpose() * (y - gamma) / nd);
        ++updates;

        // joint stationarity: beta block is exact by construction, so the
        // violation lives in the gamma block
        Vector res = y - X * beta;
        kkt = 0.0;
        for (Index i = 0; i < n; ++i) {
            double g = (res[i] - gamma[i]) / nd;
            if (std::abs(gamma[i]) > kSupportThresh) {
                z[i] = gamma[i] > 0 ? 1.0 : -1.0;
                kkt = std::max(kkt, std::abs(g - lambda * z[i]));
            } else {
                z[i] = g / lambda;
                kkt = std::max(kkt, std::max(0.0, std::abs(g) - lambda));
            }
        }
        Vector grad_beta = A * beta - X.transpose() * (y - gamma) / nd - base_rhs;
        kkt = std::max(kkt, grad_beta.lpNorm<Eigen::Infinity>());
        if (kkt <= opts.tol || updates >= max_updates) break;
    }
    sol.gamma_hat = gamma;
    sol.beta_hat = beta;
    sol.z_hat = z;
    sol.kkt_residual = kkt;
    sol.converged = kkt <= opts.tol;
    sol.iterations = updates;
    sol.support = support_of(gamma, kSupportThresh);
    return sol;
}

/// Weighted M-estimation: Huber loss (threshold n*lambda) on the first pool
/// plus a quadratic on the clean pool, minimized by gradient descent with
/// line search (Barzilai-Borwein steps, Armijo safeguard).
inline Vector solve_weighted_m(const DebugProblem& problem, double lambda,
                               const SolverOptions& opts = {}) {
    if (lambda <= 0.0) throw Error("solve_weighted_m: lambda must be positive");
    const Matrix& X = problem.contaminated.X;
    const Vector& y = problem.contaminated.y;
    const Index n = X.rows(), p = X.cols();
    const double nd = static_cast<double>(n);
    const double k = nd * lambda;
    const bool one_pool = problem.clean.one_pool();
    const double eta_m =
        one_pool ? 0.0 : problem.clean.eta / static_cast<double>(problem.clean.m());

    auto value = [&](const Vector& b) {
        double v = 0.0;
        Vector res = y - X * b;
        for (Index i = 0; i < n; ++i) v += huber_loss(res[i], k);
        v /= nd;
        if (!one_pool) v += 0.5 * eta_m * (problem.clean.y - problem.clean.X * b).squaredNorm();
        return v;
    };
    auto gradient = [&](const Vector& b) {
        Vector res = y - X * b;
        Vector w(n);
        for (Index i = 0; i < n; ++i) w[i] = huber_grad(res[i], k);
        Vector g = -X.transpose() * w / nd;
        if (!one_pool)
            g += eta_m * problem.clean.X.transpose() * (problem.clean.X * b - problem.clean.y);
        return g;
    };

    // warm start from the all-quadratic solution
    Matrix A = X.transpose() * X / nd;
    Vector rhs = X.transpose() * y / nd;
    if (!one_pool) {
        A += eta_m * problem.clean.X.transpose() * problem.clean.X;
        rhs += eta_m * problem.clean.X.transpose() * problem.clean.y;
    }
    Vector beta = A.ldlt().solve(rhs);

    const long max_iters = opts.max_iter > 0 ? opts.max_iter : 200000;
    Vector g = gradient(beta);
    double f = value(beta);
    double step = 1.0 / std::max(1.0, A.operatorNorm());
    for (long it = 0; it < max_iters; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= opts.tol) break;
        Vector beta_next = beta - step * g;
        double f_next = value(beta_next);
        int backtracks = 0;
        while (f_next > f - 1e-4 * step * g.squaredNorm() && backtracks < 60) {
            step *= 0.5;
            beta_next = beta - step * g;
            f_next = value(beta_next);
            ++backtracks;
        }
        Vector g_next = gradient(beta_next);
        Vector sdiff = beta_next - beta;
        Vector gdiff = g_next - g;
        double denom = sdiff.dot(gdiff);
        step = denom > 1e-16 ? sdiff.squaredNorm() / denom : step * 2.0;
        step = std::clamp(step, 1e-12, 1e12);
        beta = std::move(beta_next);
        g = std::move(g_next);
        f = f_next;
    }
    return beta;
}

struct PdwResult {
    Vector gamma_T;                 // oracle subproblem solution on T
    Vector z;                       // full-length subgradient vector
    bool strict_dual_feasible = false;
    double max_off_support = 0.0;   // ||z_{T^c}||_inf
};

/// Primal-dual witness construction: solve the oracle subproblem restricted
/// to T, back out z on the complement from the zero-subgradient equation,
/// and report whether strict dual feasibility holds.
inline PdwResult pdw_construct(const StackedSystem& sys, const IndexSet& T,
                               double lambda) {
    if (lambda <= 0.0) throw Error("pdw_construct: lambda must be positive");
    const Index n = sys.n;
    const Index t = static_cast<Index>(T.size());
    const double nd = static_cast<double>(n);
    Vector b = sys.apply_p_perp(sys.y_prime);

    PdwResult out;
    out.z = Vector::Zero(n);
    if (t == 0) {
        // degenerate oracle subproblem: gamma = 0, z from the gradient alone
        out.gamma_T = Vector::Zero(0);
        for (Index i = 0; i < n; ++i) out.z[i] = b[i] / (nd * lambda);
        out.max_off_support = out.z.lpNorm<Eigen::Infinity>();
        out.strict_dual_feasible = out.max_off_support < 1.0;
        return out;
    }

    // gram of the restricted design: (P_perp)_TT = I - Q_T Q_T^T
    Matrix Qt(t, sys.Q.cols());
    Vector bt(t);
    for (Index a = 0; a < t; ++a) {
        Qt.row(a) = sys.Q.row(T[static_cast<size_t>(a)]);
        bt[a] = b[T[static_cast<size_t>(a)]];
    }
    Matrix M = Matrix::Identity(t, t) - Qt * Qt.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    if (es.eigenvalues()[0] <= 1e-12)
        throw SingularSubmatrix("pdw_construct: restricted projector singular");

    // coordinate descent on the t-dimensional oracle subproblem
    Vector gamma = Vector::Zero(t);
    Vector mg = Vector::Zero(t);  // M * gamma
    for (long sweep = 0; sweep < 100000; ++sweep) {
        double kkt = 0.0;
        for (Index a = 0; a < t; ++a) {
            double c = bt[a] - mg[a] + M(a, a) * gamma[a];
            double next = soft_threshold(c, nd * lambda) / M(a, a);
            double delta = next - gamma[a];
            if (delta != 0.0) {
                gamma[a] = next;
                mg += delta * M.col(a);
            }
        }
        for (Index a = 0; a < t; ++a) {
            double g = (bt[a] - mg[a]) / nd;
            if (std::abs(gamma[a]) > kSupportThresh)
                kkt = std::max(kkt, std::abs(g - lambda * (gamma[a] > 0 ? 1.0 : -1.0)));
            else
                kkt = std::max(kkt, std::max(0.0, std::abs(g) - lambda));
        }
        if (kkt <= 1e-12) break;
    }
    out.gamma_T = gamma;

    // z on T: subgradient of the restricted solution
    for (Index a = 0; a < t; ++a) {
        double g = (bt[a] - mg[a]) / nd;
        out.z[T[static_cast<size_t>(a)]] =
            std::abs(gamma[a]) > kSupportThresh ? (gamma[a] > 0 ? 1.0 : -1.0)
                                                : g / lambda;
    }
    // z off T via the zero-subgradient equation:
    // z_j = (1/(n lambda)) P_bar_j^T (b - P_bar_T gamma_T)
    Vector w = b;
    for (Index a = 0; a < t; ++a) {
        Index i = T[static_cast<size_t>(a)];
        // P_bar column i applied: w -= gamma[a] * (e_i - Q q_i^T)
        w[i] -= gamma[a];
        w += gamma[a] * (sys.Q * sys.Q.row(i).transpose());
    }
    Vector pw = sys.apply_p_perp(w);
    IndexSet Tc = complement_of(T, n);
    double worst = 0.0;
    for (Index j : Tc) {
        double zj = pw[j] / (nd * lambda);
        out.z[j] = zj;
        worst = std::max(worst, std::abs(zj));
    }
    out.max_off_support = worst;
    out.strict_dual_feasible = worst < 1.0;
    return out;
}

}  // namespace mldebug
