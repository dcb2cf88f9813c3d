#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mldebug/lasso.hpp"
#include "mldebug/stacked.hpp"
#include "mldebug/types.hpp"

namespace mldebug {

// erf^-1(1/6): the noise-quantile constant recommended when the
// contamination fraction is only known to be below 1/3.
inline constexpr double kDefaultCBar = 0.14879534452690382;

struct TuningConfig {
    double lambda_u = 0.0;           // initial regularizer, must be > 0
    double c_bar = kDefaultCBar;
    double halving_factor = 2.0;     // > 1
    long max_rounds = 64;
};

struct TuningRound {
    double lambda = 0.0;
    Index support_size = 0;
    double sigma_hat = 0.0;
    double stop_stat = 0.0;   // || P_perp_{X^(k)} y^(k) ||_inf
    double threshold = 0.0;   // (5/2) c_bar^-1 sqrt(log 2n) sigma_hat
    bool stopped = false;
};

struct TuningTrace {
    enum class Status { kConverged, kMaxRounds };
    std::vector<TuningRound> rounds;
    Status status = Status::kConverged;
};

struct TuningResult {
    double lambda_hat = 0.0;
    LassoSolution solution;
    TuningTrace trace;
};

/// Data-driven initial regularizer 2 ||P_bar^T P_perp y'||_inf / n; the Lasso
/// at this value returns the all-zeros vector.
inline double default_lambda_u(const StackedSystem& sys) {
    Vector b = sys.apply_p_perp(sys.y_prime);
    double worst = 0.0;
    for (Index i = 0; i < sys.n; ++i) worst = std::max(worst, std::abs(b[i]));
    return 2.0 * worst / static_cast<double>(sys.n);
}

namespace detail {

/// |P_perp_X y| for a standalone pool, via a rank-truncated SVD basis.
inline Vector projected_abs_residual(const Matrix& X, const Vector& y) {
    Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
    const Vector& s = svd.singularValues();
    double cutoff = s.size() > 0 ? s[0] * 1e-12 : 0.0;
    Index rank = 0;
    while (rank < s.size() && s[rank] > cutoff) ++rank;
    Matrix U = svd.matrixU().leftCols(rank);
    Vector res = y - U * (U.transpose() * y);
    return res.cwiseAbs();
}

/// Lower-middle order statistic; deterministic for even lengths.
inline double lower_median(Vector v) {
    std::sort(v.data(), v.data() + v.size());
    return v[(v.size() - 1) / 2];
}

}  // namespace detail

/// Scaled median of absolute projected residuals,
/// sigma_hat = l/(l-p) * median(|P_perp_X y|).
inline double sigma_hat(const Matrix& X, const Vector& y) {
    const Index l = X.rows(), p = X.cols();
    if (l <= p) throw InsufficientRows("sigma_hat: need more rows than features");
    Vector r = detail::projected_abs_residual(X, y);
    return static_cast<double>(l) / static_cast<double>(l - p) * detail::lower_median(r);
}

/// Regularizer selection by halving: solve the Lasso, drop the flagged
/// first-pool rows, estimate the noise scale from the surviving rows, and
/// stop once the largest projected residual is explained by noise alone.
/// The clean pool is never pruned; the Lasso always runs on the full
/// stacked system.
inline TuningResult select_lambda(const StackedSystem& sys, const TuningConfig& cfg,
                                  const SolverOptions& opts = {}) {
    if (cfg.lambda_u <= 0.0)
        throw NonPositiveLambdaU("select_lambda: lambda_u must be positive");
    if (cfg.halving_factor <= 1.0)
        throw Error("select_lambda: halving factor must exceed 1");
    if (cfg.c_bar <= 0.0) throw Error("select_lambda: c_bar must be positive");
    const Index n = sys.n, p = sys.p();
    if (n <= p) throw InsufficientRows("select_lambda: need n > p");
    const double log2n = std::log(2.0 * static_cast<double>(n));

    TuningResult out;
    double lambda = cfg.lambda_u;
    for (long k = 0; k < cfg.max_rounds; ++k) {
        LassoSolution sol = solve_gamma(sys, lambda, opts);
        const Index l = n - static_cast<Index>(sol.support.size());
        if (l <= p)
            throw ContaminationTooHigh(
                "select_lambda: flagged support leaves too few rows");
        // surviving first-pool rows
        Matrix Xk(l, p);
        Vector yk(l);
        {
            std::vector<char> flagged(static_cast<size_t>(n), 0);
            for (Index i : sol.support) flagged[static_cast<size_t>(i)] = 1;
            Index r = 0;
            for (Index i = 0; i < n; ++i) {
                if (flagged[static_cast<size_t>(i)]) continue;
                Xk.row(r) = sys.X_prime.row(i);
                yk[r] = sys.y_prime[i];
                ++r;
            }
        }
        Vector absres = detail::projected_abs_residual(Xk, yk);
        double shat = static_cast<double>(l) / static_cast<double>(l - p) *
                      detail::lower_median(absres);
        double stat = absres.maxCoeff();
        double threshold = 2.5 / cfg.c_bar * std::sqrt(log2n) * shat;

        TuningRound round;
        round.lambda = lambda;
        round.support_size = static_cast<Index>(sol.support.size());
        round.sigma_hat = shat;
        round.stop_stat = stat;
        round.threshold = threshold;
        round.stopped = stat <= threshold;
        out.trace.rounds.push_back(round);

        if (round.stopped) {
            out.lambda_hat = lambda;
            out.solution = std::move(sol);
            out.trace.status = TuningTrace::Status::kConverged;
            return out;
        }
        out.lambda_hat = lambda;
        out.solution = std::move(sol);
        lambda /= cfg.halving_factor;
    }
    out.trace.status = TuningTrace::Status::kMaxRounds;
    return out;
}

}  // namespace mldebug
