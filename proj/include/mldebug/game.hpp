#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "mldebug/lasso.hpp"
#include "mldebug/lp.hpp"
#include "mldebug/rng.hpp"
#include "mldebug/stacked.hpp"
#include "mldebug/types.hpp"

namespace mldebug {

inline constexpr double kEnumerationCap = 2e6;  // C(n,t), C(n,m) budget

/// Bug-generator vs debugger match setup. pool.y holds the noiseless labels
/// X beta_star, before any contamination.
struct GameInstance {
    ContaminatedPool pool;
    Vector beta_star;
    Index t = 1;          // contamination budget
    Index m = 0;          // query budget; 0 plays the one-pool baseline
    double eta = 1.0;
    double bug_magnitude = 0.0;  // 0 selects the default below

    bool in_theory_regime() const { return m < pool.p(); }
};

inline double default_bug_magnitude(const Vector& y) {
    return 10.0 * (y.cwiseAbs().maxCoeff() + 1.0);
}

struct GameOutcome {
    IndexSet scheme;   // generator's support choice (empty if none fools)
    IndexSet D;        // debugger's query set
    bool recovered = false;
    std::optional<Vector> certificate;  // foolability witness, when played
    long schemes_tested = 0;
};

enum class DebugStrategy { kRandom, kGamma, kGammaAdapt, kLeverage, kInfluence };

inline const char* to_string(DebugStrategy s) {
    switch (s) {
        case DebugStrategy::kRandom: return "random";
        case DebugStrategy::kGamma: return "gamma";
        case DebugStrategy::kGammaAdapt: return "gamma_adapt";
        case DebugStrategy::kLeverage: return "leverage";
        case DebugStrategy::kInfluence: return "influence";
    }
    return "?";
}

inline DebugStrategy strategy_from_string(const std::string& s) {
    if (s == "random") return DebugStrategy::kRandom;
    if (s == "gamma") return DebugStrategy::kGamma;
    if (s == "gamma_adapt") return DebugStrategy::kGammaAdapt;
    if (s == "leverage") return DebugStrategy::kLeverage;
    if (s == "influence") return DebugStrategy::kInfluence;
    throw Error("unknown debug strategy: " + s);
}

// ---------------------------------------------------------------------------
// Enumeration helpers
// ---------------------------------------------------------------------------

inline double binomial(Index n, Index k) {
    if (k < 0 || k > n) return 0.0;
    k = std::min(k, n - k);
    double v = 1.0;
    for (Index i = 1; i <= k; ++i) v = v * static_cast<double>(n - k + i) / i;
    return v;
}

/// Calls fn on every k-subset of [0, n) in lexicographic order until fn
/// returns false.
template <typename Fn>
void for_each_subset(Index n, Index k, Fn&& fn) {
    IndexSet idx(static_cast<size_t>(k));
    for (Index i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
    if (k == 0) {
        fn(idx);
        return;
    }
    while (true) {
        if (!fn(idx)) return;
        Index i = k - 1;
        while (i >= 0 && idx[static_cast<size_t>(i)] == n - k + i) --i;
        if (i < 0) return;
        ++idx[static_cast<size_t>(i)];
        for (Index j = i + 1; j < k; ++j)
            idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
    }
}

// ---------------------------------------------------------------------------
// Nullspace and cone machinery
// ---------------------------------------------------------------------------

/// Orthonormal basis (columns) of the nullspace of the requery operator
/// [I; 0] - [X; sqrt(eta n/m) X_D] (X^T X + (eta n/m) X_D^T X_D)^-1 X^T.
/// D empty reduces to the nullspace of the one-pool residual projector,
/// i.e. the column space of X.
inline Matrix nullspace_matrix(const ContaminatedPool& pool, const IndexSet& D,
                               double eta) {
    pool.validate();
    const Index n = pool.n(), p = pool.p();
    const Index m = static_cast<Index>(D.size());
    Matrix G = pool.X.transpose() * pool.X;
    Matrix Xd(m, p);
    double scale = 0.0;
    if (m > 0 && eta > 0.0) {
        for (Index j = 0; j < m; ++j) Xd.row(j) = pool.X.row(D[static_cast<size_t>(j)]);
        double ratio = eta * static_cast<double>(n) / static_cast<double>(m);
        G += ratio * Xd.transpose() * Xd;
        scale = std::sqrt(ratio);
    }
    {
        Eigen::SelfAdjointEigenSolver<Matrix> es(G);
        double lo = es.eigenvalues()[0], hi = es.eigenvalues()[p - 1];
        if (lo <= 0.0 || hi / lo > kCondMax)
            throw SingularDesign("nullspace_matrix: gram matrix singular");
    }
    Eigen::LDLT<Matrix> fac(G);
    Matrix B = fac.solve(pool.X.transpose());  // p x n
    const Index rows = (scale > 0.0) ? n + m : n;
    Matrix M(rows, n);
    M.topRows(n) = Matrix::Identity(n, n) - pool.X * B;
    if (scale > 0.0) M.bottomRows(m) = -scale * Xd * B;

    Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    // absolute floor matters: the operator can be numerically zero
    double cutoff = std::max(s.size() > 0 ? s[0] * 1e-10 : 0.0, 1e-12);
    Index rank = 0;
    while (rank < s.size() && s[rank] > cutoff) ++rank;
    return svd.matrixV().rightCols(n - rank);
}

/// Decides whether a nonzero nullspace element concentrates its l1 mass on
/// some t coordinates. Per candidate set K this is the feasibility program
///   exists alpha:  ||(B a)_K||_1 = 1,  ||(B a)_{K^c}||_1 <= 1,
/// linearized exactly by enumerating the 2^t sign patterns on K and
/// minimizing the off-K l1 norm through auxiliary variables.
inline std::optional<Vector> cone_intersects(const Matrix& basis, Index t) {
    if (t < 1) throw Error("cone_intersects: t must be >= 1");
    const Index n = basis.rows(), d = basis.cols();
    if (d == 0) return std::nullopt;
    if (binomial(n, t) > kEnumerationCap)
        throw BudgetExceeded("cone_intersects: C(n,t) exceeds enumeration cap");

    std::optional<Vector> witness;
    for_each_subset(n, t, [&](const IndexSet& K) {
        IndexSet Kc = complement_of(K, n);
        const Index nc = static_cast<Index>(Kc.size());
        const Index nv = d + nc;  // alpha, then u_j >= |(B a)_j| off K
        for (unsigned long sbits = 0; sbits < (1UL << t); ++sbits) {
            Vector c = Vector::Zero(nv);
            for (Index j = 0; j < nc; ++j) c[d + j] = 1.0;
            Matrix A_eq = Matrix::Zero(1, nv);
            Vector b_eq(1);
            b_eq[0] = 1.0;
            for (Index a = 0; a < t; ++a) {
                double s = (sbits >> a) & 1 ? -1.0 : 1.0;
                A_eq.block(0, 0, 1, d) += s * basis.row(K[static_cast<size_t>(a)]);
            }
            Matrix A_ub = Matrix::Zero(t + 2 * nc, nv);
            Vector b_ub = Vector::Zero(t + 2 * nc);
            for (Index a = 0; a < t; ++a) {
                double s = (sbits >> a) & 1 ? -1.0 : 1.0;
                A_ub.block(a, 0, 1, d) = -s * basis.row(K[static_cast<size_t>(a)]);
            }
            for (Index j = 0; j < nc; ++j) {
                A_ub.block(t + 2 * j, 0, 1, d) = basis.row(Kc[static_cast<size_t>(j)]);
                A_ub(t + 2 * j, d + j) = -1.0;
                A_ub.block(t + 2 * j + 1, 0, 1, d) =
                    -basis.row(Kc[static_cast<size_t>(j)]);
                A_ub(t + 2 * j + 1, d + j) = -1.0;
            }
            LpSolution lp = solve_lp(c, A_eq, b_eq, A_ub, b_ub);
            if (lp.status == LpStatus::kOptimal && lp.objective <= 1.0 + 1e-9) {
                witness = basis * lp.x.head(d);
                return false;
            }
        }
        return true;
    });
    return witness;
}

struct FoolabilityDetail {
    IndexSet D;
    std::optional<Vector> witness;
};

struct FoolabilityReport {
    bool foolable = false;
    std::vector<FoolabilityDetail> details;
};

/// True iff every size-m query set admits a cone witness, i.e. the bug
/// generator can defeat any deterministic debugger with t contaminations.
inline FoolabilityReport certify_foolable(const ContaminatedPool& pool, Index t,
                                          Index m, double eta) {
    FoolabilityReport rep;
    if (t < 1) {
        rep.foolable = false;
        return rep;
    }
    const Index n = pool.n();
    if (binomial(n, m) > kEnumerationCap)
        throw BudgetExceeded("certify_foolable: C(n,m) exceeds enumeration cap");
    rep.foolable = true;
    for_each_subset(n, m, [&](const IndexSet& D) {
        Matrix basis = nullspace_matrix(pool, D, eta);
        FoolabilityDetail detail;
        detail.D = D;
        detail.witness = cone_intersects(basis, t);
        if (!detail.witness) rep.foolable = false;
        rep.details.push_back(std::move(detail));
        return true;
    });
    return rep;
}

/// The generator's play from a witness: contaminate the top-t coordinates
/// of Delta with the witness values themselves.
inline std::pair<IndexSet, Vector> witness_scheme(const Vector& witness, Index t) {
    const Index n = witness.size();
    IndexSet order(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return std::abs(witness[a]) > std::abs(witness[b]);
    });
    IndexSet K(order.begin(), order.begin() + t);
    std::sort(K.begin(), K.end());
    Vector gamma = Vector::Zero(n);
    for (Index i : K) gamma[i] = witness[i];
    return {K, gamma};
}

// ---------------------------------------------------------------------------
// Debugger strategies
// ---------------------------------------------------------------------------

inline Vector hat_diagonal(const Matrix& X) {
    Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
    Matrix U = svd.matrixU();
    Vector h(X.rows());
    for (Index i = 0; i < X.rows(); ++i) h[i] = U.row(i).squaredNorm();
    return h;
}

namespace detail {

// top-k values with ties broken toward the lowest index
inline IndexSet top_k(const Vector& score, Index k, const std::vector<char>* banned = nullptr) {
    IndexSet order;
    for (Index i = 0; i < score.size(); ++i)
        if (!banned || !(*banned)[static_cast<size_t>(i)]) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return score[a] > score[b]; });
    order.resize(static_cast<size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

inline CleanPool requery(const GameInstance& gi, const IndexSet& D) {
    CleanPool clean = CleanPool::empty(gi.pool.p());
    if (D.empty()) return clean;
    clean.X.resize(static_cast<Index>(D.size()), gi.pool.p());
    clean.y.resize(static_cast<Index>(D.size()));
    for (size_t j = 0; j < D.size(); ++j) {
        clean.X.row(static_cast<Index>(j)) = gi.pool.X.row(D[j]);
        clean.y[static_cast<Index>(j)] = gi.pool.X.row(D[j]).dot(gi.beta_star);
    }
    clean.eta = gi.eta;
    return clean;
}

}  // namespace detail

/// Selects the debugger's query set. Adaptive strategies requery labels
/// through the noiseless oracle x_i^T beta_star as they grow D. `lambda`
/// drives every strategy-internal Lasso solve.
inline IndexSet debug_strategy(DebugStrategy name, const GameInstance& gi,
                               const Vector& contaminated_y, Index m,
                               std::uint64_t rng_seed, double lambda,
                               const SolverOptions& opts = {}) {
    const Index n = gi.pool.n();
    if (m > n) throw Error("debug_strategy: m exceeds pool size");
    if (m == 0) return {};
    ContaminatedPool pool{gi.pool.X, contaminated_y};

    switch (name) {
        case DebugStrategy::kRandom:
            return Rng::stream(rng_seed, "debug.random").sample_without_replacement(n, m);
        case DebugStrategy::kLeverage:
            return detail::top_k(hat_diagonal(gi.pool.X), m);
        case DebugStrategy::kGamma: {
            StackedSystem sys = build_stacked(pool, CleanPool::empty(pool.p()));
            LassoSolution sol = solve_gamma(sys, lambda, opts);
            return detail::top_k(sol.gamma_hat.cwiseAbs(), m);
        }
        case DebugStrategy::kGammaAdapt: {
            IndexSet D;
            std::vector<char> in_d(static_cast<size_t>(n), 0);
            for (Index round = 0; round < m; ++round) {
                StackedSystem sys = build_stacked(pool, detail::requery(gi, D));
                LassoSolution sol = solve_gamma(sys, lambda, opts);
                IndexSet pick = detail::top_k(sol.gamma_hat.cwiseAbs(), 1, &in_d);
                D.push_back(pick[0]);
                in_d[static_cast<size_t>(pick[0])] = 1;
                std::sort(D.begin(), D.end());
            }
            return D;
        }
        case DebugStrategy::kInfluence: {
            IndexSet D;
            std::vector<char> in_d(static_cast<size_t>(n), 0);
            for (Index round = 0; round < m; ++round) {
                CleanPool clean = detail::requery(gi, D);
                StackedSystem sys = build_stacked(pool, clean);
                LassoSolution base = solve_gamma(sys, lambda, opts);
                Vector score = Vector::Constant(n, -1.0);
                for (Index i = 0; i < n; ++i) {
                    if (in_d[static_cast<size_t>(i)]) continue;
                    ContaminatedPool drop;
                    drop.X.resize(n - 1, pool.p());
                    drop.y.resize(n - 1);
                    Index r = 0;
                    for (Index j = 0; j < n; ++j) {
                        if (j == i) continue;
                        drop.X.row(r) = pool.X.row(j);
                        drop.y[r] = pool.y[j];
                        ++r;
                    }
                    LassoSolution loo =
                        solve_gamma(build_stacked(drop, clean), lambda, opts);
                    // jackknife influence on the shared coordinates
                    double ji = 0.0;
                    r = 0;
                    for (Index j = 0; j < n; ++j) {
                        if (j == i) continue;
                        ji += std::abs(loo.gamma_hat[r] - base.gamma_hat[j]);
                        ++r;
                    }
                    score[i] = ji;
                }
                IndexSet pick = detail::top_k(score, 1, &in_d);
                D.push_back(pick[0]);
                in_d[static_cast<size_t>(pick[0])] = 1;
                std::sort(D.begin(), D.end());
            }
            return D;
        }
    }
    throw Error("debug_strategy: unreachable");
}

// ---------------------------------------------------------------------------
// Generator search
// ---------------------------------------------------------------------------

namespace detail {

inline bool exact_recovery_at_any(const StackedSystem& sys, const IndexSet& scheme,
                                  const std::vector<double>& lambdas,
                                  const SolverOptions& opts) {
    for (double lam : lambdas) {
        LassoSolution sol = solve_gamma(sys, lam, opts);
        if (sol.support == scheme) return true;
    }
    return false;
}

}  // namespace detail

/// Exhaustive bug-generator search over all size-t supports with equal
/// magnitude bugs. A scheme defeats the debugger when exact recovery fails
/// at every lambda in the grid. For the random strategy the generator
/// attacks the one-pool baseline and the sampled query set only scores the
/// final outcome.
inline GameOutcome generator_search(const GameInstance& gi, DebugStrategy strategy,
                                    const std::vector<double>& lambdas,
                                    std::uint64_t rng_seed = 0,
                                    const SolverOptions& opts = {}) {
    const Index n = gi.pool.n();
    if (binomial(n, gi.t) > kEnumerationCap)
        throw BudgetExceeded("generator_search: C(n,t) exceeds enumeration cap");
    if (lambdas.empty()) throw Error("generator_search: lambda grid is empty");
    const double c = gi.bug_magnitude > 0.0 ? gi.bug_magnitude
                                            : default_bug_magnitude(gi.pool.y);
    const bool one_pool_eval = gi.m == 0 || strategy == DebugStrategy::kRandom;
    StackedSystem base = build_stacked(gi.pool, CleanPool::empty(gi.pool.p()));

    GameOutcome out;
    out.recovered = true;
    for_each_subset(n, gi.t, [&](const IndexSet& scheme) {
        ++out.schemes_tested;
        Vector y_c = gi.pool.y;
        for (Index i : scheme) y_c[i] += c;
        bool defended;
        IndexSet D;
        if (one_pool_eval) {
            StackedSystem sys = base;
            sys.y_prime = y_c;
            defended = detail::exact_recovery_at_any(sys, scheme, lambdas, opts);
        } else {
            D = debug_strategy(strategy, gi, y_c, gi.m, rng_seed, lambdas.front(), opts);
            ContaminatedPool pool{gi.pool.X, y_c};
            StackedSystem sys = build_stacked(pool, detail::requery(gi, D));
            defended = detail::exact_recovery_at_any(sys, scheme, lambdas, opts);
        }
        if (!defended) {
            out.scheme = scheme;
            out.recovered = false;
            out.D = D;
            return false;
        }
        return true;
    });

    if (!out.recovered && strategy == DebugStrategy::kRandom && gi.m > 0) {
        // score the found scheme against the actual random query set
        Vector y_c = gi.pool.y;
        for (Index i : out.scheme) y_c[i] += c;
        out.D = debug_strategy(DebugStrategy::kRandom, gi, y_c, gi.m, rng_seed,
                               lambdas.front(), opts);
        ContaminatedPool pool{gi.pool.X, y_c};
        StackedSystem sys = build_stacked(pool, detail::requery(gi, out.D));
        out.recovered = detail::exact_recovery_at_any(sys, out.scheme, lambdas, opts);
    }
    return out;
}

}  // namespace mldebug
