#pragma once

#include <limits>
#include <vector>

#include "mldebug/types.hpp"

namespace mldebug {

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kStalled };

struct LpSolution {
    LpStatus status = LpStatus::kInfeasible;
    Vector x;
    double objective = 0.0;
};

/// min c^T x over free x, subject to A_eq x = b_eq and A_ub x <= b_ub.
/// Dense two-phase simplex with Bland's rule; sized for the small cone
/// feasibility programs in the game module, not for general use.
inline LpSolution solve_lp(const Vector& c, const Matrix& A_eq, const Vector& b_eq,
                           const Matrix& A_ub, const Vector& b_ub) {
    const Index k = c.size();
    const Index r_eq = A_eq.rows(), r_ub = A_ub.rows();
    const Index rows = r_eq + r_ub;
    // standard form: x = xp - xm with xp, xm >= 0, slack per <= row
    const Index nvars = 2 * k + r_ub;
    Matrix M(rows, nvars);
    Vector b(rows), cost = Vector::Zero(nvars);
    M.setZero();
    for (Index i = 0; i < r_eq; ++i) {
        M.block(i, 0, 1, k) = A_eq.row(i);
        M.block(i, k, 1, k) = -A_eq.row(i);
        b[i] = b_eq[i];
    }
    for (Index i = 0; i < r_ub; ++i) {
        M.block(r_eq + i, 0, 1, k) = A_ub.row(i);
        M.block(r_eq + i, k, 1, k) = -A_ub.row(i);
        M(r_eq + i, 2 * k + i) = 1.0;
        b[r_eq + i] = b_ub[i];
    }
    for (Index j = 0; j < k; ++j) {
        cost[j] = c[j];
        cost[k + j] = -c[j];
    }
    for (Index i = 0; i < rows; ++i)
        if (b[i] < 0.0) {
            M.row(i) = -M.row(i);
            b[i] = -b[i];
        }

    constexpr double kTol = 1e-9;
    const Index total = nvars + rows;  // artificials appended
    Matrix T(rows, total + 1);
    T.setZero();
    T.block(0, 0, rows, nvars) = M;
    for (Index i = 0; i < rows; ++i) {
        T(i, nvars + i) = 1.0;
        T(i, total) = b[i];
    }
    std::vector<Index> basis(static_cast<size_t>(rows));
    for (Index i = 0; i < rows; ++i) basis[static_cast<size_t>(i)] = nvars + i;

    auto pivot = [&](Index prow, Index pcol) {
        T.row(prow) /= T(prow, pcol);
        for (Index i = 0; i < rows; ++i) {
            if (i == prow) continue;
            double f = T(i, pcol);
            if (f != 0.0) T.row(i) -= f * T.row(prow);
        }
        basis[static_cast<size_t>(prow)] = pcol;
    };

    // runs simplex on objective vector obj over columns [0, limit)
    auto iterate = [&](const Vector& obj, Index limit) -> LpStatus {
        for (long guard = 0; guard < 100000; ++guard) {
            // reduced costs: obj_j - obj_B^T B^-1 A_j
            Index enter = -1;
            for (Index j = 0; j < limit; ++j) {
                double red = obj[j];
                for (Index i = 0; i < rows; ++i)
                    red -= obj[basis[static_cast<size_t>(i)]] * T(i, j);
                if (red < -kTol) {
                    enter = j;  // Bland: first improving column
                    break;
                }
            }
            if (enter < 0) return LpStatus::kOptimal;
            Index leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Index i = 0; i < rows; ++i) {
                if (T(i, enter) > kTol) {
                    double ratio = T(i, total) / T(i, enter);
                    if (ratio < best - kTol ||
                        (ratio < best + kTol &&
                         (leave < 0 || basis[static_cast<size_t>(i)] <
                                           basis[static_cast<size_t>(leave)]))) {
                        best = ratio;
                        leave = i;
                    }
                }
            }
            if (leave < 0) return LpStatus::kUnbounded;
            pivot(leave, enter);
        }
        return LpStatus::kStalled;
    };

    // phase 1
    Vector phase1 = Vector::Zero(total);
    for (Index j = nvars; j < total; ++j) phase1[j] = 1.0;
    LpStatus st = iterate(phase1, total);
    LpSolution out;
    if (st == LpStatus::kStalled) {
        out.status = st;
        return out;
    }
    double art_sum = 0.0;
    for (Index i = 0; i < rows; ++i)
        if (basis[static_cast<size_t>(i)] >= nvars) art_sum += T(i, total);
    if (art_sum > 1e-7) {
        out.status = LpStatus::kInfeasible;
        return out;
    }
    // drive basic artificials out where possible
    for (Index i = 0; i < rows; ++i) {
        if (basis[static_cast<size_t>(i)] < nvars) continue;
        Index col = -1;
        for (Index j = 0; j < nvars; ++j)
            if (std::abs(T(i, j)) > kTol) {
                col = j;
                break;
            }
        if (col >= 0) pivot(i, col);
    }

    // phase 2 over real columns only
    Vector phase2 = Vector::Zero(total);
    phase2.head(nvars) = cost;
    st = iterate(phase2, nvars);
    if (st != LpStatus::kOptimal) {
        out.status = st;
        return out;
    }
    Vector z = Vector::Zero(nvars);
    for (Index i = 0; i < rows; ++i)
        if (basis[static_cast<size_t>(i)] < nvars)
            z[basis[static_cast<size_t>(i)]] = T(i, total);
    out.x = z.head(k) - z.segment(k, k);
    out.objective = cost.dot(z);
    out.status = LpStatus::kOptimal;
    return out;
}

}  // namespace mldebug
