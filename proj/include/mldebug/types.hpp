#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace mldebug {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using IndexSet = std::vector<Index>;

// ---------------------------------------------------------------------------
// Error classes
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularDesign : Error {
    using Error::Error;
};

struct SingularSubmatrix : Error {
    using Error::Error;
};

struct DegenerateDirection : Error {
    using Error::Error;
};

struct InsufficientRows : Error {
    using Error::Error;
};

struct ContaminationTooHigh : InsufficientRows {
    using InsufficientRows::InsufficientRows;
};

struct NonPositiveLambdaU : Error {
    using Error::Error;
};

struct BudgetExceeded : Error {
    using Error::Error;
};

struct ParseError : Error {
    ParseError(std::string msg, long row, long col)
        : Error(std::move(msg)), row(row), col(col) {}
    long row;
    long col;
};

struct NonNumericCell : ParseError {
    using ParseError::ParseError;
};

struct MissingLabelColumn : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Data pools
// ---------------------------------------------------------------------------

/// First pool: n labelled samples whose labels may carry additive bugs.
struct ContaminatedPool {
    Matrix X;  // n x p
    Vector y;  // n

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    void validate() const {
        if (X.rows() < 1 || X.cols() < 1)
            throw Error("ContaminatedPool: need n >= 1 and p >= 1");
        if (X.rows() != y.size())
            throw Error("ContaminatedPool: X rows and y length differ");
        if (!X.allFinite() || !y.allFinite())
            throw Error("ContaminatedPool: non-finite entries");
    }
};

/// Second pool: m samples with trusted labels, weighted by eta in the
/// objective. m = 0 or eta = 0 both reduce to the one-pool problem.
struct CleanPool {
    Matrix X;          // m x p
    Vector y;          // m
    double eta = 0.0;  // pool weight, >= 0

    Index m() const { return X.rows(); }
    bool one_pool() const { return X.rows() == 0 || eta == 0.0; }

    void validate() const {
        if (X.rows() != y.size())
            throw Error("CleanPool: X rows and y length differ");
        if (eta < 0.0) throw Error("CleanPool: eta must be >= 0");
        if (X.rows() > 0 && (!X.allFinite() || !y.allFinite()))
            throw Error("CleanPool: non-finite entries");
    }

    static CleanPool empty(Index p) {
        CleanPool c;
        c.X = Matrix::Zero(0, p);
        c.y = Vector::Zero(0);
        c.eta = 0.0;
        return c;
    }
};

struct DebugProblem {
    ContaminatedPool contaminated;
    CleanPool clean;
};

/// Generating parameters of an instance. Consumed only by generators,
/// oracles and test harnesses, never by estimators.
struct GroundTruth {
    Vector beta_star;    // p
    Vector gamma_star;   // n
    IndexSet support;    // { i : gamma_star[i] != 0 }
    double noise_sigma = 0.0;

    Index t() const { return static_cast<Index>(support.size()); }
};

inline IndexSet support_of(const Vector& v, double thresh = 0.0) {
    IndexSet s;
    for (Index i = 0; i < v.size(); ++i)
        if (std::abs(v[i]) > thresh) s.push_back(i);
    return s;
}

inline IndexSet complement_of(const IndexSet& s, Index n) {
    std::vector<char> in(static_cast<size_t>(n), 0);
    for (Index i : s) in[static_cast<size_t>(i)] = 1;
    IndexSet c;
    c.reserve(static_cast<size_t>(n) - s.size());
    for (Index i = 0; i < n; ++i)
        if (!in[static_cast<size_t>(i)]) c.push_back(i);
    return c;
}

}  // namespace mldebug
