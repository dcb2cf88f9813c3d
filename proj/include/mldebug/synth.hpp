#pragma once

#include <cmath>
#include <optional>

#include "mldebug/conditions.hpp"
#include "mldebug/rng.hpp"
#include "mldebug/types.hpp"

namespace mldebug {

enum class DesignKind { kGaussianIsotropic, kOrthogonal, kFromMatrix };
enum class BugLaw { kPaperC3, kConstant };

/// Reproducible instance description: same spec, same instance, bit for bit.
struct SynthSpec {
    Index n = 0;
    Index p = 0;
    Index t = 0;
    double sigma_star = 0.0;
    DesignKind design = DesignKind::kGaussianIsotropic;
    BugLaw bug_law = BugLaw::kPaperC3;
    double bug_constant = 0.0;  // used by kConstant
    std::uint64_t seed = 0;
    std::optional<OrthogonalDesign> orthogonal;
    std::optional<Matrix> design_matrix;      // kFromMatrix
    std::optional<Matrix> covariance;         // optional row covariance
};

inline Index t_from_fraction(double c_t, Index n) {
    return static_cast<Index>(std::lround(c_t * static_cast<double>(n)));
}

/// Draws an instance of the contaminated linear model
///   y = X beta* + eps + gamma*,  eps ~ N(0, sigma*^2 I).
/// Bug magnitudes follow the configured law; the default keeps every bug
/// above 20 sqrt(log 2n) sigma*, well separated from the noise.
inline std::pair<ContaminatedPool, GroundTruth> generate(const SynthSpec& spec) {
    if (spec.t > spec.n) throw Error("generate: t exceeds n");
    ContaminatedPool pool;
    switch (spec.design) {
        case DesignKind::kGaussianIsotropic: {
            Rng rx = Rng::stream(spec.seed, "synth.design");
            pool.X = rx.gaussian_matrix(spec.n, spec.p);
            if (spec.covariance) {
                Eigen::LLT<Matrix> llt(*spec.covariance);
                if (llt.info() != Eigen::Success)
                    throw Error("generate: covariance not positive definite");
                pool.X = pool.X * llt.matrixL().transpose();
            }
            break;
        }
        case DesignKind::kOrthogonal: {
            if (!spec.orthogonal) throw Error("generate: missing orthogonal design");
            pool.X = reconstruct_design(*spec.orthogonal).pool.X;
            break;
        }
        case DesignKind::kFromMatrix: {
            if (!spec.design_matrix) throw Error("generate: missing design matrix");
            pool.X = *spec.design_matrix;
            break;
        }
    }
    const Index n = pool.X.rows();

    GroundTruth truth;
    Rng rb = Rng::stream(spec.seed, "synth.beta");
    truth.beta_star.resize(pool.X.cols());
    for (Index j = 0; j < pool.X.cols(); ++j) truth.beta_star[j] = rb.uniform(-1.0, 1.0);
    truth.noise_sigma = spec.sigma_star;

    Rng rt = Rng::stream(spec.seed, "synth.support");
    truth.support = rt.sample_without_replacement(n, spec.t);

    truth.gamma_star = Vector::Zero(n);
    Rng rg = Rng::stream(spec.seed, "synth.bugs");
    for (Index i : truth.support) {
        double magnitude;
        if (spec.bug_law == BugLaw::kPaperC3) {
            magnitude = 20.0 * std::sqrt(std::log(2.0 * static_cast<double>(n))) *
                            spec.sigma_star +
                        rg.uniform(0.0, 10.0 * spec.sigma_star);
            truth.gamma_star[i] = rg.sign() * magnitude;
        } else {
            truth.gamma_star[i] = spec.bug_constant;
        }
    }

    Rng re = Rng::stream(spec.seed, "synth.noise");
    pool.y = pool.X * truth.beta_star + truth.gamma_star;
    if (spec.sigma_star > 0.0) pool.y += re.gaussian_vector(n, spec.sigma_star);
    return {std::move(pool), std::move(truth)};
}

/// Requeried clean pool: rows of X at D with trusted labels X_D beta*.
/// noise_sigma > 0 adds fresh noise of scale sigma / sqrt(L) for the
/// reduced-noise second pool variant (L = 1 by default).
inline CleanPool generate_clean_pool(const ContaminatedPool& pool,
                                     const GroundTruth& truth, const IndexSet& D,
                                     double eta = 1.0, double noise_sigma = 0.0,
                                     double L = 1.0, std::uint64_t seed = 0) {
    CleanPool clean = CleanPool::empty(pool.p());
    clean.eta = eta;
    if (D.empty()) return clean;
    clean.X.resize(static_cast<Index>(D.size()), pool.p());
    clean.y.resize(static_cast<Index>(D.size()));
    Rng re = Rng::stream(seed, "synth.clean_noise");
    for (size_t j = 0; j < D.size(); ++j) {
        if (D[j] < 0 || D[j] >= pool.n()) throw Error("generate_clean_pool: bad index");
        clean.X.row(static_cast<Index>(j)) = pool.X.row(D[j]);
        double label = pool.X.row(D[j]).dot(truth.beta_star);
        if (noise_sigma > 0.0) label += noise_sigma / std::sqrt(L) * re.normal();
        clean.y[static_cast<Index>(j)] = label;
    }
    return clean;
}

/// Random orthogonal design with incoherence alpha' held below the given
/// bound (bugs lighter than their clean partners in every direction).
inline OrthogonalDesign random_orthogonal_design(Index p, Index t, double eta,
                                                 std::uint64_t seed,
                                                 double alpha_bound = 0.9,
                                                 Index queried = -1) {
    OrthogonalDesign d;
    Rng r = Rng::stream(seed, "synth.orthogonal");
    Matrix Z = r.gaussian_matrix(p, p);
    Eigen::HouseholderQR<Matrix> qr(Z);
    d.Q = qr.householderQ() * Matrix::Identity(p, p);
    d.f.resize(p);
    d.w = Vector::Zero(p);
    d.r.resize(t);
    for (Index j = 0; j < p; ++j) d.f[j] = r.uniform(0.8, 2.0) * r.sign();
    for (Index i = 0; i < t; ++i) d.r[i] = alpha_bound * d.f[i] * r.uniform(0.2, 1.0);
    if (queried < 0) queried = t;
    for (Index i = 0; i < std::min(queried, p); ++i) d.w[i] = r.uniform(0.5, 1.5);
    d.eta = eta;
    d.w_B = 1.0;
    return d;
}

}  // namespace mldebug
