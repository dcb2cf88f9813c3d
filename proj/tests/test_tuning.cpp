#include <catch2/catch.hpp>
#include <cmath>
#include <mldebug/rng.hpp>
#include <mldebug/synth.hpp>
#include <mldebug/tuning.hpp>

using namespace mldebug;

TEST_CASE("default c_bar pins erf^-1(1/6)", "[tuning]") {
    REQUIRE(std::erf(kDefaultCBar) == Approx(1.0 / 6.0).margin(1e-12));
}

TEST_CASE("default lambda_u", "[tuning]") {
    Rng rng(5);
    ContaminatedPool pool;
    pool.X = rng.gaussian_matrix(25, 3);
    Vector beta = rng.gaussian_vector(3);

    SECTION("noiseless clean data gives zero") {
        pool.y = pool.X * beta;
        StackedSystem sys = build_stacked(pool, CleanPool::empty(3));
        REQUIRE(default_lambda_u(sys) == Approx(0.0).margin(1e-12));
    }
    SECTION("the Lasso at lambda_u returns all zeros") {
        pool.y = pool.X * beta + rng.gaussian_vector(25, 0.5);
        pool.y[3] += 9.0;
        StackedSystem sys = build_stacked(pool, CleanPool::empty(3));
        double lu = default_lambda_u(sys);
        REQUIRE(lu > 0.0);
        LassoSolution sol = solve_gamma(sys, lu);
        REQUIRE(sol.gamma_hat.lpNorm<Eigen::Infinity>() == 0.0);
    }
    SECTION("homogeneous in the labels") {
        pool.y = pool.X * beta + rng.gaussian_vector(25, 0.5);
        StackedSystem sys = build_stacked(pool, CleanPool::empty(3));
        double base = default_lambda_u(sys);
        ContaminatedPool scaled{pool.X, 3.5 * pool.y};
        StackedSystem sys2 = build_stacked(scaled, CleanPool::empty(3));
        REQUIRE(default_lambda_u(sys2) == Approx(3.5 * base).margin(1e-12));
    }
}

TEST_CASE("sigma_hat formula cases", "[tuning]") {
    SECTION("all projected residuals equal") {
        Matrix X = Matrix::Ones(4, 1);
        Vector y(4);
        double c = 0.8;
        y << c, -c, c, -c;  // mean zero, so P_perp y = y
        REQUIRE(sigma_hat(X, y) == Approx(4.0 / 3.0 * c).margin(1e-12));
    }
    SECTION("scale factor at l = p + 1") {
        Rng rng(8);
        Index p = 3;
        Matrix X = rng.gaussian_matrix(p + 1, p);
        Vector y = rng.gaussian_vector(p + 1);
        Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
        Matrix U = svd.matrixU();
        Vector res = (y - U * (U.transpose() * y)).cwiseAbs();
        std::sort(res.data(), res.data() + res.size());
        double med = res[(res.size() - 1) / 2];
        REQUIRE(sigma_hat(X, y) == Approx(static_cast<double>(p + 1) * med));
    }
    SECTION("too few rows") {
        Matrix X = Matrix::Ones(3, 3);
        REQUIRE_THROWS_AS(sigma_hat(X, Vector::Ones(3)), InsufficientRows);
    }
    SECTION("even-length median takes the lower middle") {
        // residuals (after centering) are +-1.5, +-0.5: sorted |r| = .5 .5 1.5 1.5
        Matrix X = Matrix::Ones(4, 1);
        Vector y(4);
        y << 1.5, 0.5, -0.5, -1.5;
        REQUIRE(sigma_hat(X, y) == Approx(4.0 / 3.0 * 0.5).margin(1e-12));
    }
}

TEST_CASE("sigma_hat tracks the true scale on Gaussian noise", "[tuning][mc]") {
    // median |N(0,1)| is about 0.674; projection shrinks it slightly
    int inside = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(1000 + seed);
        Matrix X = rng.gaussian_matrix(2000, 20);
        Vector y = X * rng.gaussian_vector(20) + rng.gaussian_vector(2000, 0.3);
        double ratio = sigma_hat(X, y) / 0.3;
        if (ratio > 0.6 && ratio < 0.8) ++inside;
    }
    REQUIRE(inside == 10);
}

TEST_CASE("bug-free noiseless data stops in one round", "[tuning]") {
    Rng rng(12);
    ContaminatedPool pool;
    pool.X = rng.gaussian_matrix(20, 3);
    pool.y = pool.X * rng.gaussian_vector(3);
    StackedSystem sys = build_stacked(pool, CleanPool::empty(3));
    TuningConfig cfg;
    cfg.lambda_u = 1.0;
    TuningResult res = select_lambda(sys, cfg);
    REQUIRE(res.trace.status == TuningTrace::Status::kConverged);
    REQUIRE(res.trace.rounds.size() == 1);
    REQUIRE(res.lambda_hat == 1.0);
    REQUIRE(res.solution.gamma_hat.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("trace lambdas form the halving sequence", "[tuning]") {
    auto [pool, truth] = generate({.n = 200,
                                   .p = 4,
                                   .t = 20,
                                   .sigma_star = 0.1,
                                   .design = DesignKind::kGaussianIsotropic,
                                   .bug_law = BugLaw::kPaperC3,
                                   .seed = 42});
    StackedSystem sys = build_stacked(pool, CleanPool::empty(4));
    TuningConfig cfg;
    cfg.lambda_u = default_lambda_u(sys);
    cfg.c_bar = 0.2;
    TuningResult res = select_lambda(sys, cfg);
    for (size_t k = 0; k < res.trace.rounds.size(); ++k)
        REQUIRE(res.trace.rounds[k].lambda ==
                Approx(cfg.lambda_u * std::pow(2.0, -static_cast<double>(k))));
    REQUIRE(res.trace.rounds.back().stopped);
    for (size_t k = 0; k + 1 < res.trace.rounds.size(); ++k)
        REQUIRE_FALSE(res.trace.rounds[k].stopped);
}

TEST_CASE("tuned lambda recovers the planted support", "[tuning]") {
    auto [pool, truth] = generate({.n = 400,
                                   .p = 5,
                                   .t = 40,
                                   .sigma_star = 0.1,
                                   .design = DesignKind::kGaussianIsotropic,
                                   .bug_law = BugLaw::kPaperC3,
                                   .seed = 7});
    StackedSystem sys = build_stacked(pool, CleanPool::empty(5));
    TuningConfig cfg;
    cfg.lambda_u = default_lambda_u(sys);
    cfg.c_bar = 0.2;
    TuningResult res = select_lambda(sys, cfg);
    REQUIRE(res.trace.status == TuningTrace::Status::kConverged);
    REQUIRE(res.solution.support == truth.support);
}

TEST_CASE("error paths", "[tuning]") {
    Rng rng(19);
    ContaminatedPool pool;
    pool.X = rng.gaussian_matrix(12, 3);
    pool.y = pool.X * rng.gaussian_vector(3) + rng.gaussian_vector(12, 0.1);
    StackedSystem sys = build_stacked(pool, CleanPool::empty(3));

    SECTION("nonpositive lambda_u") {
        TuningConfig cfg;
        cfg.lambda_u = 0.0;
        REQUIRE_THROWS_AS(select_lambda(sys, cfg), NonPositiveLambdaU);
    }
    SECTION("contamination too high") {
        // a huge c_bar makes the threshold unreachable, so halving continues
        // until the flagged support leaves l <= p rows
        ContaminatedPool heavy = pool;
        for (Index i = 0; i < 10; ++i) heavy.y[i] += 1000.0 + 10.0 * static_cast<double>(i);
        StackedSystem hsys = build_stacked(heavy, CleanPool::empty(3));
        TuningConfig cfg;
        cfg.lambda_u = default_lambda_u(hsys);
        cfg.c_bar = 1e9;
        REQUIRE_THROWS_AS(select_lambda(hsys, cfg), ContaminationTooHigh);
    }
    SECTION("max rounds flagged, not thrown") {
        TuningConfig cfg;
        cfg.lambda_u = default_lambda_u(sys);
        cfg.c_bar = 1e9;  // threshold unreachably small
        cfg.max_rounds = 5;
        TuningResult res = select_lambda(sys, cfg);
        REQUIRE(res.trace.status == TuningTrace::Status::kMaxRounds);
        REQUIRE(res.trace.rounds.size() == 5);
    }
}
