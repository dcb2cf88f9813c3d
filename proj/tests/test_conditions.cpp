#include <catch2/catch.hpp>
#include <mldebug/conditions.hpp>
#include <mldebug/lasso.hpp>
#include <mldebug/rng.hpp>
#include <mldebug/synth.hpp>

using namespace mldebug;

namespace {

ContaminatedPool b4_pool() {
    Matrix XT(2, 3), XTc(6, 3);
    XT << -1.8271, -1.6954, -1.1000, 0.3020, -1.4817, -0.2284;
    XTc << -1.7680, -0.0863, 1.6822, -0.5750, -1.1013, 0.4749, -0.6693, -0.6413,
        0.6126, -0.3271, 0.3060, -1.0068, 0.6177, 0.3941, -2.6407, -0.7001, 2.3465,
        0.4309;
    ContaminatedPool pool;
    pool.X.resize(8, 3);
    pool.X << XT, XTc;
    pool.y = Vector::Zero(8);
    return pool;
}

CleanPool b4_clean(double eta) {
    CleanPool c;
    c.X.resize(2, 3);
    c.X << -1.8722, 0.5154, 0.1560, -0.9036, 0.6064, -0.2540;
    c.y = Vector::Zero(2);
    c.eta = eta;
    return c;
}

}  // namespace

TEST_CASE("incoherence golden values for the counterexample", "[conditions]") {
    ContaminatedPool pool = b4_pool();
    IndexSet T{0, 1};
    StackedSystem one = build_stacked(pool, CleanPool::empty(3));
    ConditionReport rep1 = check_conditions(one, T, 0.1);
    REQUIRE(rep1.alpha.has_value());
    REQUIRE(*rep1.alpha == Approx(0.96).margin(0.01));
    REQUIRE(rep1.verdict_incoherence);

    // eta n / m = 3: the evaluation point of the displayed example
    StackedSystem two = build_stacked(pool, b4_clean(0.75));
    ConditionReport rep2 = check_conditions(two, T, 0.1);
    REQUIRE(*rep2.alpha == Approx(1.28).margin(0.01));
    REQUIRE_FALSE(rep2.verdict_incoherence);
}

TEST_CASE("untouched coordinates give the identity block", "[conditions]") {
    Matrix X(6, 2);
    X << 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 1, -1;
    ContaminatedPool pool{X, Vector::Zero(6)};
    StackedSystem sys = build_stacked(pool, CleanPool::empty(2));
    ConditionReport rep = check_conditions(sys, {0, 1}, 0.1);
    REQUIRE(rep.b_min == Approx(1.0).margin(1e-12));
    REQUIRE(*rep.alpha == Approx(0.0).margin(1e-12));
}

TEST_CASE("clean pool never hurts the eigenvalue condition", "[conditions]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Index n = 20 + static_cast<Index>(rng.below(30));
        Index p = 2 + static_cast<Index>(rng.below(4));
        Index t = 1 + static_cast<Index>(rng.below(5));
        Index m = 1 + static_cast<Index>(rng.below(8));
        ContaminatedPool pool{rng.gaussian_matrix(n, p), Vector::Zero(n)};
        pool.y = rng.gaussian_vector(n);
        CleanPool clean;
        clean.X = rng.gaussian_matrix(m, p);
        clean.y = rng.gaussian_vector(m);
        clean.eta = rng.uniform(0.0, 5.0);
        IndexSet T = rng.sample_without_replacement(n, t);

        StackedSystem one = build_stacked(pool, CleanPool::empty(p));
        StackedSystem two = build_stacked(pool, clean);
        double b1 = check_conditions(one, T, 0.1).b_min;
        double b2 = check_conditions(two, T, 0.1).b_min;
        REQUIRE(b2 >= b1 - 1e-10);
    }
}

TEST_CASE("simplified incoherence equals the definitional form", "[conditions]") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(700 + seed);
        Index n = 15 + static_cast<Index>(rng.below(20));
        Index p = 2 + static_cast<Index>(rng.below(3));
        Index t = 1 + static_cast<Index>(rng.below(3));
        ContaminatedPool pool{rng.gaussian_matrix(n, p), Vector::Zero(n)};
        pool.y = rng.gaussian_vector(n);
        CleanPool clean = CleanPool::empty(p);
        if (seed % 2) {
            clean.X = rng.gaussian_matrix(4, p);
            clean.y = rng.gaussian_vector(4);
            clean.eta = 1.3;
        }
        IndexSet T = rng.sample_without_replacement(n, t);
        StackedSystem sys = build_stacked(pool, clean);
        ConditionReport rep = check_conditions(sys, T, 0.1);

        // definitional route computed directly from the dense projector
        Matrix P = sys.p_perp();
        Matrix Ptt(t, t);
        IndexSet Tc = complement_of(T, n);
        for (Index a = 0; a < t; ++a)
            for (Index b = 0; b < t; ++b)
                Ptt(a, b) = P(T[static_cast<size_t>(a)], T[static_cast<size_t>(b)]);
        Matrix Ptct(static_cast<Index>(Tc.size()), t);
        for (size_t a = 0; a < Tc.size(); ++a)
            for (Index b = 0; b < t; ++b)
                Ptct(static_cast<Index>(a), b) = P(Tc[a], T[static_cast<size_t>(b)]);
        Matrix M = Ptct * Ptt.inverse();
        double alpha_def = 0.0;
        for (Index i = 0; i < M.rows(); ++i)
            alpha_def = std::max(alpha_def, M.row(i).lpNorm<1>());
        REQUIRE(*rep.alpha == Approx(alpha_def).margin(1e-8));
    }
}

TEST_CASE("orthogonal closed forms", "[conditions]") {
    SECTION("no bugs in any direction") {
        OrthogonalDesign d = random_orthogonal_design(4, 2, 1.0, 5);
        d.r.setZero();
        ConditionReport rep = orthogonal_conditions(d, d.n(), d.m());
        REQUIRE(rep.b_min == Approx(1.0));
        REQUIRE(*rep.alpha == Approx(0.0));
    }
    SECTION("one-pool reduces to max |r_i/f_i|") {
        OrthogonalDesign d = random_orthogonal_design(5, 3, 1.0, 6);
        d.w.setZero();
        double expected = 0.0;
        for (Index i = 0; i < 3; ++i)
            expected = std::max(expected, std::abs(d.r[i] / d.f[i]));
        ConditionReport rep = orthogonal_conditions(d, d.n(), 0);
        REQUIRE(*rep.alpha == Approx(expected).margin(1e-12));
    }
    SECTION("degenerate direction is rejected") {
        OrthogonalDesign d = random_orthogonal_design(3, 2, 1.0, 7);
        d.f[0] = 0.0;
        d.w[0] = 0.0;
        REQUIRE_THROWS_AS(orthogonal_conditions(d, d.n(), d.m()), DegenerateDirection);
    }
}

TEST_CASE("closed form equals generic evaluation", "[conditions]") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        Rng rng(40 + seed);
        Index p = 3 + static_cast<Index>(rng.below(3));
        Index t = 1 + static_cast<Index>(rng.below(std::min<Index>(p, 3)));
        OrthogonalDesign d = random_orthogonal_design(p, t, rng.uniform(0.2, 3.0),
                                                      40 + seed, 1.4, p);
        ReconstructedDesign rd = reconstruct_design(d);
        const Index n = rd.pool.X.rows(), m = rd.clean.X.rows();

        Vector beta = rng.gaussian_vector(p);
        Vector eps = rng.gaussian_vector(n, 0.3);
        Vector eps_tilde = rng.gaussian_vector(m, 0.3);
        Vector gamma = Vector::Zero(n);
        for (Index i = 0; i < t; ++i) gamma[i] = 4.0 * rng.sign();
        rd.pool.y = rd.pool.X * beta + gamma + eps;
        rd.clean.y = rd.clean.X * beta + eps_tilde;

        double lambda = rng.uniform(0.01, 0.2);
        StackedSystem sys = build_stacked(rd.pool, rd.clean);
        GroundTruth truth{beta, gamma, rd.T, 0.3};
        ConditionReport generic = check_conditions(sys, rd.T, lambda, &truth);

        // the closed form indexes clean-pool noise by direction
        Vector eps_dir = Vector::Zero(p);
        Index row = 0;
        for (Index i = 0; i < p; ++i)
            if (d.w[i] != 0.0) eps_dir[i] = eps_tilde[row++];
        ConditionReport closed =
            orthogonal_conditions(d, n, m, lambda, &eps, &eps_dir);

        REQUIRE(closed.b_min == Approx(generic.b_min).margin(1e-9));
        REQUIRE(*closed.alpha == Approx(*generic.alpha).margin(1e-9));
        REQUIRE(*closed.gamma_min_bound ==
                Approx(*generic.gamma_min_bound).margin(1e-9));
    }
}

TEST_CASE("repetition budget counts", "[conditions]") {
    OrthogonalDesign d = random_orthogonal_design(4, 2, 1.0, 9);
    d.w_B = 0.7;
    Vector target(4);
    target << d.w_B, 3.0 * d.w_B, 2.5 * d.w_B, 0.0;
    auto counts = repetition_budget(d, target);
    REQUIRE(counts == std::vector<long>{1, 9, 7, 0});
    // the substituted squared weight dominates the single-point target
    REQUIRE(7.0 * d.w_B * d.w_B >= 2.5 * d.w_B * 2.5 * d.w_B);
}

TEST_CASE("repeated points dominate the single-point conditions", "[conditions]") {
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
        Rng rng(140 + seed);
        Index p = 3 + static_cast<Index>(rng.below(3));
        Index t = 1 + static_cast<Index>(rng.below(2));
        OrthogonalDesign d = random_orthogonal_design(p, t, 1.0, 150 + seed, 1.2, p);
        d.w_B = rng.uniform(0.3, 1.0);
        Vector target = d.w;
        auto counts = repetition_budget(d, target);

        ConditionReport single = orthogonal_conditions(d, d.n(), d.m(), 0.05);
        ConditionReport repeated = repeated_conditions(d, d.n(), d.m(), counts, 0.05);
        REQUIRE(*repeated.alpha <= *single.alpha + 1e-9);
        REQUIRE(repeated.b_min >= single.b_min - 1e-9);
        REQUIRE(*repeated.gamma_min_bound <= *single.gamma_min_bound + 1e-9);
    }
}

TEST_CASE("eigenvalue sweep", "[conditions]") {
    Rng rng(77);
    DebugProblem prob;
    prob.contaminated.X = rng.gaussian_matrix(30, 6);
    prob.contaminated.y = rng.gaussian_vector(30);
    prob.clean.X = rng.gaussian_matrix(5, 6);
    prob.clean.y = rng.gaussian_vector(5);
    prob.clean.eta = 1.0;
    IndexSet T = rng.sample_without_replacement(30, 8);

    SECTION("single zero eta reproduces the one-pool value") {
        auto sweep = eigenvalue_sweep(prob, T, {0.0});
        StackedSystem one = build_stacked(prob.contaminated, CleanPool::empty(6));
        REQUIRE(sweep.size() == 1);
        REQUIRE(sweep[0].second ==
                Approx(check_conditions(one, T, 0.1).b_min).margin(1e-12));
    }
    SECTION("monotone nondecreasing in eta") {
        auto sweep = eigenvalue_sweep(prob, T, {0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0});
        for (size_t i = 1; i < sweep.size(); ++i)
            REQUIRE(sweep[i].second >= sweep[i - 1].second - 1e-10);
    }
}

TEST_CASE("eta matters far more on small samples", "[conditions][mc]") {
    // m = 5, t = 15, p = 20, pools N(0, I). At n = 30 the one-pool block is
    // singular (rank n - p < t), so any positive weight repairs the
    // eigenvalue condition outright; at larger n the gain shrinks.
    const std::vector<double> etas{0.0, 0.5, 1.0, 2.0, 5.0, 10.0};
    auto mean_endpoints = [&](Index n) {
        double lo = 0.0, hi = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(5000 + seed + static_cast<std::uint64_t>(n));
            DebugProblem prob;
            prob.contaminated.X = rng.gaussian_matrix(n, 20);
            prob.contaminated.y = rng.gaussian_vector(n);
            prob.clean.X = rng.gaussian_matrix(5, 20);
            prob.clean.y = rng.gaussian_vector(5);
            prob.clean.eta = 1.0;
            IndexSet T = rng.sample_without_replacement(n, 15);
            auto sweep = eigenvalue_sweep(prob, T, etas);
            lo += sweep.front().second / 20.0;
            hi += sweep.back().second / 20.0;
        }
        return std::pair{lo, hi};
    };
    auto [lo30, hi30] = mean_endpoints(30);
    REQUIRE(lo30 == Approx(0.0).margin(1e-9));  // condition fails one-pool
    REQUIRE(hi30 > 1e-4);                       // any weight repairs it
    auto [lo100, hi100] = mean_endpoints(100);
    auto [lo500, hi500] = mean_endpoints(500);
    REQUIRE(hi100 - lo100 > 2.0 * (hi500 - lo500));  // gain fades with n
}

TEST_CASE("certified instances recover exactly", "[conditions]") {
    int certified = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(9000 + seed);
        Index p = 4, t = 2;
        OrthogonalDesign d = random_orthogonal_design(p, t, 1.0, 9000 + seed, 0.8, p);
        ReconstructedDesign rd = reconstruct_design(d);
        const Index n = rd.pool.X.rows();

        Vector beta = rng.gaussian_vector(p);
        Vector eps = rng.gaussian_vector(n, 0.05);
        Vector eps_tilde = rng.gaussian_vector(rd.clean.X.rows(), 0.05);

        // pick lambda from the oracle bound, then bugs above the gamma-min bound
        rd.pool.y = rd.pool.X * beta + eps;
        rd.clean.y = rd.clean.X * beta + eps_tilde;
        GroundTruth truth{beta, Vector::Zero(n), rd.T, 0.05};
        StackedSystem sys0 = build_stacked(rd.pool, rd.clean);
        ConditionReport probe = check_conditions(sys0, rd.T, 1e-3, &truth);
        REQUIRE(probe.lambda_star.has_value());
        double lambda = std::max(2.0 * *probe.lambda_star, 1e-8);
        ConditionReport at_lambda = check_conditions(sys0, rd.T, lambda, &truth);
        double margin = 1.5 * *at_lambda.gamma_min_bound + 0.1;
        Vector gamma = Vector::Zero(n);
        for (Index i = 0; i < t; ++i) gamma[i] = margin * rng.sign();
        rd.pool.y += gamma;
        truth.gamma_star = gamma;

        StackedSystem sys = build_stacked(rd.pool, rd.clean);
        ConditionReport rep = check_conditions(sys, rd.T, lambda, &truth);
        if (!rep.certified) continue;
        ++certified;
        LassoSolution sol = solve_gamma(sys, lambda);
        REQUIRE(sol.support == rd.T);
    }
    REQUIRE(certified >= 8);  // construction certifies nearly always
}
