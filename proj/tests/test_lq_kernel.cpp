#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"

using namespace jpac;

namespace {

const double kMinDecrease = 2.0 - std::sqrt(3.0);

Vector random_xi(Stream &rng, int K, double margin = 1e-3) {
    Vector xi(K);
    for (int k = 0; k < K; ++k) xi(k) = rng.uniform(margin, 1.0 - margin);
    return xi;
}

/// Runs the solver step by step, checking the per-iteration invariants.
SolveResult checked_solve(const AugmentedProblem &P, const SolverConfig &cfg, const Vector &w0) {
    IterateState s = make_state(P, cfg, w0);
    for (long it = 0; it < 2000; ++it) {
        EXPECT_TRUE((s.w.array() > 0.0).all());
        EXPECT_LE(feasibility_error(s.w, P), 1e-10);
        if (s.potential <= cfg.optimality_threshold(P.K, P.q)) break;
        const StepReport step = reduction_step(s, P, cfg);
        if (step.converged) break;
        EXPECT_GE(step.decrease, kMinDecrease - 1e-9);
        const Vector d = (step.state.w.array() / s.w.array() - 1.0).matrix();
        EXPECT_NEAR(d.norm(), cfg.beta, 1e-9);
        EXPECT_NEAR(s.potential - step.state.potential, step.decrease, 1e-6 * std::max(1.0, std::abs(s.potential)));
        s = step.state;
    }
    return solve_potential_reduction(P, cfg, w0);
}

void expect_sound(const KktCertificate &c, const SolveResult &r, const AugmentedProblem &P) {
    switch (c.termination) {
    case Termination::EpsKkt:
        EXPECT_GE(c.dual_residual, -1e-8);
        EXPECT_LE(c.comp_gap, c.epsilon);
        EXPECT_LE(c.norm_g, 1.0);
        break;
    case Termination::EpsOptimal:
        EXPECT_LE(objective_f(r.w, P), c.epsilon * (1 + 1e-9));
        break;
    case Termination::IterationCap:
        ADD_FAILURE() << "iteration cap reached";
        break;
    }
}

} // namespace

TEST(Augment, SingleLinkBlocks) {
    const auto P = augment(fixtures::single(1.0, 0.2), 0.5);
    Matrix expected(2, 3);
    expected << 1, 1, 0, 1, 0, 1;
    EXPECT_EQ(P.A_tilde, expected);
    EXPECT_EQ(P.b_tilde, Vector::Ones(2));
    EXPECT_DOUBLE_EQ(P.c_tilde(0), 0.2);
}

TEST(Augment, ThreeLinkShapeAndBlocks) {
    const auto p = fixtures::three_link();
    const auto P = augment(p, 0.5);
    ASSERT_EQ(P.A_tilde.rows(), 6);
    ASSERT_EQ(P.A_tilde.cols(), 9);
    EXPECT_EQ(P.A_tilde.block(0, 0, 3, 3), p.A);
    EXPECT_EQ(P.A_tilde.block(0, 3, 3, 3), Matrix::Identity(3, 3));
    EXPECT_TRUE(P.A_tilde.block(0, 6, 3, 3).isZero());
    EXPECT_EQ(P.A_tilde.block(3, 0, 3, 3), Matrix::Identity(3, 3));
    EXPECT_TRUE(P.A_tilde.block(3, 3, 3, 3).isZero());
    EXPECT_EQ(P.A_tilde.block(3, 6, 3, 3), Matrix::Identity(3, 3));
    EXPECT_EQ(P.b_tilde.head(3), p.b);
    EXPECT_EQ(P.b_tilde.tail(3), Vector::Ones(3));
}

TEST(Augment, FullRowRank) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto P = augment(fixtures::random_problem(4 + static_cast<int>(seed), seed), 0.5);
        Eigen::FullPivLU<Matrix> lu(P.A_tilde);
        EXPECT_EQ(lu.rank(), 2 * P.K);
    }
}

TEST(Augment, FeasibleLiftOfFeasiblePowers) {
    const auto p = fixtures::three_link();
    const auto P = augment(p, 0.7);
    Vector x(3);
    x << 0.5, 0.5, 0.0;
    Vector w(9);
    w << x, p.b - p.A * x, Vector::Ones(3) - x;
    EXPECT_LE(feasibility_error(w, P), 1e-15);
}

TEST(Augment, RejectsBadInputs) {
    EXPECT_THROW(augment(fixtures::three_link(), 0.0), InvalidInput);
    EXPECT_THROW(augment(fixtures::three_link(), 1.5), InvalidInput);
    EXPECT_THROW(augment(fixtures::three_link(std::nullopt), 0.5), InvalidInput);
}

TEST(Objective, LinearCase) {
    auto p = fixtures::diagonal(3);
    p.alpha = 1e-3;
    const auto P = augment(p, 1.0);
    Vector w(9);
    w << Vector::Zero(3), Vector::Ones(3), Vector::Ones(3);
    EXPECT_DOUBLE_EQ(objective_f(w, P), 3.0);
    w.head(3).setConstant(0.5);
    EXPECT_TRUE(gradient_f(w, P).segment(3, 3).isApprox(Vector::Ones(3)));
}

TEST(Objective, SquareRootCase) {
    auto P = augment(fixtures::single(1.0, 0.2), 0.5);
    Vector w(3);
    w << 0.0, 4.0, 1.0;
    EXPECT_DOUBLE_EQ(objective_f(w, P), 2.0);
    EXPECT_DOUBLE_EQ(gradient_f(w, P)(1), 0.25);
    EXPECT_DOUBLE_EQ(gradient_f(w, P)(0), 0.2);
    EXPECT_DOUBLE_EQ(gradient_f(w, P)(2), 0.0);
}

TEST(Objective, GradientRejectsBoundary) {
    auto P = augment(fixtures::single(1.0, 0.2), 0.5);
    Vector w(3);
    w << 0.5, 0.0, 0.5;
    EXPECT_THROW(gradient_f(w, P), InvalidInput);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
    Stream rng(21);
    for (double q : {0.1, 0.3, 0.5, 0.9, 1.0}) {
        const auto P = augment(fixtures::random_problem(6, 3), q);
        for (int trial = 0; trial < 10; ++trial) {
            const Vector w = interior_point_random(P, random_xi(rng, 6, 0.05));
            const Vector g = gradient_f(w, P);
            for (int n = 0; n < 18; ++n) {
                const double h = 1e-6 * std::max(1e-3, w(n));
                Vector wp = w, wm = w;
                wp(n) += h;
                wm(n) -= h;
                const double fd = (objective_f(wp, P) - objective_f(wm, P)) / (2 * h);
                EXPECT_NEAR(fd, g(n), 1e-5 * std::max(1.0, std::abs(g(n)))) << "q=" << q << " n=" << n;
            }
        }
    }
}

TEST(Potential, ZeroAtOnesWhenFIsOne) {
    // K = 1, q = 1: f(e) = c + 1, so pick c with c + 1 = 1 via the w1 weight.
    auto p = fixtures::single(1.0, 1e-300);
    const auto P = augment(p, 1.0);
    EXPECT_NEAR(potential(Vector::Ones(3), P, 123.0), 0.0, 1e-12);
}

TEST(Potential, MatchesIndependentFormula) {
    Stream rng(4);
    const auto P = augment(fixtures::random_problem(5, 2), 0.4);
    for (int trial = 0; trial < 50; ++trial) {
        Vector w(15);
        for (int n = 0; n < 15; ++n) w(n) = rng.uniform(1e-3, 3.0);
        double f = 0.0;
        for (int k = 0; k < 5; ++k) f += P.c_tilde(k) * w(k) + std::pow(w(5 + k), 0.4);
        double logs = 0.0;
        for (int n = 0; n < 15; ++n) logs += std::log(w(n));
        const double rho = 77.5;
        EXPECT_NEAR(potential(w, P, rho), rho * std::log(f) - logs, 1e-12 * std::max(1.0, std::abs(rho * std::log(f))));
    }
}

TEST(InteriorPoint, SingleLinkDefault) {
    const auto P = augment(fixtures::single(1.0), 0.5);
    EXPECT_TRUE(interior_point_default(P).isApprox(Vector::Constant(3, 0.5)));
}

TEST(InteriorPoint, ThreeLinkDefault) {
    const auto P = augment(fixtures::three_link(), 0.5);
    Vector expected(9);
    expected << 0.25, 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 0.75, 0.75;
    EXPECT_TRUE(interior_point_default(P).isApprox(expected, 1e-15));
}

TEST(InteriorPoint, ThreeLinkRandom) {
    const auto P = augment(fixtures::three_link(), 0.5);
    Vector xi(3);
    xi << 0.2, 0.4, 0.6;
    Vector expected(9);
    expected << 0.1, 0.2, 0.3, 0.7, 0.6, 0.5, 0.9, 0.8, 0.7;
    EXPECT_TRUE(interior_point_random(P, xi, 1e-3).isApprox(expected, 1e-14));
}

TEST(InteriorPoint, HalfReproducesDefault) {
    const auto P = augment(fixtures::random_problem(8, 1), 0.5);
    EXPECT_EQ(interior_point_random(P, Vector::Constant(8, 0.5)), interior_point_default(P));
}

TEST(InteriorPoint, RejectsOutOfRangeXi) {
    const auto P = augment(fixtures::three_link(), 0.5);
    EXPECT_THROW(interior_point_random(P, Vector::Constant(3, 1.0)), InvalidInput);
    EXPECT_THROW(interior_point_random(P, Vector::Constant(3, 0.0)), InvalidInput);
    EXPECT_THROW(interior_point_random(P, Vector::Constant(3, 1e-4), 1e-3), InvalidInput);
    EXPECT_THROW(interior_point_random(P, Vector::Constant(2, 0.5)), InvalidInput);
}

TEST(InteriorPoint, RandomDrawsAreStrictlyInterior) {
    Stream rng(99);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto P = augment(fixtures::random_problem(10, seed), 0.5);
        const Vector w0 = interior_point_default(P);
        EXPECT_GE(w0.minCoeff(), P.b.cwiseMin(1.0).minCoeff() / 2 - 1e-15);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector w = interior_point_random(P, random_xi(rng, 10), 1e-3);
            EXPECT_GT(w.minCoeff(), 0.0);
            EXPECT_LE(feasibility_error(w, P), 1e-12);
        }
    }
}

TEST(MakeState, RejectsInfeasibleStart) {
    const auto P = augment(fixtures::three_link(), 0.5);
    Vector w = interior_point_default(P);
    w(0) += 0.1;
    EXPECT_THROW(make_state(P, {}, w), InvalidInput);
    w = interior_point_default(P);
    w(4) = -w(4);
    EXPECT_THROW(make_state(P, {}, w), InvalidInput);
}

TEST(SolverConfig, DerivedQuantities) {
    SolverConfig c;
    EXPECT_NEAR(c.beta, 1.0 - std::sqrt(3.0) / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(c.rho(5, 0.5), 6.0 * 5 / 1e-4);
    c.epsilon = 0.5;
    EXPECT_DOUBLE_EQ(c.rho(5, 0.1), 100.0);
    c.epsilon = 1e-4;
    EXPECT_EQ(c.iteration_cap(5, 0.5), 100000);
    c.epsilon = 0.1;
    EXPECT_EQ(c.iteration_cap(2, 0.5), static_cast<long>(std::ceil(10.0 * 2 / 0.1 * std::log(10.0))));
    EXPECT_GT(c.rho(3, 0.5), 3 / 0.5);
    SolverConfig bad;
    bad.beta = 1.0;
    EXPECT_THROW(validate(bad), InvalidInput);
}

TEST(ReductionStep, DecreaseAndStepLengthOnRandomInstances) {
    Stream rng(7);
    int steps = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const int K = 2 + static_cast<int>(seed % 9);
        const double q = (seed % 3 == 0) ? 0.3 : (seed % 3 == 1 ? 0.5 : 1.0);
        const auto P = augment(fixtures::random_problem(K, 100 + seed), q);
        SolverConfig cfg;
        IterateState s = make_state(P, cfg, interior_point_random(P, random_xi(rng, K), 1e-3));
        for (int it = 0; it < 40; ++it) {
            const StepReport step = reduction_step(s, P, cfg);
            if (step.converged) break;
            ++steps;
            ASSERT_GT(step.norm_g, 1.0);
            EXPECT_GE(step.decrease, kMinDecrease - 1e-9);
            EXPECT_LT(step.state.potential, s.potential);
            EXPECT_LE(feasibility_error(step.state.w, P), 1e-10);
            s = step.state;
        }
    }
    EXPECT_GT(steps, 500);
}

TEST(ReductionStep, ConvergedCertificateBounds) {
    const auto P = augment(fixtures::three_link(), 0.5);
    SolverConfig cfg;
    IterateState s = make_state(P, cfg, interior_point_default(P));
    for (int it = 0; it < 10000; ++it) {
        const StepReport step = reduction_step(s, P, cfg);
        if (step.converged) {
            const auto proj = detail::project(s, P);
            const Vector scaled = (s.rho / s.f) * proj.scaled;
            EXPECT_GE(scaled.minCoeff(), -1e-9);
            EXPECT_LE(scaled.maxCoeff(), 2.0 + 1e-9);
            EXPECT_EQ(step.converged->termination, Termination::EpsKkt);
            return;
        }
        s = step.state;
    }
    FAIL() << "no convergence";
}

TEST(NormalSolver, MatchesDenseNormalEquations) {
    Stream rng(3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto P = augment(fixtures::random_problem(6, seed), 0.5);
        const Vector w = interior_point_random(P, random_xi(rng, 6), 1e-3);
        const Matrix W = w.asDiagonal();
        const Matrix M = P.A_tilde * W * W * P.A_tilde.transpose();
        Vector r(12);
        for (int i = 0; i < 12; ++i) r(i) = rng.uniform(-1, 1);
        const detail::NormalSolver ns(P, w);
        const Vector ref = M.ldlt().solve(r);
        EXPECT_TRUE(ns.solve(r).isApprox(ref, 1e-9));
        EXPECT_TRUE(ns.apply(ref).isApprox(M * ref, 1e-12));
    }
}

TEST(Solve, SingleLinkSupportsLink) {
    const auto P = augment(fixtures::single(1.0, 0.2), 0.5);
    SolverConfig cfg;
    const auto r = checked_solve(P, cfg, interior_point_default(P));
    const Rounding x = round_to_power(r.w, P, 1e-3);
    EXPECT_NEAR(x.x(0), 1.0, 1e-3);
    EXPECT_EQ(x.support, (IndexSet{0}));
    expect_sound(r.certificate, r, P);
}

TEST(Solve, ThreeLinkHalfNormRecoversSparseOptimum) {
    const auto P = augment(fixtures::three_link(), 0.5);
    SolverConfig cfg;
    const auto best = multistart_solve(P, cfg, 100, 1);
    Vector xstar(3);
    xstar << 0.5, 0.5, 0.0;
    EXPECT_LE((best.x - xstar).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_EQ(best.support, (IndexSet{0, 1}));
}

TEST(Solve, ThreeLinkL1CollapsesToZero) {
    for (double alpha : {1e-9, 1.0 / 15.0, 0.3}) {
        const auto P = augment(fixtures::three_link(alpha), 1.0);
        SolverConfig cfg;
        cfg.epsilon = 1e-8;
        const auto r = solve_potential_reduction(P, cfg, interior_point_default(P));
        // f(0) = 1.5 is the optimum; for alpha below epsilon the objective is flat in x1, x2.
        EXPECT_LE(objective_f(r.w, P), 1.5 + 1e-6) << alpha;
        if (alpha > 1e-3) EXPECT_LE(r.w.head(3).cwiseAbs().maxCoeff(), 1e-4) << alpha;
        expect_sound(r.certificate, r, P);
    }
}

TEST(Solve, DecreaseInvariantAndCertificates) {
    Stream rng(12);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const int K = 3 + static_cast<int>(seed % 8);
        const double q = std::array<double, 3>{0.3, 0.5, 1.0}[seed % 3];
        const auto P = augment(fixtures::random_problem(K, 500 + seed), q);
        SolverConfig cfg;
        const Vector w0 = interior_point_random(P, random_xi(rng, K), 1e-3);
        const auto r = checked_solve(P, cfg, w0);
        EXPECT_LE(r.iterations, r.iteration_cap);
        if (r.iterations > 0) EXPECT_GE(r.min_decrease, kMinDecrease - 1e-9);
        EXPECT_LE(r.final_potential, r.initial_potential);
        expect_sound(r.certificate, r, P);
        EXPECT_LE(feasibility_error(r.w, P), 1e-10);
    }
}

TEST(Solve, TinyExponentStaysFinite) {
    const auto P = augment(fixtures::random_problem(6, 2), 0.01);
    SolverConfig cfg;
    const auto best = multistart_solve(P, cfg, 10, 3);
    EXPECT_TRUE(best.x.allFinite());
    for (const auto &c : best.certificates) EXPECT_NE(c.termination, Termination::IterationCap);
}

TEST(Solve, CertificateRecordsBothGapForms) {
    const auto P = augment(fixtures::three_link(), 0.5);
    const auto r = solve_potential_reduction(P, {}, interior_point_default(P));
    EXPECT_TRUE(std::isfinite(r.certificate.comp_gap_literal));
    EXPECT_EQ(r.certificate.lambda.size(), 6);
    EXPECT_GT(r.certificate.f, 0.0);
}

TEST(Solve, IterationCapIsReported) {
    const auto P = augment(fixtures::random_problem(5, 1), 0.5);
    SolverConfig cfg;
    cfg.absolute_cap = 3;
    const auto r = solve_potential_reduction(P, cfg, interior_point_default(P));
    EXPECT_EQ(r.iteration_cap, 3);
    EXPECT_EQ(r.iterations, 3);
    EXPECT_EQ(r.certificate.termination, Termination::IterationCap);
}

TEST(Solve, WritesTrace) {
    const auto path = std::filesystem::temp_directory_path() / "jpac_trace_test.jsonl";
    std::filesystem::remove(path);
    const auto P = augment(fixtures::three_link(), 0.5);
    SolverConfig cfg;
    cfg.trace_path = path;
    const auto r = solve_potential_reduction(P, cfg, interior_point_default(P));
    std::ifstream in(path);
    std::string line;
    long lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("iter") && j.contains("f") && j.contains("phi") && j.contains("norm_g"));
        ++lines;
    }
    EXPECT_EQ(lines, r.iterations + (r.certificate.termination == Termination::EpsKkt ? 1 : 0));
    std::filesystem::remove(path);
}

TEST(Rounding, ClipsAndThresholds) {
    const auto p = fixtures::three_link();
    const auto P = augment(p, 0.5);
    Vector w(9);
    w << 0.5, 0.5, 1e-9, 0, 0, 1.5, 0.5, 0.5, 1;
    const auto r = round_to_power(w, P, 1e-6);
    EXPECT_EQ(r.x, w.head(3));
    EXPECT_EQ(r.support, (IndexSet{0, 1}));
    EXPECT_EQ(round_to_power(w, P, std::numeric_limits<double>::infinity()).support, (IndexSet{0, 1, 2}));
    w(0) = 1.2;
    EXPECT_EQ(round_to_power(w, P, 1e-6).x(0), 1.0);
}

TEST(Multistart, SingleStartEqualsDefaultSolve) {
    const auto P = augment(fixtures::random_problem(6, 4), 0.5);
    SolverConfig cfg;
    const auto single = solve_potential_reduction(P, cfg, interior_point_default(P));
    const auto multi = multistart_solve(P, cfg, 1, 77);
    EXPECT_EQ(multi.w, single.w);
    EXPECT_EQ(multi.best_start, 0);
}

TEST(Multistart, DeterministicForSeed) {
    const auto P = augment(fixtures::random_problem(7, 4), 0.3);
    SolverConfig cfg;
    const auto a = multistart_solve(P, cfg, 8, 5);
    const auto b = multistart_solve(P, cfg, 8, 5);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.best_start, b.best_start);
    EXPECT_THROW(multistart_solve(P, cfg, 0, 5), InvalidInput);
}

TEST(Multistart, ScoreIsThresholdedL0Objective) {
    const auto P = augment(fixtures::random_problem(6, 8), 0.5);
    SolverConfig cfg;
    const auto best = multistart_solve(P, cfg, 5, 2);
    const double expected = (6 - static_cast<int>(best.support.size())) + P.c_tilde.dot(best.x);
    EXPECT_NEAR(best.score, expected, 1e-15);
    for (int s = 0; s < 5; ++s) {
        const auto r = solve_potential_reduction(P, cfg, multistart_point(P, cfg, s, 2));
        const auto x = round_to_power(r.w, P, cfg.zero_tol);
        const double score = (6 - static_cast<int>(x.support.size())) + P.c_tilde.dot(x.x);
        EXPECT_GE(score, best.score - 1e-12);
    }
}
