#pragma once

/**
 * \file   jpac/lq_kernel.hpp
 * \brief  Potential-reduction interior-point solver for the slack-augmented
 *         l_q problem, with epsilon-KKT certificates and a multistart driver.
 *
 * The l_q approximation
 *
 *     min ||b - A x||_q^q + alpha pbar^T x   s.t.  A x <= b,  0 <= x <= e
 *
 * is solved in the standard form
 *
 *     min f(w) = c^T w1 + sum_k (w2)_k^q   s.t.  At w = bt,  w >= 0,
 *
 *     At = [A I 0; I 0 I],   bt = (b; e),   c = alpha pbar,   w = (w1; w2; w3),
 *
 * by reducing the potential
 *
 *     phi(w) = rho log f(w) - sum_n log w_n
 *
 * along the scaled projected direction g(w) with a fixed step radius beta.
 *
 * Iterates are carried as log(w). For small q the epsilon-KKT point puts the
 * w2 slack of every supported link near (f / (rho q))^(1/q), which underflows
 * a double once q drops to about 0.02; in log space the step
 * w+ = w (e + d) stays exact and the potential needs no exp at all.
 */

#include <cassert>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <variant>

#include "network.hpp"

namespace jpac {

struct AugmentedProblem {
    int K = 0;
    double q = 1.0;
    Matrix A;        ///< normalized channel matrix, K x K
    Vector b;        ///< normalized noise, length K
    Matrix A_tilde;  ///< 2K x 3K
    Vector b_tilde;  ///< (b; e)
    Vector c_tilde;  ///< alpha * pbar
};

enum class Termination { EpsOptimal, EpsKkt, IterationCap };

inline const char *to_string(Termination t) {
    switch (t) {
    case Termination::EpsOptimal: return "eps_optimal";
    case Termination::EpsKkt: return "eps_kkt";
    case Termination::IterationCap: return "iteration_cap";
    }
    return "unknown";
}

struct KktCertificate {
    Vector lambda;             ///< multipliers of At w = bt
    double dual_residual = 0;  ///< min_n [grad f - At^T lambda]_n
    double comp_gap = 0;       ///< w^T (grad f - At^T lambda) / f(w)
    double comp_gap_literal = 0; ///< sum_n (q w_n^q - [At^T lambda]_n w_n) / f(w), all 3K terms
    double f = 0;
    double norm_g = 0;
    double epsilon = 0;
    Termination termination = Termination::IterationCap;
    long iterations = 0;
};

struct SolverConfig {
    double epsilon = 1e-4;
    double beta = 1.0 - std::sqrt(3.0) / 3.0;
    double cap_constant = 10.0;
    long absolute_cap = 100000;
    double zero_tol = 1e-6;
    double init_margin = 1e-3;
    /// JSON-lines trace of every iteration; empty disables tracing.
    std::filesystem::path trace_path;

    /// rho = max{6K / eps, 2K / q}: above K/q for the epsilon-optimal test and
    /// at least 6K/eps so a small projected gradient certifies epsilon-KKT.
    double rho(int K, double q) const { return std::max(6.0 * K / epsilon, 2.0 * K / q); }

    /// C (K / min{eps, q}) log(1/eps), clipped to [1, absolute_cap].
    long iteration_cap(int K, double q) const {
        const double shaped = cap_constant * (K / std::min(epsilon, q)) * std::log(1.0 / epsilon);
        if (!(shaped < static_cast<double>(absolute_cap))) return absolute_cap;
        return std::max(1L, static_cast<long>(std::ceil(shaped)));
    }

    /// Potential level below which f(w) <= eps is guaranteed.
    double optimality_threshold(int K, double q) const {
        const double r = rho(K, q);
        return (r - K / q) * std::log(epsilon) + (K / q) * std::log(static_cast<double>(K)) + K * std::log(4.0);
    }
};

inline void validate(const SolverConfig &c) {
    require(c.epsilon > 0.0, "solver: epsilon must be positive");
    require(c.beta > 0.0 && c.beta < 1.0, "solver: beta must lie in (0, 1)");
    require(c.absolute_cap >= 1, "solver: iteration cap must be positive");
    require(c.zero_tol >= 0.0, "solver: zero_tol must be nonnegative");
    require(c.init_margin > 0.0 && c.init_margin < 0.5, "solver: init_margin must lie in (0, 0.5)");
}

struct IterateState {
    Vector log_w;        ///< log of the iterate; authoritative
    Vector w;            ///< exp(log_w); w2 entries may underflow for very small q
    double f = 0;
    double potential = 0;
    double rho = 0;
    double beta = 0;
    long iteration = 0;
};

inline AugmentedProblem augment(const NormalizedProblem &p, double q) {
    require(q > 0.0 && q <= 1.0, "exponent q must lie in (0, 1]");
    require(p.size() >= 1, "augment needs a nonempty problem");
    require((p.b.array() > 0.0).all(), "normalized noise b must be positive");
    const int K = p.size();
    AugmentedProblem out;
    out.K = K;
    out.q = q;
    out.A = p.A;
    out.b = p.b;
    out.A_tilde = Matrix::Zero(2 * K, 3 * K);
    out.A_tilde.topLeftCorner(K, K) = p.A;
    out.A_tilde.block(0, K, K, K).setIdentity();
    out.A_tilde.block(K, 0, K, K).setIdentity();
    out.A_tilde.block(K, 2 * K, K, K).setIdentity();
    out.b_tilde.resize(2 * K);
    out.b_tilde << p.b, Vector::Ones(K);
    out.c_tilde = p.alpha_value() * p.budgets;
    return out;
}

// ---------------------------------------------------------------------------
// Objective, gradient, potential
// ---------------------------------------------------------------------------

inline double objective_f(const Vector &w, const AugmentedProblem &P) {
    const int K = P.K;
    require(w.size() == 3 * K, "w must have length 3K");
    require((w.array() >= 0.0).all(), "objective needs w >= 0");
    const auto w2 = w.segment(K, K).array();
    return P.c_tilde.dot(w.head(K)) + w2.pow(P.q).sum();
}

inline Vector gradient_f(const Vector &w, const AugmentedProblem &P) {
    const int K = P.K;
    require(w.size() == 3 * K, "w must have length 3K");
    require((w.segment(K, K).array() > 0.0).all(), "gradient undefined when a w2 entry is not positive");
    Vector g = Vector::Zero(3 * K);
    g.head(K) = P.c_tilde;
    g.segment(K, K) = P.q * w.segment(K, K).array().pow(P.q - 1.0);
    return g;
}

inline double potential(const Vector &w, const AugmentedProblem &P, double rho) {
    require((w.array() > 0.0).all(), "potential needs w > 0");
    return rho * std::log(objective_f(w, P)) - w.array().log().sum();
}

namespace detail {

inline double objective_from_log(const Vector &log_w, const AugmentedProblem &P) {
    const int K = P.K;
    return P.c_tilde.dot(log_w.head(K).array().exp().matrix()) + (P.q * log_w.segment(K, K).array()).exp().sum();
}

inline double potential_from_log(const Vector &log_w, double f, double rho) {
    return rho * std::log(f) - log_w.sum();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Interior points
// ---------------------------------------------------------------------------

/// w(xi) = (xi o m; b - A (xi o m); e - xi o m) with m = min{b, e}.
inline Vector interior_point_random(const AugmentedProblem &P, const Vector &xi) {
    const int K = P.K;
    require(xi.size() == K, "xi must have length K");
    require((xi.array() > 0.0).all() && (xi.array() < 1.0).all(), "xi must lie strictly inside (0, 1)");
    const Vector m = P.b.cwiseMin(1.0);
    const Vector w1 = xi.cwiseProduct(m);
    Vector w(3 * K);
    w << w1, P.b - P.A * w1, Vector::Ones(K) - w1;
    return w;
}

inline Vector interior_point_random(const AugmentedProblem &P, const Vector &xi, double margin) {
    require((xi.array() >= margin).all() && (xi.array() <= 1.0 - margin).all(),
            "xi outside [margin, 1 - margin]");
    return interior_point_random(P, xi);
}

inline Vector interior_point_default(const AugmentedProblem &P) {
    return interior_point_random(P, Vector::Constant(P.K, 0.5));
}

inline double feasibility_error(const Vector &w, const AugmentedProblem &P) {
    return (P.A_tilde * w - P.b_tilde).cwiseAbs().maxCoeff();
}

inline IterateState make_state(const AugmentedProblem &P, const SolverConfig &config, const Vector &w) {
    require(w.size() == 3 * P.K, "w must have length 3K");
    require((w.array() > 0.0).all(), "initial point must be strictly positive");
    require(feasibility_error(w, P) <= 1e-10, "initial point violates At w = bt");
    IterateState s;
    s.log_w = w.array().log();
    s.w = w;
    s.rho = config.rho(P.K, P.q);
    s.beta = config.beta;
    s.f = detail::objective_from_log(s.log_w, P);
    s.potential = detail::potential_from_log(s.log_w, s.f, s.rho);
    return s;
}

// ---------------------------------------------------------------------------
// One potential-reduction step
// ---------------------------------------------------------------------------

namespace detail {

/// Pieces of the projected direction at one iterate.
struct Projection {
    Vector lambda;  ///< (At W^2 At^T)^{-1} At W (W grad f - (f/rho) e)
    Vector scaled;  ///< W (grad f - At^T lambda)
    Vector g;       ///< e - (rho/f) scaled
    double norm_g = 0;
};

/**
 * Solves (At W^2 At^T) lambda = r by block elimination. With
 * M11 = A W1^2 A^T + W2^2, M12 = A W1^2 and diagonal M22 = W1^2 + W3^2, the
 * Schur complement is A D A^T + W2^2, D = W1^2 W3^2 / (W1^2 + W3^2), so only a
 * K x K Cholesky factor is needed. A ridge is added to the diagonal of the
 * full 2K x 2K matrix when the factorization fails.
 */
class NormalSolver {
public:
    NormalSolver(const AugmentedProblem &P, const Vector &w) : P_(P) {
        const int K = P.K;
        const auto w1 = w.head(K).array();
        const auto w2 = w.segment(K, K).array();
        const auto w3 = w.tail(K).array();
        w1sq_ = w1.square();
        w2sq_ = w2.square();
        w3sq_ = w3.square();
        const double trace = (P.A.colwise().squaredNorm().transpose().array() * w1sq_).sum() + w2sq_.sum() +
                             w1sq_.sum() + w3sq_.sum();
        double ridge = 0.0;
        for (int attempt = 0; attempt <= 3; ++attempt) {
            m22_ = w1sq_ + w3sq_ + ridge;
            const Vector d = w1sq_ * (w3sq_ + ridge) / m22_; // = W1^2 - W1^4 / M22 without cancellation
            Matrix S = P.A * d.asDiagonal() * P.A.transpose();
            S.diagonal().array() += w2sq_ + ridge;
            llt_.compute(S);
            if (llt_.info() == Eigen::Success && m22_.minCoeff() > 0.0) {
                ridge_ = ridge;
                return;
            }
            ridge = (ridge == 0.0) ? 1e-12 * trace / (2.0 * K) : ridge * 1e3;
            if (!(ridge > 0.0)) ridge = 1e-300;
        }
        throw SolverFailure("normal matrix At W^2 At^T is numerically singular");
    }

    /// M x with M = At W^2 At^T (+ ridge I).
    Vector apply(const Vector &x) const {
        const int K = P_.K;
        const Vector x1 = x.head(K), x2 = x.tail(K);
        const Vector u = w1sq_.matrix().cwiseProduct(P_.A.transpose() * x1 + x2);
        Vector out(2 * K);
        out.head(K) = P_.A * u + (w2sq_ + ridge_).matrix().cwiseProduct(x1);
        out.tail(K) = u + (w3sq_ + ridge_).matrix().cwiseProduct(x2);
        return out;
    }

    Vector solve(const Vector &r) const {
        Vector x = solve_once(r);
        // One refinement sweep against the unfactored product.
        x += solve_once(r - apply(x));
        return x;
    }

private:
    Vector solve_once(const Vector &r) const {
        const int K = P_.K;
        const Vector r1 = r.head(K), r2 = r.tail(K);
        // M12 M22^{-1} r2 = A W1^2 M22^{-1} r2
        const Vector t = (w1sq_ / m22_).matrix().cwiseProduct(r2);
        const Vector l1 = llt_.solve(r1 - P_.A * t);
        const Vector l2 = ((r2 - w1sq_.matrix().cwiseProduct(P_.A.transpose() * l1)).array() / m22_).matrix();
        Vector out(2 * K);
        out << l1, l2;
        return out;
    }

    const AugmentedProblem &P_;
    Eigen::ArrayXd w1sq_, w2sq_, w3sq_, m22_;
    Eigen::LLT<Matrix> llt_;
    double ridge_ = 0.0;
};

/// W grad f: (w1 o c; q w2^q; 0), evaluated from log w so it never overflows.
inline Vector scaled_gradient(const IterateState &s, const AugmentedProblem &P) {
    const int K = P.K;
    Vector out = Vector::Zero(3 * K);
    out.head(K) = s.w.head(K).cwiseProduct(P.c_tilde);
    out.segment(K, K) = P.q * (P.q * s.log_w.segment(K, K).array()).exp();
    return out;
}

/// At^T lambda.
inline Vector at_transpose(const AugmentedProblem &P, const Vector &lambda) {
    const int K = P.K;
    Vector out(3 * K);
    out.head(K) = P.A.transpose() * lambda.head(K) + lambda.tail(K);
    out.segment(K, K) = lambda.head(K);
    out.tail(K) = lambda.tail(K);
    return out;
}

/// At W z.
inline Vector at_w(const AugmentedProblem &P, const Vector &w, const Vector &z) {
    const int K = P.K;
    const Vector wz = w.cwiseProduct(z);
    Vector out(2 * K);
    out.head(K) = P.A * wz.head(K) + wz.segment(K, K);
    out.tail(K) = wz.head(K) + wz.tail(K);
    return out;
}

inline Projection project(const IterateState &s, const AugmentedProblem &P) {
    const Vector wgrad = scaled_gradient(s, P);
    const NormalSolver solver(P, s.w);
    Projection out;
    out.lambda = solver.solve(at_w(P, s.w, wgrad - Vector::Constant(3 * P.K, s.f / s.rho)));
    out.scaled = wgrad - s.w.cwiseProduct(at_transpose(P, out.lambda));
    out.g = Vector::Ones(3 * P.K) - (s.rho / s.f) * out.scaled;
    // Near a degenerate vertex lambda is huge and g loses At W g = 0 to
    // cancellation; one re-projection recovers it. g - W At^T mu corresponds
    // to lambda - (f / rho) mu.
    const Vector leak = at_w(P, s.w, out.g);
    if (leak.cwiseAbs().maxCoeff() > 1e-14) {
        const Vector mu = solver.solve(leak);
        const Vector fix = s.w.cwiseProduct(at_transpose(P, mu));
        if (fix.allFinite()) {
            out.g -= fix;
            out.lambda -= (s.f / s.rho) * mu;
            out.scaled += (s.f / s.rho) * fix;
        }
    }
    out.norm_g = out.g.norm();
    return out;
}

inline KktCertificate certify(const IterateState &s, const AugmentedProblem &P, const Projection &proj,
                              const SolverConfig &config, Termination why) {
    const int K = P.K;
    KktCertificate c;
    c.lambda = proj.lambda;
    c.f = s.f;
    c.norm_g = proj.norm_g;
    c.epsilon = config.epsilon;
    c.termination = why;
    c.iterations = s.iteration;
    c.comp_gap = proj.scaled.sum() / s.f;

    const Vector at_lambda = at_transpose(P, proj.lambda);
    double residual = std::numeric_limits<double>::infinity();
    for (int n = 0; n < 3 * K; ++n) {
        double r;
        if (s.w(n) > 0.0) {
            r = proj.scaled(n) / s.w(n);
        } else {
            // Underflowed w2 slack: q w^(q-1) is astronomically large.
            r = P.q * std::exp((P.q - 1.0) * s.log_w(n)) - at_lambda(n);
        }
        residual = std::min(residual, r);
    }
    c.dual_residual = residual;

    double literal = 0.0;
    for (int n = 0; n < 3 * K; ++n)
        literal += P.q * std::exp(P.q * s.log_w(n)) - at_lambda(n) * s.w(n);
    c.comp_gap_literal = literal / s.f;
    return c;
}

/**
 * Removes the roundoff drift in At w = bt with the W^2-weighted least-change
 * correction dw = -W^2 At^T (At W^2 At^T)^{-1} r, applied multiplicatively
 * so positivity is kept. Corrections that move an entry by more than half are
 * rejected.
 */
inline void restore_feasibility(IterateState &s, const AugmentedProblem &P) {
    for (int sweep = 0; sweep < 3; ++sweep) {
        const Vector r = P.A_tilde * s.w - P.b_tilde;
        if (r.cwiseAbs().maxCoeff() <= 1e-11) return;
        const NormalSolver solver(P, s.w);
        const Vector rel = -s.w.cwiseProduct(at_transpose(P, solver.solve(r)));
        if (!rel.allFinite() || rel.cwiseAbs().maxCoeff() > 0.5) return;
        s.log_w += rel.array().log1p().matrix();
        s.w = s.log_w.array().exp();
    }
}

} // namespace detail

struct StepReport {
    IterateState state;                        ///< next iterate, or the input when converged
    double norm_g = 0;
    double decrease = 0;                       ///< phi(w) - phi(w+), 0 when converged
    std::optional<KktCertificate> converged;   ///< set when ||g|| <= 1
};

inline StepReport reduction_step(const IterateState &state, const AugmentedProblem &P,
                                 const SolverConfig &config = {}) {
    const int K = P.K;
    const detail::Projection proj = detail::project(state, P);
    StepReport out;
    out.norm_g = proj.norm_g;
    if (!std::isfinite(proj.norm_g)) throw SolverFailure("projected direction is not finite");
    if (proj.norm_g <= 1.0) {
        out.state = state;
        out.converged = detail::certify(state, P, proj, config, Termination::EpsKkt);
        return out;
    }

    const Vector d = (state.beta / proj.norm_g) * proj.g;
    const Vector log_step = d.array().log1p();
    IterateState next = state;
    next.log_w = state.log_w + log_step;
    next.w = next.log_w.array().exp();
    next.iteration = state.iteration + 1;
    assert((next.w.head(K).array() > 0.0).all());

    // f(w+) - f(w) evaluated term by term to keep the potential change exact.
    double df = P.c_tilde.dot(state.w.head(K).cwiseProduct(d.head(K)));
    for (int k = 0; k < K; ++k)
        df += std::exp(P.q * state.log_w(K + k)) * std::expm1(P.q * log_step(K + k));
    detail::restore_feasibility(next, P);
    next.f = detail::objective_from_log(next.log_w, P);
    next.potential = detail::potential_from_log(next.log_w, next.f, next.rho);
    out.decrease = -(state.rho * std::log1p(df / state.f) - log_step.sum());
    out.state = std::move(next);
    return out;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct SolveResult {
    Vector w;
    KktCertificate certificate;
    long iterations = 0;
    long iteration_cap = 0;
    double min_decrease = std::numeric_limits<double>::infinity(); ///< over accepted steps
    double initial_potential = 0;
    double final_potential = 0;
};

inline SolveResult solve_potential_reduction(const AugmentedProblem &P, const SolverConfig &config,
                                             const Vector &w_init) {
    validate(config);
    IterateState state = make_state(P, config, w_init);
    const double threshold = config.optimality_threshold(P.K, P.q);
    const long cap = config.iteration_cap(P.K, P.q);

    std::ofstream trace;
    if (!config.trace_path.empty()) {
        trace.open(config.trace_path, std::ios::app);
        if (!trace) throw InvalidInput("cannot open trace file " + config.trace_path.string());
    }

    SolveResult out;
    out.iteration_cap = cap;
    out.initial_potential = state.potential;
    auto finish = [&](const IterateState &s, KktCertificate cert) {
        out.w = s.w;
        out.iterations = s.iteration;
        out.final_potential = s.potential;
        out.certificate = std::move(cert);
        return out;
    };

    for (;;) {
        if (state.potential <= threshold) {
            const auto proj = detail::project(state, P);
            return finish(state, detail::certify(state, P, proj, config, Termination::EpsOptimal));
        }
        if (state.iteration >= cap) {
            const auto proj = detail::project(state, P);
            return finish(state, detail::certify(state, P, proj, config, Termination::IterationCap));
        }
        StepReport step = reduction_step(state, P, config);
        if (trace) {
            nlohmann::json rec = {{"iter", state.iteration}, {"f", state.f}, {"phi", state.potential},
                                  {"norm_g", step.norm_g}};
            trace << rec.dump() << '\n';
        }
        if (step.converged) return finish(state, std::move(*step.converged));
        out.min_decrease = std::min(out.min_decrease, step.decrease);
        state = std::move(step.state);
    }
}

// ---------------------------------------------------------------------------
// Rounding and multistart
// ---------------------------------------------------------------------------

struct Rounding {
    Vector x;          ///< clip(w1, 0, 1)
    IndexSet support;  ///< {k : [b - A x]_k <= zero_tol}
    Vector residual;   ///< b - A x
};

inline Rounding round_to_power(const Vector &w, const AugmentedProblem &P, double zero_tol) {
    require(w.size() == 3 * P.K, "w must have length 3K");
    Rounding out;
    out.x = w.head(P.K).cwiseMax(0.0).cwiseMin(1.0);
    out.residual = P.b - P.A * out.x;
    for (int k = 0; k < P.K; ++k)
        if (out.residual(k) <= zero_tol) out.support.push_back(k);
    return out;
}

struct MultistartResult {
    Vector x;
    IndexSet support;
    double score = 0;        ///< #{k : residual_k > tau} + c^T x
    double power_term = 0;   ///< c^T x
    int best_start = -1;
    Vector w;
    std::vector<KktCertificate> certificates; ///< one per successful start
    int failed_starts = 0;
    long total_iterations = 0;
};

/// Start 0 is the default interior point; start s >= 1 draws xi from child_seed(seed, s).
inline Vector multistart_point(const AugmentedProblem &P, const SolverConfig &config, int start,
                               std::uint64_t seed) {
    if (start == 0) return interior_point_default(P);
    Stream rng(child_seed(seed, static_cast<std::uint64_t>(start)));
    Vector xi(P.K);
    for (int k = 0; k < P.K; ++k) xi(k) = rng.uniform(config.init_margin, 1.0 - config.init_margin);
    return interior_point_random(P, xi, config.init_margin);
}

inline MultistartResult multistart_solve(const AugmentedProblem &P, const SolverConfig &config, int starts,
                                         std::uint64_t seed) {
    require(starts >= 1, "multistart needs at least one start");
    MultistartResult best;
    constexpr double tie_tol = 1e-12;
    for (int s = 0; s < starts; ++s) {
        SolveResult run;
        try {
            run = solve_potential_reduction(P, config, multistart_point(P, config, s, seed));
        } catch (const SolverFailure &) {
            ++best.failed_starts;
            continue;
        }
        best.total_iterations += run.iterations;
        Rounding r = round_to_power(run.w, P, config.zero_tol);
        const double power = P.c_tilde.dot(r.x);
        const double score = static_cast<double>(P.K - static_cast<int>(r.support.size())) + power;
        best.certificates.push_back(run.certificate);
        const bool better = best.best_start < 0 || score < best.score - tie_tol ||
                            (std::abs(score - best.score) <= tie_tol && power < best.power_term);
        if (better) {
            best.x = std::move(r.x);
            best.support = std::move(r.support);
            best.score = score;
            best.power_term = power;
            best.best_start = s;
            best.w = run.w;
        }
    }
    if (best.best_start < 0) throw SolverFailure("every multistart run failed");
    return best;
}

} // namespace jpac
