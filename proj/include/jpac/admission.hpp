#pragma once

/**
 * \file   jpac/admission.hpp
 * \brief  Deflation-based joint power and admission control.
 *
 * Both drivers share one skeleton:
 *
 *   1. preprocessing: drop the link with the largest total coupling until the
 *      cheap necessary condition for full supportability holds;
 *   2. power control: solve an approximation of the sparse problem on the
 *      remaining links (l_1 via the kernel at q = 1 for NLPD, multistart l_q
 *      for LQMD);
 *   3. if the remaining set is admissible, stop; otherwise drop the link
 *      chosen from the approximate residuals and go back to 2;
 *   4. postprocessing: try to re-admit removed links.
 *
 * Admissibility is always decided exactly by a linear solve on A_SS.
 */

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "lq_kernel.hpp"

namespace jpac {

// ---------------------------------------------------------------------------
// Exact supportability
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix principal(const Matrix &A, const IndexSet &S) {
    const auto n = static_cast<Eigen::Index>(S.size());
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) out(i, j) = A(S[i], S[j]);
    return out;
}

inline Vector gather(const Vector &v, const IndexSet &S) {
    Vector out(static_cast<Eigen::Index>(S.size()));
    for (std::size_t i = 0; i < S.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(S[i]);
    return out;
}

} // namespace detail

inline constexpr double kAdmissibleTol = 1e-10;

/**
 * Minimum normalized powers x_S = A_SS^{-1} b_S when S is admissible.
 *
 * S is admissible iff A_SS is invertible with a nonnegative inverse and the
 * solution stays inside the box; the inverse is checked column by column.
 */
inline std::optional<Vector> admissible(const NormalizedProblem &p, const IndexSet &S) {
    require(!S.empty(), "admissible needs a nonempty index set");
    const Matrix ASS = detail::principal(p.A, S);
    const Eigen::FullPivLU<Matrix> lu(ASS);
    if (!lu.isInvertible()) return std::nullopt;
    const Vector x = lu.solve(detail::gather(p.b, S));
    if (!x.allFinite() || x.minCoeff() < -kAdmissibleTol || x.maxCoeff() > 1.0 + kAdmissibleTol) return std::nullopt;
    const Matrix inv = lu.inverse();
    if (inv.minCoeff() < -kAdmissibleTol) return std::nullopt;
    return x.cwiseMax(0.0).cwiseMin(1.0);
}

inline IndexSet all_positions(int n) {
    IndexSet out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
}

/// Full-length x with x_S = A_SS^{-1} b_S and zeros elsewhere.
inline Vector min_power_allocation(const NormalizedProblem &p, const IndexSet &S) {
    Vector x = Vector::Zero(p.size());
    if (S.empty()) return x;
    const auto xs = admissible(p, S);
    if (!xs) throw InvalidInput("min_power_allocation: link set is not admissible");
    for (std::size_t i = 0; i < S.size(); ++i) x(S[i]) = (*xs)(static_cast<Eigen::Index>(i));
    return x;
}

/// Fixed-point power update x+ = b_S + (I - A)_SS x on an admissible set.
inline Vector foschini_miljanic(const NormalizedProblem &p, const IndexSet &S, const Vector &x0, double tol = 1e-13,
                                long max_iter = 1000000) {
    require(!S.empty(), "foschini_miljanic needs a nonempty index set");
    require(x0.size() == static_cast<Eigen::Index>(S.size()), "x0 must have one entry per link in S");
    require((x0.array() >= 0.0).all(), "x0 must be nonnegative");
    const auto n = static_cast<Eigen::Index>(S.size());
    const Matrix B = Matrix::Identity(n, n) - detail::principal(p.A, S);
    const Vector bS = detail::gather(p.b, S);
    Vector x = x0;
    for (long it = 0; it < max_iter; ++it) {
        Vector next = bS + B * x;
        const double change = (next - x).cwiseAbs().maxCoeff();
        x = std::move(next);
        if (change <= tol) return x;
        if (!x.allFinite()) break;
    }
    throw SolverFailure("Foschini-Miljanic iteration did not converge; the set is at best marginally admissible");
}

// ---------------------------------------------------------------------------
// Removal rules
// ---------------------------------------------------------------------------

/// (mu+)^T e - (mu- + e)^T b with mu = A^T e; nonnegative when full support is possible.
inline double necessary_condition_value(const NormalizedProblem &p) {
    const Vector mu = p.A.transpose() * Vector::Ones(p.size());
    const Vector plus = mu.cwiseMax(0.0);
    const Vector minus = (-mu).cwiseMax(0.0);
    return plus.sum() - (minus + Vector::Ones(p.size())).dot(p.b);
}

inline bool necessary_condition(const NormalizedProblem &p) { return necessary_condition_value(p) >= 0.0; }

namespace detail {

// argmax with ties broken toward the smallest original link id.
inline int argmax_by_id(const Vector &score, const std::vector<int> &ids) {
    int best = 0;
    for (int k = 1; k < score.size(); ++k) {
        if (score(k) > score(best) || (score(k) == score(best) && ids[k] < ids[best])) best = k;
    }
    return best;
}

} // namespace detail

/// Per-link coupling score sum_{j!=k} |a_kj| + sum_{j!=k} |a_jk| + b_k.
inline Vector coupling_scores(const NormalizedProblem &p) {
    const Matrix off = p.A.cwiseAbs() - Matrix::Identity(p.size(), p.size());
    return off.rowwise().sum() + off.colwise().sum().transpose() + p.b;
}

/// Residual-weighted score sum_{j!=k} (|a_kj| r_j + |a_jk| r_k), r = b - A x.
inline Vector residual_scores(const NormalizedProblem &p, const Vector &x) {
    require(x.size() == p.size(), "x must have one entry per link");
    const Vector r = p.b - p.A * x;
    const Matrix off = p.A.cwiseAbs() - Matrix::Identity(p.size(), p.size());
    return off * r + off.colwise().sum().transpose().cwiseProduct(r);
}

inline int removal_candidate(const NormalizedProblem &p, const Vector &x) {
    return detail::argmax_by_id(residual_scores(p, x), p.link_ids);
}

enum class RemovalStage { Preprocess, Deflate };

inline const char *to_string(RemovalStage s) { return s == RemovalStage::Preprocess ? "preprocess" : "deflate"; }

struct Removal {
    int link = -1;
    RemovalStage stage = RemovalStage::Preprocess;
    double score = 0;
    long solver_iterations = 0;  ///< kernel iterations spent in the round that chose this link
};

struct PreprocessResult {
    NormalizedProblem reduced;
    std::vector<Removal> removed;
};

inline PreprocessResult preprocess(const NormalizedProblem &p) {
    PreprocessResult out{p, {}};
    while (out.reduced.size() >= 2 && !necessary_condition(out.reduced)) {
        const Vector score = coupling_scores(out.reduced);
        const int k0 = detail::argmax_by_id(score, out.reduced.link_ids);
        out.removed.push_back({out.reduced.link_ids[k0], RemovalStage::Preprocess, score(k0), 0});
        out.reduced = restrict(out.reduced, complement_of(out.reduced.size(), k0));
    }
    return out;
}

struct PostprocessResult {
    IndexSet admitted;    ///< positions in the problem, ascending
    IndexSet readmitted;  ///< in the order they were restored
};

/// Re-admit removed links (scanned newest first) until a full pass adds nothing.
inline PostprocessResult postprocess(const NormalizedProblem &p, IndexSet admitted, const IndexSet &removed) {
    PostprocessResult out;
    std::sort(admitted.begin(), admitted.end());
    std::vector<int> pending(removed.rbegin(), removed.rend());
    for (bool changed = true; changed;) {
        changed = false;
        for (auto it = pending.begin(); it != pending.end();) {
            IndexSet trial = admitted;
            trial.insert(std::upper_bound(trial.begin(), trial.end(), *it), *it);
            if (admissible(p, trial)) {
                admitted = std::move(trial);
                out.readmitted.push_back(*it);
                it = pending.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }
    }
    out.admitted = std::move(admitted);
    return out;
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

struct AdmissionStats {
    int solver_calls = 0;       ///< kernel runs (one per multistart start)
    long total_iterations = 0;
    int deflation_rounds = 0;
};

struct AdmissionResult {
    std::vector<int> admitted;  ///< original link ids, ascending
    Vector powers_w;            ///< one entry per admitted link, same order
    Vector x;                   ///< full-length normalized powers
    std::vector<Removal> removal_trace;
    std::vector<int> readmitted;
    AdmissionStats stats;

    int supported() const { return static_cast<int>(admitted.size()); }
    double total_power_w() const { return powers_w.sum(); }
};

class DeflationError : public SolverFailure {
public:
    DeflationError(const std::string &what, AdmissionResult partial)
        : SolverFailure(what), partial_(std::move(partial)) {}
    const AdmissionResult &partial() const { return partial_; }

private:
    AdmissionResult partial_;
};

struct DeflationConfig {
    SolverConfig solver;
    AlphaRule alpha_rule;
    std::uint64_t seed = 0;
};

namespace detail {

struct PowerControl {
    Vector x;
    long iterations = 0;
    int calls = 0;
};

template <class PowerStep>
AdmissionResult deflate(const NormalizedProblem &problem, PowerStep &&power_step) {
    AdmissionResult result;
    PreprocessResult pre = preprocess(problem);
    result.removal_trace = pre.removed;
    NormalizedProblem current = std::move(pre.reduced);

    bool empty = false;
    for (;;) {
        if (admissible(current, all_positions(current.size()))) break;
        if (current.size() == 1) {
            // A lone link with b_k > 1 cannot be supported even without interference.
            result.removal_trace.push_back({current.link_ids[0], RemovalStage::Deflate, 0.0, 0});
            empty = true;
            break;
        }
        PowerControl pc;
        try {
            pc = power_step(current, result.stats.deflation_rounds);
        } catch (const SolverFailure &e) {
            throw DeflationError(std::string("power control failed: ") + e.what(), result);
        }
        result.stats.solver_calls += pc.calls;
        result.stats.total_iterations += pc.iterations;
        ++result.stats.deflation_rounds;
        const Vector score = residual_scores(current, pc.x);
        const int k0 = argmax_by_id(score, current.link_ids);
        result.removal_trace.push_back({current.link_ids[k0], RemovalStage::Deflate, score(k0), pc.iterations});
        current = restrict(current, complement_of(current.size(), k0));
    }

    // Link ids of `problem` map to positions through its own link_ids.
    auto position_of = [&](int id) {
        const auto it = std::find(problem.link_ids.begin(), problem.link_ids.end(), id);
        return static_cast<int>(it - problem.link_ids.begin());
    };
    IndexSet admitted;
    if (!empty)
        for (int id : current.link_ids) admitted.push_back(position_of(id));
    IndexSet removed;
    for (const auto &r : result.removal_trace) removed.push_back(position_of(r.link));

    PostprocessResult post = postprocess(problem, admitted, removed);
    result.x = min_power_allocation(problem, post.admitted);
    result.powers_w.resize(static_cast<Eigen::Index>(post.admitted.size()));
    for (std::size_t i = 0; i < post.admitted.size(); ++i) {
        const int k = post.admitted[i];
        result.admitted.push_back(problem.link_ids[k]);
        result.powers_w(static_cast<Eigen::Index>(i)) = result.x(k) * problem.budgets(k);
    }
    for (int k : post.readmitted) result.readmitted.push_back(problem.link_ids[k]);
    return result;
}

} // namespace detail

/// NLPD: l_1 power control (kernel at q = 1, one default start) with the problem's alpha.
inline AdmissionResult run_nlpd(const NormalizedProblem &problem, const DeflationConfig &config = {}) {
    problem.alpha_value();
    return detail::deflate(problem, [&](const NormalizedProblem &current, int) {
        const AugmentedProblem P = augment(current, 1.0);
        const SolveResult run = solve_potential_reduction(P, config.solver, interior_point_default(P));
        return detail::PowerControl{round_to_power(run.w, P, config.solver.zero_tol).x, run.iterations, 1};
    });
}

/// LQMD: alpha re-selected on every round, l_q power control by N-start multistart.
inline AdmissionResult run_lqmd(const NormalizedProblem &problem, double q, int starts,
                                const DeflationConfig &config = {}) {
    require(q > 0.0 && q <= 1.0, "LQMD exponent q must lie in (0, 1]");
    require(starts >= 1, "LQMD needs at least one start");
    return detail::deflate(problem, [&](const NormalizedProblem &current, int round) {
        NormalizedProblem weighted = current;
        weighted.alpha = select_alpha(current, config.alpha_rule);
        const AugmentedProblem P = augment(weighted, q);
        const MultistartResult best =
            multistart_solve(P, config.solver, starts, child_seed(config.seed, static_cast<std::uint64_t>(round)));
        return detail::PowerControl{best.x, best.total_iterations, starts - best.failed_starts};
    });
}

inline nlohmann::json to_json(const AdmissionResult &r) {
    nlohmann::json j;
    j["admitted"] = r.admitted;
    std::vector<double> mw;
    for (Eigen::Index i = 0; i < r.powers_w.size(); ++i) mw.push_back(r.powers_w(i) * 1e3);
    j["powers_mw"] = mw;
    auto trace = nlohmann::json::array();
    for (const auto &rm : r.removal_trace)
        trace.push_back({{"link", rm.link}, {"stage", to_string(rm.stage)}, {"score", rm.score},
                         {"solver_iterations", rm.solver_iterations}});
    j["removal_trace"] = trace;
    j["readmitted"] = r.readmitted;
    j["stats"] = {{"solver_calls", r.stats.solver_calls},
                  {"total_iterations", r.stats.total_iterations},
                  {"deflation_rounds", r.stats.deflation_rounds}};
    return j;
}

} // namespace jpac
