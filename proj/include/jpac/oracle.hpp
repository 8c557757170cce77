#pragma once

/**
 * \file   jpac/oracle.hpp
 * \brief  Exact small-scale references: l_0 enumeration, a vertex-enumeration
 *         LP solver for the l_1 problem, and the qbar search.
 */

#include <bit>
#include <cstdint>

#include "admission.hpp"

namespace jpac {

struct EnumerationResult {
    IndexSet best_support;   ///< positions
    Vector best_x;           ///< full length
    double objective = 0;    ///< ||b - A x||_0 + alpha pbar^T x
    bool is_unique_support = true;
    long admissible_sets = 0;
};

inline constexpr int kEnumerationMaxLinks = 20;
inline constexpr int kLpExactMaxLinks = 8;

namespace detail {

inline IndexSet mask_to_set(std::uint32_t mask, int K) {
    IndexSet out;
    for (int k = 0; k < K; ++k)
        if (mask & (1u << k)) out.push_back(k);
    return out;
}

inline double l0_objective(const NormalizedProblem &p, const Vector &x, double zero_tol) {
    const Vector r = p.b - p.A * x;
    const auto nonzero = (r.array().abs() > zero_tol).count();
    return static_cast<double>(nonzero) + p.alpha_value() * p.budgets.dot(x);
}

} // namespace detail

/**
 * Minimizes ||b - A x||_0 + alpha pbar^T x over the box by sweeping every
 * link subset. Admissible sets are closed under taking subsets, so a set is
 * only solved when each of its one-smaller subsets is admissible.
 * Ties: larger support, then lower power, then lexicographically smaller set.
 */
inline EnumerationResult enumerate_l0(const NormalizedProblem &p) {
    const int K = p.size();
    require(K >= 1 && K <= kEnumerationMaxLinks,
            "enumerate_l0 is limited to K <= " + std::to_string(kEnumerationMaxLinks));
    constexpr double zero_tol = 1e-9;
    constexpr double tie_tol = 1e-9;
    const std::uint32_t count = 1u << K;
    std::vector<char> ok(count, 0);
    ok[0] = 1;

    EnumerationResult best;
    best.best_x = Vector::Zero(K);
    best.objective = detail::l0_objective(p, best.best_x, zero_tol);
    double best_power = 0.0;
    int ties = 0;

    auto better = [&](double obj, int size, double power, const IndexSet &S) {
        if (obj < best.objective - tie_tol) return true;
        if (obj > best.objective + tie_tol) return false;
        const int best_size = static_cast<int>(best.best_support.size());
        if (size != best_size) return size > best_size;
        if (power != best_power) return power < best_power;
        return S < best.best_support;
    };

    for (std::uint32_t mask = 1; mask < count; ++mask) {
        bool candidate = true;
        for (std::uint32_t rest = mask; rest && candidate; rest &= rest - 1) {
            const std::uint32_t bit = rest & (~rest + 1);
            candidate = ok[mask ^ bit] != 0;
        }
        if (!candidate) continue;
        const IndexSet S = detail::mask_to_set(mask, K);
        const auto xs = admissible(p, S);
        if (!xs) continue;
        ok[mask] = 1;
        ++best.admissible_sets;
        Vector x = Vector::Zero(K);
        for (std::size_t i = 0; i < S.size(); ++i) x(S[i]) = (*xs)(static_cast<Eigen::Index>(i));
        const double power = p.alpha_value() * p.budgets.dot(x);
        const double obj = detail::l0_objective(p, x, zero_tol);
        const bool tied = std::abs(obj - best.objective) <= tie_tol;
        if (better(obj, static_cast<int>(S.size()), power, S)) {
            ties = tied ? ties + 1 : 0;
            best.best_support = S;
            best.best_x = std::move(x);
            best.objective = obj;
            best_power = power;
        } else if (tied) {
            ++ties;
        }
    }
    best.is_unique_support = ties == 0;
    return best;
}

struct LpSolution {
    Vector x;
    double objective = 0;  ///< e^T (b - A x) + alpha pbar^T x
    long vertices = 0;     ///< feasible basic points visited
};

inline double l1_objective(const NormalizedProblem &p, const Vector &x) {
    return (p.b - p.A * x).sum() + p.alpha_value() * p.budgets.dot(x);
}

/**
 * Exact optimum of min e^T (b - A x) + alpha pbar^T x over
 * {A x <= b, 0 <= x <= e} by visiting every basic point: each coordinate is
 * free or pinned at 0 or 1, and as many rows of A x = b as there are free
 * coordinates are made active. Ties go to the lexicographically smallest x.
 */
inline LpSolution lp_exact(const NormalizedProblem &p) {
    const int K = p.size();
    require(K >= 1 && K <= kLpExactMaxLinks, "lp_exact is limited to K <= " + std::to_string(kLpExactMaxLinks));
    constexpr double feas_tol = 1e-9;
    constexpr double tie_tol = 1e-12;
    const Vector cost = p.alpha_value() * p.budgets - p.A.transpose() * Vector::Ones(K);
    const double offset = p.b.sum();

    LpSolution best;
    bool found = false;
    auto consider = [&](const Vector &x) {
        const Vector slack = p.b - p.A * x;
        if (slack.minCoeff() < -feas_tol || x.minCoeff() < -feas_tol || x.maxCoeff() > 1.0 + feas_tol) return;
        ++best.vertices;
        const Vector xc = x.cwiseMax(0.0).cwiseMin(1.0);
        const double obj = offset + cost.dot(xc);
        const bool take = !found || obj < best.objective - tie_tol ||
                          (obj <= best.objective + tie_tol &&
                           std::lexicographical_compare(xc.data(), xc.data() + K, best.x.data(), best.x.data() + K));
        if (take) {
            best.x = xc;
            best.objective = obj;
            found = true;
        }
    };

    // status[k]: 0 free, 1 pinned at 0, 2 pinned at 1.
    std::vector<int> status(static_cast<std::size_t>(K), 0);
    long total = 1;
    for (int k = 0; k < K; ++k) total *= 3;
    for (long code = 0; code < total; ++code) {
        long c = code;
        IndexSet free;
        Vector x = Vector::Zero(K);
        for (int k = 0; k < K; ++k, c /= 3) {
            status[static_cast<std::size_t>(k)] = static_cast<int>(c % 3);
            if (status[static_cast<std::size_t>(k)] == 0) free.push_back(k);
            else if (status[static_cast<std::size_t>(k)] == 2) x(k) = 1.0;
        }
        const int nf = static_cast<int>(free.size());
        if (nf == 0) {
            consider(x);
            continue;
        }
        // Choose nf active rows among K.
        for (std::uint32_t rows = 0; rows < (1u << K); ++rows) {
            if (std::popcount(rows) != nf) continue;
            const IndexSet R = detail::mask_to_set(rows, K);
            Matrix M(nf, nf);
            Vector rhs(nf);
            for (int i = 0; i < nf; ++i) {
                rhs(i) = p.b(R[i]);
                for (int k = 0; k < K; ++k)
                    if (status[static_cast<std::size_t>(k)] == 2) rhs(i) -= p.A(R[i], k);
                for (int j = 0; j < nf; ++j) M(i, j) = p.A(R[i], free[j]);
            }
            const Eigen::FullPivLU<Matrix> lu(M);
            if (!lu.isInvertible()) continue;
            const Vector xf = lu.solve(rhs);
            Vector trial = x;
            for (int j = 0; j < nf; ++j) trial(free[j]) = xf(j);
            consider(trial);
        }
    }
    // x = 0 is always feasible, so at least one vertex exists.
    return best;
}

struct QbarResult {
    double qbar = 0;
    bool success = false;
    int grid_points_tried = 0;
    double alpha = 0;
    EnumerationResult benchmark;
    Vector best_x;  ///< multistart solution at the returned q (or the last q tried)
};

struct QbarConfig {
    SolverConfig solver;
    AlphaRule alpha_rule;
    std::uint64_t seed = 0;
    double match_tol = 1e-3;
    /// epsilon used at q = 1, where residuals only reach zero_tol with a tight target
    double l1_epsilon = 1e-9;
};

/// {0.01, 0.02, ..., 1.00}
inline std::vector<double> default_q_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 100; ++i) grid.push_back(i / 100.0);
    return grid;
}

/// Support-set equality plus an infinity-norm tolerance on the powers.
inline bool matches(const Vector &x, const IndexSet &support, const EnumerationResult &ref, double tol) {
    return support == ref.best_support && (x - ref.best_x).cwiseAbs().maxCoeff() <= tol;
}

/**
 * Scans the grid from the largest q downward and returns the first q at which
 * the N-start l_q solution reproduces the l_0 optimum. Every q uses the same
 * multistart seed, so trimming grid points below the answer cannot change it.
 */
inline QbarResult estimate_qbar(const NormalizedProblem &problem, int starts, std::vector<double> grid,
                                const QbarConfig &config = {}) {
    require(!grid.empty(), "q grid must be nonempty");
    require(starts >= 1, "qbar search needs at least one start");
    for (double q : grid) require(q > 0.0 && q <= 1.0, "q grid values must lie in (0, 1]");
    std::sort(grid.begin(), grid.end(), std::greater<>());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    QbarResult out;
    NormalizedProblem p = problem;
    p.alpha = select_alpha(p, config.alpha_rule);
    out.alpha = *p.alpha;
    out.benchmark = enumerate_l0(p);
    for (double q : grid) {
        ++out.grid_points_tried;
        const AugmentedProblem P = augment(p, q);
        SolverConfig solver = config.solver;
        if (q >= 1.0) solver.epsilon = std::min(solver.epsilon, config.l1_epsilon);
        const MultistartResult best = multistart_solve(P, solver, starts, config.seed);
        out.best_x = best.x;
        if (matches(best.x, best.support, out.benchmark, config.match_tol)) {
            out.qbar = q;
            out.success = true;
            return out;
        }
    }
    return out;
}

inline nlohmann::json to_json(const EnumerationResult &r, const NormalizedProblem &p) {
    std::vector<int> ids;
    for (int k : r.best_support) ids.push_back(p.link_ids[k]);
    std::vector<double> mw;
    for (int k : r.best_support) mw.push_back(r.best_x(k) * p.budgets(k) * 1e3);
    return {{"best_support", ids},
            {"best_x", std::vector<double>(r.best_x.data(), r.best_x.data() + r.best_x.size())},
            {"powers_mw", mw},
            {"objective", r.objective},
            {"is_unique_support", r.is_unique_support}};
}

} // namespace jpac
