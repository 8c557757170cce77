#pragma once

/**
 * \file   jpac/network.hpp
 * \brief  Physical interference model and its normalized sparse form.
 *
 * A link k is supported at power vector p when
 *
 *     SINR_k(p) = g_kk p_k / (eta_k + sum_{j != k} g_kj p_j) >= gamma_k.
 *
 * With x_k = p_k / pbar_k the constraint becomes [A x - b]_k >= 0, where A has
 * unit diagonal and non-positive off-diagonals and b_k > 0 is the normalized
 * noise. Everything downstream (kernel, deflation, oracles) works on (A, b).
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace jpac {

/// Transmitter and receiver positions in meters, one row (x, y) per link.
struct Geometry {
    Matrix tx;
    Matrix rx;
};

struct NetworkInstance {
    int K = 0;
    Matrix gains;        ///< gains(k, j): transmitter j to receiver k
    Vector noise;        ///< watts
    Vector sinr_targets; ///< linear
    Vector budgets;      ///< watts
    std::optional<Geometry> geometry;
};

/// Normalized problem (A, b, pbar) plus the weight alpha of the power term.
struct NormalizedProblem {
    Matrix A;
    Vector b;
    Vector budgets;
    std::optional<double> alpha;
    std::vector<int> link_ids; ///< row position -> original link id

    int size() const { return static_cast<int>(b.size()); }

    double alpha_value() const {
        require(alpha.has_value(), "normalized problem has no alpha set");
        return *alpha;
    }

    /// alpha_1 = 1 / (e^T pbar), the upper limit for alpha.
    double alpha_limit() const { return 1.0 / budgets.sum(); }
};

inline void validate(const NetworkInstance &net) {
    const auto K = static_cast<Eigen::Index>(net.K);
    require(net.K >= 1, "instance must have at least one link");
    require(net.gains.rows() == K && net.gains.cols() == K, "gains must be K x K");
    require(net.noise.size() == K && net.sinr_targets.size() == K && net.budgets.size() == K,
            "noise, targets and budgets must have length K");
    for (Eigen::Index k = 0; k < K; ++k) {
        require(net.gains(k, k) > 0.0, "diagonal gain of link " + std::to_string(k) + " must be positive");
        require(net.noise(k) > 0.0, "noise power must be positive");
        require(net.sinr_targets(k) > 0.0, "SINR target must be positive");
        require(net.budgets(k) > 0.0, "power budget must be positive");
    }
    require((net.gains.array() >= 0.0).all(), "channel gains must be nonnegative");
    require(net.gains.allFinite(), "channel gains must be finite");
    if (net.geometry) {
        require(net.geometry->tx.rows() == K && net.geometry->tx.cols() == 2 &&
                    net.geometry->rx.rows() == K && net.geometry->rx.cols() == 2,
                "geometry must hold K (x, y) rows for tx and rx");
    }
}

inline Vector sinr(const NetworkInstance &net, const Vector &p) {
    require(p.size() == net.K, "power vector length must equal K");
    Vector out(net.K);
    for (int k = 0; k < net.K; ++k) {
        double interference = net.noise(k);
        for (int j = 0; j < net.K; ++j)
            if (j != k) interference += net.gains(k, j) * p(j);
        out(k) = net.gains(k, k) * p(k) / interference;
    }
    return out;
}

inline NormalizedProblem normalize(const NetworkInstance &net) {
    validate(net);
    const int K = net.K;
    NormalizedProblem out;
    out.A = Matrix::Identity(K, K);
    out.b.resize(K);
    out.budgets = net.budgets;
    out.link_ids.resize(K);
    std::iota(out.link_ids.begin(), out.link_ids.end(), 0);
    for (int k = 0; k < K; ++k) {
        const double gkk = net.gains(k, k);
        // (gamma eta / g) / pbar: for budgets built as 2 (gamma eta / g) this is exactly 0.5.
        out.b(k) = (net.sinr_targets(k) * net.noise(k) / gkk) / net.budgets(k);
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            out.A(k, j) = -net.sinr_targets(k) * net.gains(k, j) * net.budgets(j) / (gkk * net.budgets(k));
        }
    }
    return out;
}

namespace detail {

// One run of shifted power iteration on M + I. For nonnegative M the Perron
// root of M + I is rho(M) + 1 and strictly dominates every other eigenvalue in
// modulus, so the periodic case (e.g. bipartite patterns) still converges.
// Collatz-Wielandt bounds min/max (Bv)_i / v_i bracket the root for v > 0.
inline std::optional<double> perron_root(const Matrix &M, Vector v, double rtol, int max_iter) {
    const Eigen::Index n = M.rows();
    for (int it = 0; it < max_iter; ++it) {
        Vector w = M * v + v;
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = w(i) / v(i);
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        v = w / w.maxCoeff();
        if (hi - lo <= rtol * hi) {
            // Re-bracket on M itself so small roots keep their relative accuracy.
            const Vector mv = M * v;
            const double ulo = (mv.array() / v.array()).minCoeff();
            const double uhi = (mv.array() / v.array()).maxCoeff();
            if (uhi - ulo <= 1e-11 * uhi) return 0.5 * (ulo + uhi);
            return 0.5 * (lo + hi) - 1.0;
        }
        if ((v.array() <= 0.0).any()) return std::nullopt;
    }
    return std::nullopt;
}

} // namespace detail

/// Spectral radius of a square nonnegative matrix.
inline double spectral_radius(const Matrix &M) {
    require(M.rows() == M.cols(), "spectral_radius needs a square matrix");
    const Eigen::Index n = M.rows();
    if (n == 0 || M.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    require((M.array() >= 0.0).all(), "spectral_radius expects a nonnegative matrix");

    constexpr int restarts = 10;
    constexpr int max_iter = 10000;
    constexpr double rtol = 1e-13;
    Stream rng(0x5EC7A1u);
    for (int r = 0; r < restarts; ++r) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = 0.5 + rng.uniform();
        if (auto root = detail::perron_root(M, std::move(v), rtol, max_iter)) return std::max(*root, 0.0);
    }
    // Reducible or defective matrices can stall the bound gap; fall back to a dense solve.
    if (n <= 64) {
        Eigen::EigenSolver<Matrix> es(M, false);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    }
    throw SolverFailure("spectral_radius: power iteration did not converge");
}

struct AlphaRule {
    double c1 = 0.2;
    double c2 = 0.2;
    double c3 = 4.0;
    /// Upper bound that keeps deflation from removing a supportable link; when absent the rho(I - A) < 1 branch uses c2 * alpha_1.
    std::optional<double> alpha2;
};

/**
 * Weight of the power term:
 *
 *     alpha = c1 alpha_1                      if rho(I - A) >= 1
 *           = min{c2 alpha_1, c3 alpha_2}     if rho(I - A) <  1
 */
inline double select_alpha(const NormalizedProblem &p, const AlphaRule &rule = {}) {
    require(rule.c1 > 0.0 && rule.c1 < 1.0, "c1 must lie in (0, 1)");
    require(rule.c2 > 0.0 && rule.c2 < 1.0, "c2 must lie in (0, 1)");
    require(rule.c3 > rule.c2, "c3 must exceed c2");
    if (rule.alpha2) require(*rule.alpha2 > 0.0, "alpha2 must be positive");
    const double alpha1 = p.alpha_limit();
    const Matrix B = Matrix::Identity(p.size(), p.size()) - p.A;
    if (spectral_radius(B) >= 1.0) return rule.c1 * alpha1;
    if (rule.alpha2) return std::min(rule.c2 * alpha1, rule.c3 * *rule.alpha2);
    return rule.c2 * alpha1;
}

inline NormalizedProblem with_alpha(NormalizedProblem p, const AlphaRule &rule = {}) {
    p.alpha = select_alpha(p, rule);
    return p;
}

/// Sub-problem on the rows/columns in `subset` (positions, any order, no duplicates).
inline NormalizedProblem restrict(const NormalizedProblem &p, IndexSet subset) {
    require(!subset.empty(), "restrict needs a nonempty index set");
    std::sort(subset.begin(), subset.end());
    require(std::adjacent_find(subset.begin(), subset.end()) == subset.end(), "restrict: duplicate index");
    require(subset.front() >= 0 && subset.back() < p.size(), "restrict: index out of range");
    const auto n = static_cast<Eigen::Index>(subset.size());
    NormalizedProblem out;
    out.A.resize(n, n);
    out.b.resize(n);
    out.budgets.resize(n);
    out.alpha = p.alpha;
    out.link_ids.resize(subset.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        out.b(i) = p.b(subset[i]);
        out.budgets(i) = p.budgets(subset[i]);
        out.link_ids[i] = p.link_ids[subset[i]];
        for (Eigen::Index j = 0; j < n; ++j) out.A(i, j) = p.A(subset[i], subset[j]);
    }
    return out;
}

/// All positions except `drop`.
inline IndexSet complement_of(int size, int drop) {
    IndexSet out;
    out.reserve(size > 0 ? size - 1 : 0);
    for (int i = 0; i < size; ++i)
        if (i != drop) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix &m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json vector_to_json(const Vector &v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Matrix matrix_from_json(const nlohmann::json &j, Eigen::Index rows, Eigen::Index cols, const char *name) {
    require(j.is_array() && static_cast<Eigen::Index>(j.size()) == rows, std::string(name) + ": wrong row count");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto &row = j[static_cast<std::size_t>(i)];
        require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols, std::string(name) + ": wrong column count");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline Vector vector_from_json(const nlohmann::json &j, Eigen::Index n, const char *name) {
    require(j.is_array() && static_cast<Eigen::Index>(j.size()) == n, std::string(name) + ": wrong length");
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

} // namespace detail

inline constexpr int kSchemaVersion = 1;

inline nlohmann::json to_json(const NetworkInstance &net) {
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["K"] = net.K;
    j["gains"] = detail::matrix_to_json(net.gains);
    j["noise_w"] = detail::vector_to_json(net.noise);
    j["sinr_targets_linear"] = detail::vector_to_json(net.sinr_targets);
    j["budgets_w"] = detail::vector_to_json(net.budgets);
    if (net.geometry) {
        j["geometry"] = {{"tx", detail::matrix_to_json(net.geometry->tx)},
                         {"rx", detail::matrix_to_json(net.geometry->rx)}};
    } else {
        j["geometry"] = nullptr;
    }
    return j;
}

inline NetworkInstance instance_from_json(const nlohmann::json &j) {
    try {
        require(j.value("version", 0) == kSchemaVersion, "unsupported instance schema version");
        NetworkInstance net;
        net.K = j.at("K").get<int>();
        require(net.K >= 1, "K must be positive");
        net.gains = detail::matrix_from_json(j.at("gains"), net.K, net.K, "gains");
        net.noise = detail::vector_from_json(j.at("noise_w"), net.K, "noise_w");
        net.sinr_targets = detail::vector_from_json(j.at("sinr_targets_linear"), net.K, "sinr_targets_linear");
        net.budgets = detail::vector_from_json(j.at("budgets_w"), net.K, "budgets_w");
        if (j.contains("geometry") && !j["geometry"].is_null()) {
            const auto &g = j["geometry"];
            net.geometry = Geometry{detail::matrix_from_json(g.at("tx"), net.K, 2, "geometry.tx"),
                                    detail::matrix_from_json(g.at("rx"), net.K, 2, "geometry.rx")};
        }
        validate(net);
        return net;
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInput(std::string("malformed instance JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const NormalizedProblem &p) {
    nlohmann::json j;
    j["version"] = kSchemaVersion;
    j["K"] = p.size();
    j["A"] = detail::matrix_to_json(p.A);
    j["b"] = detail::vector_to_json(p.b);
    j["budgets_w"] = detail::vector_to_json(p.budgets);
    j["alpha"] = p.alpha ? nlohmann::json(*p.alpha) : nlohmann::json(nullptr);
    j["link_ids"] = p.link_ids;
    return j;
}

inline NormalizedProblem problem_from_json(const nlohmann::json &j) {
    try {
        require(j.value("version", 0) == kSchemaVersion, "unsupported problem schema version");
        const int K = j.at("K").get<int>();
        require(K >= 1, "K must be positive");
        NormalizedProblem p;
        p.A = detail::matrix_from_json(j.at("A"), K, K, "A");
        p.b = detail::vector_from_json(j.at("b"), K, "b");
        p.budgets = detail::vector_from_json(j.at("budgets_w"), K, "budgets_w");
        if (j.contains("alpha") && !j["alpha"].is_null()) p.alpha = j["alpha"].get<double>();
        p.link_ids = j.at("link_ids").get<std::vector<int>>();
        require(static_cast<int>(p.link_ids.size()) == K, "link_ids must have length K");
        return p;
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInput(std::string("malformed problem JSON: ") + e.what());
    }
}

} // namespace jpac
