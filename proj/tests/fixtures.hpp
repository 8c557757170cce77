#pragma once

#include <jpac/jpac.hpp>

namespace fixtures {

using jpac::Matrix;
using jpac::NormalizedProblem;
using jpac::Vector;

/// Three links: 1 and 2 each interfere only with 3, and 3 with both.
inline NormalizedProblem three_link(std::optional<double> alpha = 1.0 / 15.0) {
    NormalizedProblem p;
    p.A.resize(3, 3);
    p.A << 1, 0, -1, 0, 1, -1, -1, -1, 1;
    p.b = Vector::Constant(3, 0.5);
    p.budgets = Vector::Ones(3);
    p.alpha = alpha;
    p.link_ids = {0, 1, 2};
    return p;
}

/// Physical instance whose normalization is three_link(): gamma = 1, pbar = 1,
/// g_kk = 1, eta = 0.5 and cross gains equal to -A.
inline jpac::NetworkInstance three_link_instance() {
    jpac::NetworkInstance net;
    net.K = 3;
    net.gains = -three_link().A;
    net.gains.diagonal().setOnes();
    net.noise = Vector::Constant(3, 0.5);
    net.sinr_targets = Vector::Ones(3);
    net.budgets = Vector::Ones(3);
    return net;
}

inline NormalizedProblem diagonal(int K, double b = 0.5, std::optional<double> alpha = std::nullopt) {
    NormalizedProblem p;
    p.A = Matrix::Identity(K, K);
    p.b = Vector::Constant(K, b);
    p.budgets = Vector::Ones(K);
    p.alpha = alpha ? alpha : std::optional<double>(0.2 / K);
    p.link_ids.resize(K);
    for (int k = 0; k < K; ++k) p.link_ids[k] = k;
    return p;
}

inline NormalizedProblem single(double b, double alpha = 0.2) {
    NormalizedProblem p = diagonal(1, b);
    p.alpha = alpha;
    return p;
}

/// Generated instance with the default scenario and the default alpha rule.
inline NormalizedProblem random_problem(int K, std::uint64_t seed, double distance_scale = 1.0) {
    jpac::ScenarioConfig sc;
    sc.K = K;
    sc.seed = seed;
    sc.distance_scale = distance_scale;
    return jpac::with_alpha(jpac::normalize(jpac::generate(sc)));
}

inline jpac::IndexSet all(int K) { return jpac::all_positions(K); }

} // namespace fixtures
