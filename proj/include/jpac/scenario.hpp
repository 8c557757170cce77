#pragma once

/**
 * \file   jpac/scenario.hpp
 * \brief  Seeded random network instances.
 *
 * Transmitters are uniform on a square, each receiver uniform on a disc around
 * its own transmitter, gains follow 1/d^exponent, and every budget is a fixed
 * multiple of the interference-free minimum power. Receivers may land outside
 * the square.
 */

#include <cmath>
#include <numbers>

#include "network.hpp"

namespace jpac {

struct ScenarioConfig {
    int K = 10;
    double square_side = 2000.0;     ///< meters
    double rx_radius = 400.0;        ///< meters
    double pathloss_exponent = 4.0;
    double sinr_target_db = 2.0;
    double noise_dbm = -90.0;
    double budget_multiplier = 2.0;
    double distance_scale = 1.0;     ///< 0.707 for the high-interference variant
    std::uint64_t seed = 0;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

inline void validate(const ScenarioConfig &c) {
    require(c.K >= 1, "scenario: K must be positive");
    require(c.square_side > 0.0 && c.rx_radius > 0.0, "scenario: lengths must be positive");
    require(c.pathloss_exponent > 0.0, "scenario: path-loss exponent must be positive");
    require(c.budget_multiplier > 0.0, "scenario: budget multiplier must be positive");
    require(c.distance_scale > 0.0 && c.distance_scale <= 1.0, "scenario: distance_scale must lie in (0, 1]");
}

inline NetworkInstance generate(const ScenarioConfig &config) {
    validate(config);
    const int K = config.K;
    Stream rng(config.seed);

    Matrix tx(K, 2), rx(K, 2);
    auto place_receiver = [&](int k) {
        const double r = config.rx_radius * std::sqrt(rng.uniform());
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        rx(k, 0) = tx(k, 0) + r * std::cos(theta);
        rx(k, 1) = tx(k, 1) + r * std::sin(theta);
    };
    for (int k = 0; k < K; ++k) {
        tx(k, 0) = rng.uniform(0.0, config.square_side);
        tx(k, 1) = rng.uniform(0.0, config.square_side);
        place_receiver(k);
    }

    auto distance = [&](int k, int j) { return (rx.row(k) - tx.row(j)).norm(); };
    // A receiver sitting exactly on some transmitter gets redrawn.
    for (int k = 0; k < K; ++k) {
        for (bool clash = true; clash;) {
            clash = false;
            for (int j = 0; j < K && !clash; ++j) clash = distance(k, j) == 0.0;
            if (clash) place_receiver(k);
        }
    }

    tx *= config.distance_scale;
    rx *= config.distance_scale;

    NetworkInstance net;
    net.K = K;
    net.gains.resize(K, K);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < K; ++j) net.gains(k, j) = 1.0 / std::pow(distance(k, j), config.pathloss_exponent);

    const double gamma = db_to_linear(config.sinr_target_db);
    const double eta = dbm_to_watts(config.noise_dbm);
    net.noise = Vector::Constant(K, eta);
    net.sinr_targets = Vector::Constant(K, gamma);
    net.budgets.resize(K);
    for (int k = 0; k < K; ++k) {
        const double p_min = gamma * eta / net.gains(k, k);
        net.budgets(k) = config.budget_multiplier * p_min;
    }
    net.geometry = Geometry{tx, rx};
    validate(net);
    return net;
}

} // namespace jpac
