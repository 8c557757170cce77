#pragma once

/**
 * \file   jpac/harness.hpp
 * \brief  Monte-Carlo experiment driver: row generation, CSV output and
 *         aggregate summaries.
 */

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "oracle.hpp"
#include "scenario.hpp"

namespace jpac {

enum class Experiment { RecoverQbar, ApproxCompare, DeflateCompare, QSensitivity, ScalingRatio };

inline const char *to_string(Experiment e) {
    switch (e) {
    case Experiment::RecoverQbar: return "recover-qbar";
    case Experiment::ApproxCompare: return "approx-compare";
    case Experiment::DeflateCompare: return "deflate-compare";
    case Experiment::QSensitivity: return "q-sensitivity";
    case Experiment::ScalingRatio: return "scaling-ratio";
    }
    return "?";
}

inline Experiment experiment_from_string(const std::string &s) {
    for (Experiment e : {Experiment::RecoverQbar, Experiment::ApproxCompare, Experiment::DeflateCompare,
                         Experiment::QSensitivity, Experiment::ScalingRatio})
        if (s == to_string(e)) return e;
    throw InvalidInput("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
    Experiment experiment = Experiment::DeflateCompare;
    std::vector<int> K_list{10};
    int runs = 100;
    std::vector<double> q_list;   ///< empty: per-experiment default
    int N = 0;                    ///< 0: per-experiment default
    double epsilon = 1e-4;
    double l1_epsilon = 1e-9;     ///< the q = 1 baseline needs tight residuals for support detection
    double match_tol = 1e-3;
    double setup2_scale = 0.707;
    std::uint64_t seed = 1;
    ScenarioConfig scenario;
    AlphaRule alpha_rule;
    std::string output_path = "out";
    bool record_timing = false;

    std::vector<double> effective_q() const {
        if (!q_list.empty()) return q_list;
        switch (experiment) {
        case Experiment::RecoverQbar: return default_q_grid();
        case Experiment::ApproxCompare: return {0.1};
        case Experiment::QSensitivity: return {0.1, 0.3, 0.5, 0.7, 0.9};
        default: return {0.5};
        }
    }
    int effective_N() const {
        if (N > 0) return N;
        return experiment == Experiment::RecoverQbar || experiment == Experiment::ApproxCompare ? 100 : 5;
    }
};

inline void validate(const ExperimentConfig &c) {
    require(c.runs >= 0, "runs must be nonnegative");
    require(!c.K_list.empty(), "K_list must be nonempty");
    for (int K : c.K_list) require(K >= 1, "every K must be positive");
    for (double q : c.q_list) require(q > 0.0 && q <= 1.0, "every q must lie in (0, 1]");
    require(c.N >= 0, "N must be nonnegative");
    require(c.epsilon > 0.0 && c.l1_epsilon > 0.0, "epsilon must be positive");
    require(c.setup2_scale > 0.0 && c.setup2_scale <= 1.0, "setup2_scale must lie in (0, 1]");
    if (c.experiment == Experiment::RecoverQbar || c.experiment == Experiment::ApproxCompare)
        for (int K : c.K_list)
            require(K <= kEnumerationMaxLinks, "enumeration-based experiments need K <= 20");
    if (c.experiment != Experiment::RecoverQbar && c.experiment != Experiment::ApproxCompare)
        for (double q : c.effective_q()) require(q < 1.0, "LQMD needs q < 1");
    ScenarioConfig s = c.scenario;
    s.K = 1;
    validate(s);
}

inline ExperimentConfig config_from_json(const nlohmann::json &j) {
    ExperimentConfig c;
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    try {
        c.experiment = experiment_from_string(j.at("experiment").get<std::string>());
        c.K_list = j.value("K_list", c.K_list);
        c.runs = j.value("runs", c.runs);
        c.q_list = j.value("q_list", c.q_list);
        c.N = j.value("N", c.N);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.l1_epsilon = j.value("l1_epsilon", c.l1_epsilon);
        c.match_tol = j.value("match_tol", c.match_tol);
        c.setup2_scale = j.value("setup2_scale", c.setup2_scale);
        c.seed = j.value("seed", c.seed);
        c.output_path = j.value("output_path", c.output_path);
        c.record_timing = j.value("record_timing", c.record_timing);
        if (j.contains("scenario")) {
            const auto &s = j.at("scenario");
            c.scenario.square_side = s.value("square_side", c.scenario.square_side);
            c.scenario.rx_radius = s.value("rx_radius", c.scenario.rx_radius);
            c.scenario.pathloss_exponent = s.value("pathloss_exponent", c.scenario.pathloss_exponent);
            c.scenario.sinr_target_db = s.value("sinr_target_db", c.scenario.sinr_target_db);
            c.scenario.noise_dbm = s.value("noise_dbm", c.scenario.noise_dbm);
            c.scenario.budget_multiplier = s.value("budget_multiplier", c.scenario.budget_multiplier);
            c.scenario.distance_scale = s.value("distance_scale", c.scenario.distance_scale);
        }
        if (j.contains("alpha_rule")) {
            const auto &a = j.at("alpha_rule");
            c.alpha_rule.c1 = a.value("c1", c.alpha_rule.c1);
            c.alpha_rule.c2 = a.value("c2", c.alpha_rule.c2);
            c.alpha_rule.c3 = a.value("c3", c.alpha_rule.c3);
            if (a.contains("alpha2") && !a.at("alpha2").is_null()) c.alpha_rule.alpha2 = a.at("alpha2").get<double>();
        }
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInput(std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

struct MetricsRow {
    Experiment experiment = Experiment::DeflateCompare;
    int K = 0;
    std::optional<double> q;
    std::string algorithm;
    std::uint64_t seed = 0;
    int run = 0;                       ///< instance index within the K cell; not written
    std::optional<int> supported;
    std::optional<double> power_mw;
    std::optional<double> runtime_ms;
    std::optional<bool> match;
    std::optional<double> qbar;
    std::string error;

    bool failed() const { return !error.empty(); }
};

inline constexpr const char *kRowsHeader = "experiment,K,q,algorithm,seed,supported,power_mw,runtime_ms,match,qbar,error";
inline constexpr const char *kSummaryHeader = "K,q,algorithm,metric,value";

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string csv_text(std::string s) {
    for (char &c : s)
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
    return s;
}

/// Seed of instance `run` in the cell for link count K.
inline std::uint64_t instance_seed(std::uint64_t master, int K, int run) {
    return child_seed(child_seed(master, static_cast<std::uint64_t>(K)), static_cast<std::uint64_t>(run));
}

inline double power_mw(const NormalizedProblem &p, const Vector &x) { return 1e3 * p.budgets.dot(x); }

} // namespace detail

inline void write_row(std::ostream &os, const MetricsRow &r) {
    using detail::fmt;
    os << to_string(r.experiment) << ',' << r.K << ',' << (r.q ? fmt(*r.q) : "") << ',' << r.algorithm << ','
       << r.seed << ',' << (r.supported ? std::to_string(*r.supported) : "") << ','
       << (r.power_mw ? fmt(*r.power_mw) : "") << ',' << (r.runtime_ms ? fmt(*r.runtime_ms) : "") << ','
       << (r.match ? (*r.match ? "1" : "0") : "") << ',' << (r.qbar ? fmt(*r.qbar) : "") << ','
       << detail::csv_text(r.error) << '\n';
}

inline void write_rows(std::ostream &os, const std::vector<MetricsRow> &rows) {
    os << kRowsHeader << '\n';
    for (const auto &r : rows) write_row(os, r);
}

namespace detail {

class Timer {
public:
    explicit Timer(bool on) : on_(on), start_(std::chrono::steady_clock::now()) {}
    std::optional<double> elapsed_ms() const {
        if (!on_) return std::nullopt;
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    bool on_;
    std::chrono::steady_clock::time_point start_;
};

template <class Body>
MetricsRow guarded_row(MetricsRow row, bool timing, Body &&body) {
    Timer t(timing);
    try {
        body(row);
    } catch (const std::exception &e) {
        row.supported.reset();
        row.power_mw.reset();
        row.match.reset();
        row.qbar.reset();
        row.error = e.what();
        if (row.error.empty()) row.error = "error";
    }
    row.runtime_ms = t.elapsed_ms();
    return row;
}

inline SolverConfig solver_for(const ExperimentConfig &c, double q) {
    SolverConfig s;
    s.epsilon = q >= 1.0 ? c.l1_epsilon : c.epsilon;
    return s;
}

/// One l_q (or l_1 when q = 1) solve of the whole instance; the rounded support
/// must be exactly admissible to count.
inline void fill_approx(MetricsRow &row, const NormalizedProblem &p, const ExperimentConfig &c, double q,
                        int starts, const EnumerationResult &bench) {
    const MultistartResult best = multistart_solve(augment(p, q), solver_for(c, q), starts, row.seed);
    if (!best.support.empty() && !admissible(p, best.support))
        throw SolverFailure("rounded support is not admissible");
    row.supported = static_cast<int>(best.support.size());
    row.power_mw = power_mw(p, best.x);
    row.match = matches(best.x, best.support, bench, c.match_tol);
}

inline void fill_admission(MetricsRow &row, const AdmissionResult &r) {
    row.supported = r.supported();
    row.power_mw = 1e3 * r.total_power_w();
}

inline AdmissionResult lqmd(const NormalizedProblem &p, const ExperimentConfig &c, double q, std::uint64_t seed) {
    DeflationConfig d;
    d.solver = solver_for(c, q);
    d.alpha_rule = c.alpha_rule;
    d.seed = seed;
    return run_lqmd(p, q, c.effective_N(), d);
}

inline AdmissionResult nlpd(const NormalizedProblem &p, const ExperimentConfig &c, std::uint64_t seed) {
    DeflationConfig d;
    d.solver = solver_for(c, 1.0);
    d.alpha_rule = c.alpha_rule;
    d.seed = seed;
    return run_nlpd(with_alpha(p, c.alpha_rule), d);
}

inline std::vector<MetricsRow> instance_rows(const ExperimentConfig &c, int K, int run) {
    std::vector<MetricsRow> rows;
    MetricsRow base;
    base.experiment = c.experiment;
    base.K = K;
    base.run = run;
    base.seed = instance_seed(c.seed, K, run);

    ScenarioConfig sc = c.scenario;
    sc.K = K;
    sc.seed = base.seed;
    const NormalizedProblem problem = normalize(generate(sc));
    const bool timing = c.record_timing;
    const auto qs = c.effective_q();

    switch (c.experiment) {
    case Experiment::RecoverQbar: {
        MetricsRow row = base;
        row.algorithm = "qbar";
        rows.push_back(guarded_row(row, timing, [&](MetricsRow &r) {
            QbarConfig qc;
            qc.solver = solver_for(c, 0.5);
            qc.alpha_rule = c.alpha_rule;
            qc.seed = r.seed;
            qc.match_tol = c.match_tol;
            qc.l1_epsilon = c.l1_epsilon;
            const QbarResult res = estimate_qbar(problem, c.effective_N(), qs, qc);
            NormalizedProblem weighted = problem;
            weighted.alpha = res.alpha;
            r.supported = static_cast<int>(res.benchmark.best_support.size());
            r.power_mw = power_mw(weighted, res.benchmark.best_x);
            r.match = res.success;
            r.qbar = res.qbar;
        }));
        break;
    }
    case Experiment::ApproxCompare: {
        const NormalizedProblem p = with_alpha(problem, c.alpha_rule);
        EnumerationResult bench;
        MetricsRow brow = base;
        brow.algorithm = "benchmark";
        brow = guarded_row(brow, timing, [&](MetricsRow &r) {
            bench = enumerate_l0(p);
            r.supported = static_cast<int>(bench.best_support.size());
            r.power_mw = power_mw(p, bench.best_x);
            r.match = true;
        });
        rows.push_back(brow);
        if (brow.failed()) break;
        for (double q : qs) {
            MetricsRow row = base;
            row.q = q;
            row.algorithm = q >= 1.0 ? "l1" : "lq";
            rows.push_back(guarded_row(row, timing, [&](MetricsRow &r) {
                fill_approx(r, p, c, q, q >= 1.0 ? 1 : c.effective_N(), bench);
            }));
        }
        if (std::find(qs.begin(), qs.end(), 1.0) == qs.end()) {
            MetricsRow row = base;
            row.q = 1.0;
            row.algorithm = "l1";
            rows.push_back(guarded_row(row, timing, [&](MetricsRow &r) { fill_approx(r, p, c, 1.0, 1, bench); }));
        }
        break;
    }
    case Experiment::DeflateCompare: {
        MetricsRow row = base;
        row.algorithm = "nlpd";
        rows.push_back(guarded_row(row, timing, [&](MetricsRow &r) { fill_admission(r, nlpd(problem, c, r.seed)); }));
        [[fallthrough]];
    }
    case Experiment::QSensitivity:
        for (double q : qs) {
            MetricsRow row = base;
            row.q = q;
            row.algorithm = "lqmd";
            rows.push_back(
                guarded_row(row, timing, [&](MetricsRow &r) { fill_admission(r, lqmd(problem, c, q, r.seed)); }));
        }
        break;
    case Experiment::ScalingRatio:
        for (double q : qs) {
            MetricsRow row = base;
            row.q = q;
            row.algorithm = "lqmd-setup1";
            rows.push_back(
                guarded_row(row, timing, [&](MetricsRow &r) { fill_admission(r, lqmd(problem, c, q, r.seed)); }));
            ScenarioConfig sc2 = sc;
            sc2.distance_scale = c.setup2_scale * c.scenario.distance_scale;
            row.algorithm = "lqmd-setup2";
            rows.push_back(guarded_row(row, timing, [&](MetricsRow &r) {
                fill_admission(r, lqmd(normalize(generate(sc2)), c, q, r.seed));
            }));
        }
        break;
    }
    return rows;
}

} // namespace detail

/// Rows sorted by (K, q, algorithm, seed); rows without q sort first.
inline std::vector<MetricsRow> run_experiment(const ExperimentConfig &config) {
    validate(config);
    std::vector<MetricsRow> rows;
    for (int K : config.K_list)
        for (int run = 0; run < config.runs; ++run) {
            auto cell = detail::instance_rows(config, K, run);
            rows.insert(rows.end(), cell.begin(), cell.end());
        }
    std::stable_sort(rows.begin(), rows.end(), [](const MetricsRow &a, const MetricsRow &b) {
        return std::tie(a.K, a.q, a.algorithm, a.seed) < std::tie(b.K, b.q, b.algorithm, b.seed);
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct SummaryRecord {
    int K = 0;
    std::optional<double> q;
    std::string algorithm;
    std::string metric;
    double value = 0;
};

namespace detail {

struct Mean {
    double sum = 0;
    int n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double value() const { return n ? sum / n : std::numeric_limits<double>::quiet_NaN(); }
};

/// Key for pairing rows that come from the same instance.
using PairKey = std::tuple<int, std::optional<double>, std::uint64_t>;

inline void pairwise(std::vector<SummaryRecord> &out, const std::vector<MetricsRow> &rows, const std::string &first,
                     const std::string &second, bool nlpd_has_no_q) {
    std::map<PairKey, const MetricsRow *> lhs;
    std::map<std::tuple<int, std::uint64_t>, const MetricsRow *> rhs_noq;
    std::map<PairKey, const MetricsRow *> rhs;
    for (const auto &r : rows) {
        if (r.failed()) continue;
        if (r.algorithm == first) lhs[{r.K, r.q, r.seed}] = &r;
        if (r.algorithm == second) {
            rhs[{r.K, r.q, r.seed}] = &r;
            rhs_noq[{r.K, r.seed}] = &r;
        }
    }
    struct Tally {
        int first_wins = 0, second_wins = 0, equal = 0;
        Mean eq_first, eq_second, count_ratio, power_ratio;
    };
    std::map<std::pair<int, std::optional<double>>, Tally> tallies;
    for (const auto &[key, a] : lhs) {
        const MetricsRow *b = nullptr;
        if (nlpd_has_no_q) {
            auto it = rhs_noq.find({std::get<0>(key), std::get<2>(key)});
            if (it != rhs_noq.end()) b = it->second;
        } else {
            auto it = rhs.find(key);
            if (it != rhs.end()) b = it->second;
        }
        if (!b) continue;
        Tally &t = tallies[{a->K, a->q}];
        if (*a->supported > *b->supported) ++t.first_wins;
        else if (*a->supported < *b->supported) ++t.second_wins;
        else {
            ++t.equal;
            t.eq_first.add(*a->power_mw);
            t.eq_second.add(*b->power_mw);
        }
        if (*b->supported > 0) t.count_ratio.add(static_cast<double>(*a->supported) / *b->supported);
        if (*b->power_mw > 0.0) t.power_ratio.add(*a->power_mw / *b->power_mw);
    }
    const std::string label = first + "-vs-" + second;
    for (const auto &[key, t] : tallies) {
        auto add = [&](const char *metric, double v) { out.push_back({key.first, key.second, label, metric, v}); };
        add("first_wins", t.first_wins);
        add("second_wins", t.second_wins);
        add("equal", t.equal);
        if (t.eq_first.n) {
            add("equal_mean_power_mw_first", t.eq_first.value());
            add("equal_mean_power_mw_second", t.eq_second.value());
        }
        if (t.count_ratio.n) add("mean_supported_ratio", t.count_ratio.value());
        if (t.power_ratio.n) add("mean_power_ratio", t.power_ratio.value());
    }
}

} // namespace detail

inline std::vector<SummaryRecord> summarize(const std::vector<MetricsRow> &rows) {
    std::vector<SummaryRecord> out;
    if (rows.empty()) return out;
    const Experiment exp = rows.front().experiment;
    for (const auto &r : rows)
        require(r.experiment == exp, "summarize: rows from different experiments cannot be mixed");

    using Cell = std::tuple<int, std::optional<double>, std::string>;
    struct Agg {
        detail::Mean supported, power, match, qbar;
        int rows = 0, skipped = 0;
    };
    std::map<Cell, Agg> cells;
    for (const auto &r : rows) {
        Agg &a = cells[{r.K, r.q, r.algorithm}];
        ++a.rows;
        if (r.failed()) {
            ++a.skipped;
            continue;
        }
        if (r.supported) a.supported.add(*r.supported);
        if (r.power_mw) a.power.add(*r.power_mw);
        if (r.match) a.match.add(*r.match ? 1.0 : 0.0);
        if (r.qbar && r.match && *r.match) a.qbar.add(*r.qbar);
    }
    for (const auto &[cell, a] : cells) {
        const auto &[K, q, algo] = cell;
        auto add = [&](const char *metric, double v) { out.push_back({K, q, algo, metric, v}); };
        add("rows", a.rows);
        add("skipped", a.skipped);
        if (a.supported.n) add("mean_supported", a.supported.value());
        if (a.power.n) add("mean_power_mw", a.power.value());
        if (a.match.n) add(exp == Experiment::RecoverQbar ? "success_rate" : "match_rate", a.match.value());
        if (a.qbar.n) add("mean_qbar", a.qbar.value());
    }

    switch (exp) {
    case Experiment::DeflateCompare: detail::pairwise(out, rows, "lqmd", "nlpd", true); break;
    case Experiment::ApproxCompare: detail::pairwise(out, rows, "lq", "l1", true); break;
    case Experiment::ScalingRatio: {
        detail::pairwise(out, rows, "lqmd-setup1", "lqmd-setup2", false);
        // Ratio of the cell means, next to the mean of per-pair ratios.
        std::map<std::pair<int, std::optional<double>>, std::array<double, 4>> m;
        for (const auto &[cell, a] : cells) {
            const auto &[K, q, algo] = cell;
            auto &v = m[{K, q}];
            if (algo == "lqmd-setup1") v[0] = a.supported.value(), v[1] = a.power.value();
            if (algo == "lqmd-setup2") v[2] = a.supported.value(), v[3] = a.power.value();
        }
        for (const auto &[key, v] : m) {
            out.push_back({key.first, key.second, "lqmd-setup1-vs-lqmd-setup2", "supported_ratio_of_means", v[0] / v[2]});
            out.push_back({key.first, key.second, "lqmd-setup1-vs-lqmd-setup2", "power_ratio_of_means", v[1] / v[3]});
        }
        break;
    }
    case Experiment::QSensitivity: {
        // D(K, q) = N(K, q) - max_q N(K, q)
        std::map<int, double> best;
        for (const auto &[cell, a] : cells) {
            const int K = std::get<0>(cell);
            if (!a.supported.n) continue;
            auto it = best.find(K);
            if (it == best.end() || a.supported.value() > it->second) best[K] = a.supported.value();
        }
        for (const auto &[cell, a] : cells) {
            const auto &[K, q, algo] = cell;
            if (a.supported.n) out.push_back({K, q, algo, "D", a.supported.value() - best[K]});
        }
        break;
    }
    case Experiment::RecoverQbar: break;
    }
    return out;
}

inline void write_summary(std::ostream &os, const std::vector<SummaryRecord> &records) {
    os << kSummaryHeader << '\n';
    for (const auto &r : records)
        os << r.K << ',' << (r.q ? detail::fmt(*r.q) : "") << ',' << r.algorithm << ',' << r.metric << ','
           << detail::fmt(r.value) << '\n';
}

/// Looks up one summary value; nullopt when absent.
inline std::optional<double> find_metric(const std::vector<SummaryRecord> &records, int K, std::optional<double> q,
                                         const std::string &algorithm, const std::string &metric) {
    for (const auto &r : records)
        if (r.K == K && r.q == q && r.algorithm == algorithm && r.metric == metric) return r.value;
    return std::nullopt;
}

} // namespace jpac
