// jpac command-line driver.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "jpac/jpac.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRunFailed = 2;

nlohmann::json read_json(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw jpac::InvalidInput("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw jpac::InvalidInput(path + ": " + e.what());
    }
}

// Accepts either an instance document or an already normalized problem.
jpac::NormalizedProblem load_problem(const std::string &path) {
    const auto j = read_json(path);
    if (j.contains("A")) return jpac::problem_from_json(j);
    return jpac::normalize(jpac::instance_from_json(j));
}

void emit(const nlohmann::json &j, const std::string &out) {
    if (out.empty() || out == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(out);
    if (!f) throw jpac::InvalidInput("cannot write " + out);
    f << j.dump(2) << '\n';
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Joint power and admission control toolkit"};
    app.require_subcommand(1);

    // generate
    auto *gen = app.add_subcommand("generate", "Emit a random network instance as JSON");
    jpac::ScenarioConfig scenario;
    std::string gen_out;
    bool gen_normalized = false;
    gen->add_option("--K", scenario.K, "Link count")->check(CLI::PositiveNumber);
    gen->add_option("--seed", scenario.seed, "RNG seed");
    gen->add_option("--distance-scale", scenario.distance_scale, "Geometry scale (0.707 for Setup2)");
    gen->add_option("--budget-multiplier", scenario.budget_multiplier);
    gen->add_option("--sinr-db", scenario.sinr_target_db);
    gen->add_option("--noise-dbm", scenario.noise_dbm);
    gen->add_flag("--normalized", gen_normalized, "Emit the normalized (A, b) problem instead");
    gen->add_option("--out", gen_out, "Output file (default stdout)");

    // solve
    auto *solve = app.add_subcommand("solve", "Run NLPD or LQMD on one instance");
    std::string instance_path, algo = "lqmd", solve_out, trace;
    double q = 0.5;
    int starts = 5;
    std::uint64_t seed = 0;
    jpac::SolverConfig solver;
    solve->add_option("--instance", instance_path, "Instance or normalized problem JSON")->required();
    solve->add_option("--algo", algo)->check(CLI::IsMember({"nlpd", "lqmd"}));
    solve->add_option("--q", q, "Exponent for LQMD")->check(CLI::Range(0.0, 1.0));
    solve->add_option("--n", starts, "Multistart count for LQMD")->check(CLI::PositiveNumber);
    solve->add_option("--seed", seed);
    solve->add_option("--epsilon", solver.epsilon);
    solve->add_option("--trace", trace, "JSON-lines solver trace");
    solve->add_option("--out", solve_out);

    // enumerate
    auto *enumerate = app.add_subcommand("enumerate", "Exact l0 optimum by subset enumeration");
    std::string enum_out;
    enumerate->add_option("--instance", instance_path)->required();
    enumerate->add_option("--out", enum_out);

    // recover-qbar
    auto *qbar = app.add_subcommand("recover-qbar", "Largest grid q whose multistart solution recovers the l0 optimum");
    int qbar_starts = 100;
    std::string qbar_out;
    qbar->add_option("--instance", instance_path)->required();
    qbar->add_option("--n", qbar_starts)->check(CLI::PositiveNumber);
    qbar->add_option("--seed", seed);
    qbar->add_option("--out", qbar_out);

    // experiment
    auto *exp = app.add_subcommand("experiment", "Monte-Carlo experiment driver");
    std::string config_path, out_dir;
    std::optional<std::uint64_t> exp_seed;
    std::optional<int> exp_runs;
    exp->add_option("--config", config_path, "Experiment JSON")->required();
    exp->add_option("--seed", exp_seed, "Override the master seed");
    exp->add_option("--runs", exp_runs, "Override the run count");
    exp->add_option("--out", out_dir, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*gen) {
            const auto net = jpac::generate(scenario);
            emit(gen_normalized ? jpac::to_json(jpac::normalize(net)) : jpac::to_json(net), gen_out);
            return kOk;
        }
        if (*solve) {
            const auto problem = load_problem(instance_path);
            jpac::validate(solver);
            jpac::DeflationConfig cfg;
            cfg.solver = solver;
            cfg.solver.trace_path = trace;
            cfg.seed = seed;
            jpac::AdmissionResult result;
            if (algo == "nlpd") {
                result = jpac::run_nlpd(problem.alpha ? problem : jpac::with_alpha(problem, cfg.alpha_rule), cfg);
            } else {
                if (!(q > 0.0 && q < 1.0)) throw jpac::InvalidInput("LQMD needs q in (0, 1)");
                result = jpac::run_lqmd(problem, q, starts, cfg);
            }
            emit(jpac::to_json(result), solve_out);
            return kOk;
        }
        if (*enumerate) {
            const auto problem = load_problem(instance_path);
            const auto p = problem.alpha ? problem : jpac::with_alpha(problem);
            emit(jpac::to_json(jpac::enumerate_l0(p), p), enum_out);
            return kOk;
        }
        if (*qbar) {
            const auto problem = load_problem(instance_path);
            jpac::QbarConfig qc;
            qc.seed = seed;
            const auto r = jpac::estimate_qbar(problem, qbar_starts, jpac::default_q_grid(), qc);
            emit({{"qbar", r.qbar},
                  {"success", r.success},
                  {"alpha", r.alpha},
                  {"grid_points_tried", r.grid_points_tried},
                  {"benchmark", jpac::to_json(r.benchmark, problem)}},
                 qbar_out);
            return r.success ? kOk : kRunFailed;
        }
        if (*exp) {
            auto config = jpac::config_from_json(read_json(config_path));
            if (exp_seed) config.seed = *exp_seed;
            if (exp_runs) config.runs = *exp_runs;
            if (!out_dir.empty()) config.output_path = out_dir;
            jpac::validate(config);

            const auto rows = jpac::run_experiment(config);
            const fs::path dir(config.output_path);
            fs::create_directories(dir);
            std::ofstream rows_csv(dir / "rows.csv"), summary_csv(dir / "summary.csv");
            if (!rows_csv || !summary_csv) throw jpac::InvalidInput("cannot write to " + dir.string());
            jpac::write_rows(rows_csv, rows);
            jpac::write_summary(summary_csv, jpac::summarize(rows));

            const auto failed = std::count_if(rows.begin(), rows.end(), [](const auto &r) { return r.failed(); });
            std::cerr << rows.size() << " rows, " << failed << " failed -> " << dir.string() << '\n';
            return failed ? kRunFailed : kOk;
        }
    } catch (const jpac::InvalidInput &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRunFailed;
    }
    return kOk;
}
