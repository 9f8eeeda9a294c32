#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tcr/experiment.hpp"

namespace fs = std::filesystem;
using namespace tcr;

namespace {

ExperimentConfig config_from_options(const std::string& config_path, const std::string& benchmark,
                                     const std::string& trend, double alpha) {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
        cfg = load_config(config_path);
    }
    if (!benchmark.empty()) cfg.benchmark.dataset = benchmarks::dataset_from_string(benchmark);
    if (!trend.empty()) cfg.benchmark.trend = benchmarks::trend_kind_from_string(trend);
    if (alpha >= 0.0) cfg.benchmark.alpha = alpha;
    if (const char* env = std::getenv("TCR_OUT_DIR")) cfg.output_dir = env;
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "'");
    out << text;
}

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal causal recourse toolkit"};
    app.require_subcommand(1);

    std::string config_path, benchmark, trend, out_dir = "results";
    double alpha = -1.0;
    std::size_t rep = 0;
    app.add_option("--config", config_path, "Experiment config (JSON)");
    app.add_option("--benchmark", benchmark, "Benchmark id (overrides config)");
    app.add_option("--trend", trend, "Trend kind: none|linear|seasonal|linear+seasonal");
    app.add_option("--alpha", alpha, "Trend strength in [0, 1]");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--rep", rep, "Repetition index for single-stage commands");

    auto* cmd_simulate = app.add_subcommand("simulate", "Sample trajectories and write CSV + SCM");
    auto* cmd_train = app.add_subcommand("train", "Train the classifier on the t=0 cross-section");
    auto* cmd_fit = app.add_subcommand("fit-scm", "Fit the approximate SCM from trajectories");
    auto* cmd_recourse = app.add_subcommand("recourse", "Solve recourse for the configured methods");
    auto* cmd_evaluate = app.add_subcommand("evaluate", "Evaluate validity over time");
    auto* cmd_bounds = app.add_subcommand("bounds", "Run randomized bound verification trials");
    auto* cmd_report = app.add_subcommand("report", "Aggregate a result directory");
    auto* cmd_run = app.add_subcommand("run", "Full pipeline: simulate..report");

    std::string report_dir;
    cmd_report->add_option("dir", report_dir, "Result directory (with manifest.json)")->required();

    // Global options may be written after the subcommand.
    for (auto* sub : {cmd_simulate, cmd_train, cmd_fit, cmd_recourse, cmd_evaluate, cmd_bounds,
                      cmd_report, cmd_run})
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    // Single-stage commands re-derive their prerequisites deterministically
    // from (config, master seed), so artifacts always agree across stages.
    auto stage_env = [&](const std::function<void(const ExperimentConfig&, std::uint64_t,
                                                  const fs::path&)>& body) {
        return guarded([&] {
            ExperimentConfig cfg = config_from_options(config_path, benchmark, trend, alpha);
            if (!app.get_option("--out")->empty()) cfg.output_dir = out_dir;
            cfg.validate();
            const std::uint64_t rep_seed = mix_seed(cfg.master_seed, rep);
            const fs::path dir = fs::path(cfg.output_dir) / ("rep" + std::to_string(rep));
            fs::create_directories(dir);
            body(cfg, rep_seed, dir);
        });
    };

    if (cmd_simulate->parsed()) {
        return stage_env([](const ExperimentConfig& cfg, std::uint64_t rep_seed,
                            const fs::path& dir) {
            auto world = simulate_stage(cfg, rep_seed);
            write_trajectories_csv((dir / "trajectories.csv").string(), world.scm,
                                   world.trajectories);
            write_file(dir / "scm.json", scm_to_json(world.scm).dump(2) + "\n");
            std::cout << "wrote " << (dir / "trajectories.csv").string() << "\n";
        });
    }
    if (cmd_train->parsed()) {
        return stage_env([](const ExperimentConfig& cfg, std::uint64_t rep_seed,
                            const fs::path& dir) {
            auto world = simulate_stage(cfg, rep_seed);
            json doc;
            auto h = train_stage(cfg, world, rep_seed, &doc);
            write_file(dir / "classifier.json", doc.dump(2) + "\n");
            Matrix t0(world.train_count, world.scm.dim());
            std::vector<int> y(world.train_count);
            for (std::size_t k = 0; k < world.train_count; ++k) {
                for (std::size_t c = 0; c < world.scm.dim(); ++c)
                    t0(k, c) = world.trajectories[k].states(0, c);
                y[k] = world.trajectories[k].labels[0];
            }
            std::cout << "train accuracy at t=0: " << accuracy(*h, t0, y) << "\n";
        });
    }
    if (cmd_fit->parsed()) {
        return stage_env([](const ExperimentConfig& cfg, std::uint64_t rep_seed,
                            const fs::path& dir) {
            auto world = simulate_stage(cfg, rep_seed);
            ExperimentConfig fitted = cfg;
            fitted.estimator_mode = "fitted";
            const auto est = estimator_stage(fitted, world, rep_seed);
            write_file(dir / "estimator.json", scm_to_json(est).dump(2) + "\n");
            const auto mse = one_step_mse(est, world.trajectories,
                                          est.provenance ? est.provenance->fit_cutoff : 50);
            double avg = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < mse.size(); ++i) {
                if (est.equations[i].freeze_after_t0) continue;
                avg += mse[i];
                ++n;
            }
            std::cout << "mean one-step MSE over fitted features: "
                      << (n ? avg / static_cast<double>(n) : 0.0) << "\n";
        });
    }
    if (cmd_recourse->parsed() || cmd_evaluate->parsed()) {
        const bool evaluate = cmd_evaluate->parsed();
        return stage_env([evaluate](const ExperimentConfig& cfg, std::uint64_t rep_seed,
                                    const fs::path& dir) {
            auto world = simulate_stage(cfg, rep_seed);
            auto h = train_stage(cfg, world, rep_seed);
            auto solver_scm = estimator_stage(cfg, world, rep_seed);
            const auto seekers = pick_recourse_seekers(cfg, world, *h);
            const auto runs = recourse_stage(cfg, world, solver_scm, *h, seekers, rep_seed);
            std::ostringstream out;
            out << "individual,method,epsilon,tau,converged,cost,|I|,I";
            for (const auto& v : world.scm.variables) out << ",theta_" << v.name;
            out << '\n';
            out.precision(17);
            for (const auto& run : runs) {
                for (std::size_t s = 0; s < run.cases.size(); ++s) {
                    const auto& oc = run.cases[s].outcome;
                    out << s << ',' << method_to_string(oc.method) << ',' << oc.epsilon << ','
                        << oc.tau << ',' << (oc.converged ? 1 : 0) << ',' << oc.cost << ','
                        << sparsity(oc.theta) << ',';
                    bool first = true;
                    for (std::size_t i : oc.intervention_set) {
                        if (!first) out << ';';
                        out << world.scm.variables[i].name;
                        first = false;
                    }
                    for (double v : oc.theta) out << ',' << v;
                    out << '\n';
                }
            }
            write_file(dir / "outcomes.csv", out.str());
            std::cout << "wrote " << (dir / "outcomes.csv").string() << "\n";
            if (evaluate) {
                const auto records = evaluate_stage(cfg, world, *h, runs, rep_seed);
                std::ostringstream vout;
                vout << "method,epsilon,issue_time,eval_time,n,validity,mean_cost_valid,"
                        "mean_set_size\n";
                vout.precision(17);
                for (const auto& r : records) {
                    vout << method_to_string(r.method) << ',' << r.epsilon << ',' << r.issue_time
                         << ',' << r.eval_time << ',' << r.n << ',' << r.validity << ','
                         << r.mean_cost_valid << ',' << r.mean_set_size << '\n';
                }
                write_file(dir / "validity.csv", vout.str());
                std::cout << "wrote " << (dir / "validity.csv").string() << "\n";
            }
        });
    }
    if (cmd_bounds->parsed()) {
        return stage_env([](const ExperimentConfig& cfg, std::uint64_t rep_seed,
                            const fs::path& dir) {
            const auto set = randomized_bound_trials(cfg.bound_trials, mix_seed(rep_seed, 6));
            double min_slack = std::numeric_limits<double>::infinity();
            std::size_t violations = 0;
            auto scan = [&](const std::vector<BoundReport>& reports) {
                for (const auto& r : reports) {
                    min_slack = std::min(min_slack, r.slack);
                    if (r.slack < -r.ci) ++violations;
                }
            };
            scan(set.theorem1);
            scan(set.corollary3);
            scan(set.appendix_g);
            std::ostringstream out;
            out << "bound,trial,empirical,bound_value,slack,ci\n";
            out.precision(17);
            auto emit = [&](const char* name, const std::vector<BoundReport>& reports) {
                for (std::size_t i = 0; i < reports.size(); ++i)
                    out << name << ',' << i << ',' << reports[i].empirical << ','
                        << reports[i].bound << ',' << reports[i].slack << ',' << reports[i].ci
                        << '\n';
            };
            emit("theorem1", set.theorem1);
            emit("corollary3", set.corollary3);
            emit("appendix_g", set.appendix_g);
            write_file(dir / "bounds.csv", out.str());
            std::cout << "bound trials: " << 3 * cfg.bound_trials << ", violations: " << violations
                      << ", min slack: " << min_slack << "\n";
        });
    }
    if (cmd_report->parsed()) {
        return guarded([&] {
            const auto table = report_results(report_dir);
            write_report_csv(table, fs::path(report_dir) / "report_validity.csv");
            std::cout << format_report(table);
        });
    }
    if (cmd_run->parsed()) {
        return guarded([&] {
            ExperimentConfig cfg = config_from_options(config_path, benchmark, trend, alpha);
            if (!app.get_option("--out")->empty()) cfg.output_dir = out_dir;
            const auto dir = run_experiment(cfg);
            const auto table = report_results(dir);
            write_report_csv(table, dir / "report_validity.csv");
            std::cout << format_report(table);
        });
    }
    return 0;
}
