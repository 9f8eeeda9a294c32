#pragma once

#include <filesystem>

#include "tcr/analysis.hpp"
#include "tcr/benchmarks.hpp"
#include "tcr/estimator.hpp"

namespace tcr {

struct MethodSpec {
    Method method = Method::Tsar;
    double epsilon = 0.0;
};

struct ExperimentConfig {
    benchmarks::BenchmarkId benchmark;
    std::size_t population = 2000;
    long horizon = 100;
    double train_fraction = 0.8;
    std::size_t recourse_individuals = 100;
    std::vector<MethodSpec> methods = {{Method::Tsar, 0.0}};
    std::vector<long> taus = {10, 25, 50};
    std::size_t repetitions = 1;
    std::uint64_t master_seed = 7;
    std::string estimator_mode = "true-scm";  // true-scm | fitted | perfect
    long issue_time = 0;
    int burn_in = 10;
    std::string classifier = "mlp";  // mlp | linear
    double linear_bound = 1.0;
    TrainConfig train;
    long estimator_cutoff = -1;
    RecourseConfig solver;
    std::size_t evaluation_samples = 200;
    std::size_t bound_trials = 200;
    std::string output_dir = "results";

    void validate() const;
    json to_json() const;
    static ExperimentConfig from_json(const json& doc);
};

ExperimentConfig load_config(const std::string& path);

// Runs fn(0..n-1) on a small thread pool; TCR_THREADS overrides the width.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Pipeline stages (every stage is a pure function of config + seeds)
// ---------------------------------------------------------------------------

struct SimulatedWorld {
    ScmSpec scm;  // label calibrated on the t=0 training cross-section
    std::vector<Trajectory> trajectories;
    std::size_t train_count = 0;
};

SimulatedWorld simulate_stage(const ExperimentConfig& cfg, std::uint64_t rep_seed);

std::shared_ptr<Predictor> train_stage(const ExperimentConfig& cfg, const SimulatedWorld& world,
                                       std::uint64_t rep_seed, json* model_doc = nullptr);

// The spec the solver sees: the truth for true-scm/perfect, a fitted
// linear-Gaussian approximation for fitted.
ScmSpec estimator_stage(const ExperimentConfig& cfg, const SimulatedWorld& world,
                        std::uint64_t rep_seed);

// Negatively classified test individuals at the issue time, capped at
// cfg.recourse_individuals.
std::vector<std::size_t> pick_recourse_seekers(const ExperimentConfig& cfg,
                                               const SimulatedWorld& world, const Predictor& h);

struct MethodRun {
    MethodSpec spec;
    long tau = 0;  // solve lag used (t-sar varies, static methods use 0)
    std::vector<IndividualCase> cases;
};

// Solves recourse for every seeker. Static methods solve once; t-sar solves
// per evaluation lag.
std::vector<MethodRun> recourse_stage(const ExperimentConfig& cfg, const SimulatedWorld& world,
                                      const ScmSpec& solver_scm, const Predictor& h,
                                      const std::vector<std::size_t>& seekers,
                                      std::uint64_t rep_seed);

std::vector<ValidityRecord> evaluate_stage(const ExperimentConfig& cfg,
                                           const SimulatedWorld& world, const Predictor& h,
                                           const std::vector<MethodRun>& runs,
                                           std::uint64_t rep_seed);

struct BoundTrialSet {
    std::vector<BoundReport> theorem1;
    std::vector<BoundReport> corollary3;
    std::vector<BoundReport> appendix_g;
};

// Randomized bounded instances for the three verifiers.
BoundTrialSet randomized_bound_trials(std::size_t n_trials, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Full pipeline + reporting
// ---------------------------------------------------------------------------

// Writes, per repetition: trajectories, scm, classifier, estimator (fitted
// mode), outcomes, validity and bound CSVs; the manifest (config hash, seeds,
// per-file content hashes) is written last.
std::filesystem::path run_experiment(const ExperimentConfig& cfg);

struct ReportTable {
    // rows keyed (method, epsilon, eval_time) -> mean/stddev of validity
    struct Row {
        std::string method;
        double epsilon;
        long eval_time;
        double mean_validity;
        double stddev_validity;
        double mean_cost;
        std::size_t repetitions;
    };
    std::vector<Row> rows;
};

// Aggregates a result directory; refuses files missing from the manifest.
ReportTable report_results(const std::filesystem::path& result_dir);
void write_report_csv(const ReportTable& table, const std::filesystem::path& path);
std::string format_report(const ReportTable& table);

std::string content_hash_hex(const std::string& file_path);

}  // namespace tcr
