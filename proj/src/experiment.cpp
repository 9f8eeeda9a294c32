#include "tcr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace tcr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    benchmark.validate();
    if (repetitions < 1) throw ValidationError("repetitions must be >= 1");
    if (population < 4) throw ValidationError("population too small");
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ValidationError("train_fraction must lie in (0, 1)");
    const auto test_count =
        population - static_cast<std::size_t>(train_fraction * static_cast<double>(population));
    if (recourse_individuals > test_count)
        throw ValidationError("recourse-seeking count exceeds the test split size");
    if (horizon < 1) throw ValidationError("horizon must be >= 1");
    if (issue_time < 0 || issue_time > horizon) throw ValidationError("issue_time out of range");
    if (methods.empty()) throw ValidationError("at least one method required");
    if (taus.empty()) throw ValidationError("at least one evaluation lag required");
    for (long tau : taus)
        if (tau < 0 || issue_time + tau > horizon + 1000)
            throw ValidationError("evaluation lag out of range");
    if (classifier != "mlp" && classifier != "linear")
        throw ValidationError("classifier must be 'mlp' or 'linear'");
    if (estimator_mode != "true-scm" && estimator_mode != "fitted" && estimator_mode != "perfect")
        throw ValidationError("estimator mode must be true-scm, fitted or perfect");
    solver.validate();
    train.validate();
}

json ExperimentConfig::to_json() const {
    json doc;
    doc["schema_version"] = 1;
    doc["benchmark"] = {{"id", benchmarks::dataset_to_string(benchmark.dataset)},
                        {"trend", benchmarks::trend_kind_to_string(benchmark.trend)},
                        {"alpha", benchmark.alpha}};
    doc["population"] = population;
    doc["horizon"] = horizon;
    doc["train_fraction"] = train_fraction;
    doc["recourse_individuals"] = recourse_individuals;
    json ms = json::array();
    for (const auto& m : methods)
        ms.push_back({{"method", method_to_string(m.method)}, {"epsilon", m.epsilon}});
    doc["methods"] = ms;
    doc["taus"] = taus;
    doc["repetitions"] = repetitions;
    doc["master_seed"] = master_seed;
    doc["estimator"] = estimator_mode;
    doc["issue_time"] = issue_time;
    doc["burn_in"] = burn_in;
    doc["classifier"] = classifier;
    doc["linear_bound"] = linear_bound;
    doc["train"] = {{"batch_size", train.batch_size},
                    {"epochs", train.epochs},
                    {"learning_rate", train.learning_rate}};
    doc["estimator_cutoff"] = estimator_cutoff;
    json s;
    s["lambda"] = solver.lambda;
    s["eta"] = solver.eta;
    s["gamma"] = solver.gamma;
    s["epochs"] = solver.epochs;
    s["inner_iters"] = solver.inner_iters;
    s["n_uncertainty"] = solver.n_uncertainty;
    s["er_samples"] = solver.er_samples;
    s["cost_norm"] = solver.cost_norm == CostNorm::L1
                         ? "l1"
                         : (solver.cost_norm == CostNorm::L2 ? "l2" : "weighted-l1");
    if (solver.cost_norm == CostNorm::WeightedL1) s["cost_weights"] = solver.cost_weights;
    s["policy"] = solver.policy == SetPolicy::Fixed ? "fixed" : "enumerate-subsets";
    s["max_set_size"] = solver.max_set_size;
    s["convergence_tol"] = solver.convergence_tol;
    s["convergence_window"] = solver.convergence_window;
    doc["solver"] = s;
    doc["evaluation_samples"] = evaluation_samples;
    doc["bound_trials"] = bound_trials;
    doc["output_dir"] = output_dir;
    return doc;
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    if (doc.value("schema_version", 0) != 1)
        throw ValidationError("unsupported experiment config schema version");
    ExperimentConfig cfg;
    const auto& b = doc.at("benchmark");
    cfg.benchmark.dataset = benchmarks::dataset_from_string(b.at("id"));
    cfg.benchmark.trend = benchmarks::trend_kind_from_string(b.value("trend", "none"));
    cfg.benchmark.alpha = b.value("alpha", 0.0);
    cfg.population = doc.value("population", cfg.population);
    cfg.horizon = doc.value("horizon", cfg.horizon);
    cfg.train_fraction = doc.value("train_fraction", cfg.train_fraction);
    cfg.recourse_individuals = doc.value("recourse_individuals", cfg.recourse_individuals);
    if (doc.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : doc.at("methods"))
            cfg.methods.push_back(
                {method_from_string(m.at("method")), m.value("epsilon", 0.0)});
    }
    if (doc.contains("taus")) cfg.taus = doc.at("taus").get<std::vector<long>>();
    cfg.repetitions = doc.value("repetitions", cfg.repetitions);
    cfg.master_seed = doc.value("master_seed", cfg.master_seed);
    cfg.estimator_mode = doc.value("estimator", cfg.estimator_mode);
    cfg.issue_time = doc.value("issue_time", cfg.issue_time);
    cfg.burn_in = doc.value("burn_in", cfg.burn_in);
    cfg.classifier = doc.value("classifier", cfg.classifier);
    cfg.linear_bound = doc.value("linear_bound", cfg.linear_bound);
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    }
    cfg.estimator_cutoff = doc.value("estimator_cutoff", cfg.estimator_cutoff);
    if (doc.contains("solver")) {
        const auto& s = doc.at("solver");
        cfg.solver.lambda = s.value("lambda", cfg.solver.lambda);
        cfg.solver.eta = s.value("eta", cfg.solver.eta);
        cfg.solver.gamma = s.value("gamma", cfg.solver.gamma);
        cfg.solver.epochs = s.value("epochs", cfg.solver.epochs);
        cfg.solver.inner_iters = s.value("inner_iters", cfg.solver.inner_iters);
        cfg.solver.n_uncertainty = s.value("n_uncertainty", cfg.solver.n_uncertainty);
        cfg.solver.er_samples = s.value("er_samples", cfg.solver.er_samples);
        const std::string norm = s.value("cost_norm", "l1");
        cfg.solver.cost_norm = norm == "l1" ? CostNorm::L1
                                            : (norm == "l2" ? CostNorm::L2 : CostNorm::WeightedL1);
        if (s.contains("cost_weights")) cfg.solver.cost_weights = s.at("cost_weights").get<VecD>();
        cfg.solver.policy = s.value("policy", "fixed") == std::string("fixed")
                                ? SetPolicy::Fixed
                                : SetPolicy::EnumerateSubsets;
        cfg.solver.max_set_size = s.value("max_set_size", cfg.solver.max_set_size);
        cfg.solver.convergence_tol = s.value("convergence_tol", cfg.solver.convergence_tol);
        cfg.solver.convergence_window =
            s.value("convergence_window", cfg.solver.convergence_window);
    }
    cfg.evaluation_samples = doc.value("evaluation_samples", cfg.evaluation_samples);
    cfg.bound_trials = doc.value("bound_trials", cfg.bound_trials);
    cfg.output_dir = doc.value("output_dir", cfg.output_dir);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    json doc;
    in >> doc;
    return ExperimentConfig::from_json(doc);
}

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::size_t width = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("TCR_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) width = static_cast<std::size_t>(v);
    }
    width = std::max<std::size_t>(1, std::min(width, n));
    if (width <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < width; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

enum StageSeed : std::uint64_t {
    kSimulate = 1,
    kTrain = 2,
    kEstimator = 3,
    kRecourse = 4,
    kEvaluate = 5,
    kBounds = 6,
    kLabels = 7,
};

}  // namespace

SimulatedWorld simulate_stage(const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    SimulatedWorld world;
    world.scm = benchmarks::build(cfg.benchmark);
    world.train_count =
        static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(cfg.population));
    world.trajectories = sample_trajectory(world.scm, cfg.horizon, cfg.population,
                                           mix_seed(rep_seed, kSimulate),
                                           {.burn_in = cfg.burn_in, .sample_labels = false});
    // Calibrate the label normalizer on the t=0 training cross-section, then
    // draw labels for the whole series.
    if (world.scm.label) {
        Matrix t0(world.train_count, world.scm.dim());
        for (std::size_t k = 0; k < world.train_count; ++k)
            for (std::size_t c = 0; c < world.scm.dim(); ++c)
                t0(k, c) = world.trajectories[k].states(0, c);
        world.scm.label->calibrate(t0);
        const std::uint64_t label_seed = mix_seed(rep_seed, kLabels);
        for (std::size_t k = 0; k < world.trajectories.size(); ++k) {
            auto& traj = world.trajectories[k];
            for (std::size_t t = 0; t < traj.states.rows; ++t) {
                RandomStream rng(mix_seed(label_seed, k, t));
                traj.labels[t] =
                    rng.bernoulli(world.scm.label->probability(traj.states.row(t))) ? 1 : 0;
            }
        }
    }
    return world;
}

std::shared_ptr<Predictor> train_stage(const ExperimentConfig& cfg, const SimulatedWorld& world,
                                       std::uint64_t rep_seed, json* model_doc) {
    Matrix states(world.train_count, world.scm.dim());
    std::vector<int> labels(world.train_count);
    for (std::size_t k = 0; k < world.train_count; ++k) {
        for (std::size_t c = 0; c < world.scm.dim(); ++c)
            states(k, c) = world.trajectories[k].states(0, c);
        labels[k] = world.trajectories[k].labels[0];
    }
    if (cfg.classifier == "mlp") {
        TrainConfig tc = cfg.train;
        tc.seed = mix_seed(rep_seed, kTrain);
        auto trained = train_mlp(states, labels, tc);
        if (model_doc) *model_doc = trained.model.to_json();
        return std::make_shared<MlpClassifier>(std::move(trained.model));
    }
    // Bounded linear on +-1 targets so the score sign matches the 1/2 rule.
    VecD targets(world.train_count);
    for (std::size_t k = 0; k < world.train_count; ++k) targets[k] = labels[k] ? 1.0 : -1.0;
    auto model = fit_bounded_linear(states, targets, cfg.linear_bound);
    if (model_doc) *model_doc = model.to_json();
    return std::make_shared<BoundedLinearClassifier>(std::move(model));
}

ScmSpec estimator_stage(const ExperimentConfig& cfg, const SimulatedWorld& world,
                        std::uint64_t rep_seed) {
    if (cfg.estimator_mode != "fitted") return world.scm;  // true-scm and perfect modes
    EstimatorConfig ec;
    ec.fit_cutoff = cfg.estimator_cutoff >= 0 ? cfg.estimator_cutoff : cfg.horizon / 2;
    ec.seed = mix_seed(rep_seed, kEstimator);
    std::vector<Trajectory> train_data(world.trajectories.begin(),
                                       world.trajectories.begin() +
                                           static_cast<std::ptrdiff_t>(world.train_count));
    return fit_scm(train_data, world.scm, ec);
}

std::vector<std::size_t> pick_recourse_seekers(const ExperimentConfig& cfg,
                                               const SimulatedWorld& world, const Predictor& h) {
    std::vector<std::size_t> seekers;
    for (std::size_t k = world.train_count;
         k < world.trajectories.size() && seekers.size() < cfg.recourse_individuals; ++k) {
        const auto x = world.trajectories[k].states.row(static_cast<std::size_t>(cfg.issue_time));
        if (h.predict(x) < 0.5) seekers.push_back(k);
    }
    if (seekers.empty())
        throw ValidationError("no negatively classified test individuals at the issue time");
    return seekers;
}

std::vector<MethodRun> recourse_stage(const ExperimentConfig& cfg, const SimulatedWorld& world,
                                      const ScmSpec& solver_scm, const Predictor& h,
                                      const std::vector<std::size_t>& seekers,
                                      std::uint64_t rep_seed) {
    std::vector<MethodRun> runs;
    const std::uint64_t stage_seed = mix_seed(rep_seed, kRecourse);
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const auto& spec = cfg.methods[mi];
        std::vector<long> solve_taus = {0};
        if (spec.method == Method::Tsar) {
            solve_taus.clear();
            for (long tau : cfg.taus) solve_taus.push_back(std::max<long>(tau, 1));
        }
        for (long tau : solve_taus) {
            MethodRun run;
            run.spec = spec;
            run.tau = tau;
            run.cases.resize(seekers.size());
            parallel_for(seekers.size(), [&](std::size_t s) {
                const auto& traj = world.trajectories[seekers[s]];
                RecourseConfig rc = cfg.solver;
                rc.method = spec.method;
                rc.epsilon = spec.epsilon;
                rc.tau = tau;
                IndividualCase ic;
                ic.t_hist = cfg.issue_time;
                // Full observed history plus the burn-in tail for lags.
                const int lag = solver_scm.max_lag;
                Matrix hist(static_cast<std::size_t>(cfg.issue_time + lag) + 1, world.scm.dim());
                for (long t = -lag; t <= cfg.issue_time; ++t) {
                    for (std::size_t c = 0; c < world.scm.dim(); ++c) {
                        double v;
                        if (t >= 0) {
                            v = traj.states(static_cast<std::size_t>(t), c);
                        } else {
                            const long idx = static_cast<long>(traj.lag_rows.rows) + t;
                            v = idx >= 0 ? traj.lag_rows(static_cast<std::size_t>(idx), c) : 0.0;
                        }
                        hist(static_cast<std::size_t>(t + lag), c) = v;
                    }
                }
                ic.history = hist;
                ic.outcome = solve(solver_scm, hist, cfg.issue_time, rc, h,
                                   mix_seed(stage_seed, mi, static_cast<std::uint64_t>(tau),
                                            seekers[s]));
                run.cases[s] = std::move(ic);
            });
            runs.push_back(std::move(run));
        }
    }
    return runs;
}

std::vector<ValidityRecord> evaluate_stage(const ExperimentConfig& cfg,
                                           const SimulatedWorld& world, const Predictor& h,
                                           const std::vector<MethodRun>& runs,
                                           std::uint64_t rep_seed) {
    std::vector<ValidityRecord> records;
    const std::uint64_t stage_seed = mix_seed(rep_seed, kEvaluate);
    for (std::size_t ri = 0; ri < runs.size(); ++ri) {
        const auto& run = runs[ri];
        // t-sar outcomes solved for a specific lag are scored at that lag;
        // static methods are scored across the whole grid.
        std::vector<long> eval_taus;
        if (run.spec.method == Method::Tsar)
            eval_taus = {run.tau};
        else
            eval_taus = cfg.taus;
        auto recs = validity_over_time(world.scm, h, run.cases, eval_taus, cfg.evaluation_samples,
                                       mix_seed(stage_seed, ri), cfg.solver);
        records.insert(records.end(), recs.begin(), recs.end());
    }
    return records;
}

BoundTrialSet randomized_bound_trials(std::size_t n_trials, std::uint64_t seed) {
    BoundTrialSet set;
    set.theorem1.reserve(n_trials);
    set.corollary3.reserve(n_trials);
    set.appendix_g.reserve(n_trials);
    const std::size_t n_samples = 64;
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
        RandomStream rng(mix_seed(seed, trial));
        const std::size_t d = 1 + rng.index(6);
        const double k = 0.5 + 2.5 * rng.uniform();

        {  // Theorem 1: bounded betas and paired bounded states.
            VecD b0(d), b1(d);
            for (auto& v : b0) v = (2.0 * rng.uniform() - 1.0) * k;
            for (auto& v : b1) v = (2.0 * rng.uniform() - 1.0) * k;
            Matrix x0(n_samples, d), x1(n_samples, d);
            for (std::size_t r = 0; r < n_samples; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    x0(r, c) = (2.0 * rng.uniform() - 1.0) * k;
                    const double step = (2.0 * rng.uniform() - 1.0) * k * 0.5;
                    x1(r, c) = std::clamp(x0(r, c) + step, -k, k);
                }
            }
            set.theorem1.push_back(theorem1_bound(k, b0, b1, x0, x1));
        }
        {  // Corollary 3: common stationary base plus increasing linear trends.
            const double t = 20.0 * rng.uniform();
            const double tau = 1.0 + 9.0 * rng.uniform();
            VecD b0(d), b1(d);
            for (auto& v : b0) v = (2.0 * rng.uniform() - 1.0) * k;
            for (auto& v : b1) v = (2.0 * rng.uniform() - 1.0) * k;
            std::vector<TrendSpec> trends(d);
            for (auto& tr : trends) {
                const double slope = rng.uniform() * (k / 2.0) / (t + tau);
                tr.alpha = 1.0;
                tr.beta_linear = slope / 0.05;  // linear for t <= 200
                tr.sign = 1;
            }
            Matrix base(n_samples, d);
            for (auto& v : base.data) v = (2.0 * rng.uniform() - 1.0) * (k / 4.0);
            set.corollary3.push_back(corollary3_bound(k, b0, b1, trends, t, tau, base));
        }
        {  // Appendix G: bounded weights, displacements within k.
            VecD w0(d), w1(d);
            for (auto& v : w0) v = (2.0 * rng.uniform() - 1.0) * k;
            for (auto& v : w1) v = (2.0 * rng.uniform() - 1.0) * k;
            Matrix xa(n_samples, d), fa(n_samples, d), xb(n_samples, d), fb(n_samples, d);
            for (std::size_t r = 0; r < n_samples; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    fa(r, c) = (2.0 * rng.uniform() - 1.0) * (k / 2.0);
                    xa(r, c) = (2.0 * rng.uniform() - 1.0) * (k / 2.0);
                    fb(r, c) = (2.0 * rng.uniform() - 1.0) * (k / 2.0);
                    xb(r, c) = (2.0 * rng.uniform() - 1.0) * (k / 2.0);
                }
            }
            set.appendix_g.push_back(appendixG_cost_bound(k, w0, w1, fa, xa, fb, xb));
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Run pipeline + manifest
// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a_bytes(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
}

std::string csv_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void write_outcomes_csv(const fs::path& path, const ScmSpec& scm,
                        const std::vector<MethodRun>& runs) {
    std::ostringstream out;
    out << "individual,method,epsilon,tau,converged,cost,|I|,I";
    for (const auto& v : scm.variables) out << ",theta_" << v.name;
    out << '\n';
    for (const auto& run : runs) {
        for (std::size_t s = 0; s < run.cases.size(); ++s) {
            const auto& oc = run.cases[s].outcome;
            out << s << ',' << method_to_string(oc.method) << ',' << csv_double(oc.epsilon) << ','
                << oc.tau << ',' << (oc.converged ? 1 : 0) << ',' << csv_double(oc.cost) << ','
                << sparsity(oc.theta) << ',';
            bool first = true;
            for (std::size_t i : oc.intervention_set) {
                if (!first) out << ';';
                out << scm.variables[i].name;
                first = false;
            }
            for (double v : oc.theta) out << ',' << csv_double(v);
            out << '\n';
        }
    }
    write_text(path, out.str());
}

void write_validity_csv(const fs::path& path, const std::vector<ValidityRecord>& records) {
    std::ostringstream out;
    out << "method,epsilon,issue_time,eval_time,n,validity,mean_cost_valid,mean_set_size\n";
    for (const auto& r : records) {
        out << method_to_string(r.method) << ',' << csv_double(r.epsilon) << ',' << r.issue_time
            << ',' << r.eval_time << ',' << r.n << ',' << csv_double(r.validity) << ','
            << csv_double(r.mean_cost_valid) << ',' << csv_double(r.mean_set_size) << '\n';
    }
    write_text(path, out.str());
}

void write_bounds_csv(const fs::path& path, const BoundTrialSet& set) {
    std::ostringstream out;
    out << "bound,trial,empirical,bound_value,slack,ci\n";
    auto emit = [&](const char* name, const std::vector<BoundReport>& reports) {
        for (std::size_t i = 0; i < reports.size(); ++i) {
            out << name << ',' << i << ',' << csv_double(reports[i].empirical) << ','
                << csv_double(reports[i].bound) << ',' << csv_double(reports[i].slack) << ','
                << csv_double(reports[i].ci) << '\n';
        }
    };
    emit("theorem1", set.theorem1);
    emit("corollary3", set.corollary3);
    emit("appendix_g", set.appendix_g);
    write_text(path, out.str());
}

}  // namespace

std::string content_hash_hex(const std::string& file_path) {
    std::ifstream in(file_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file '" + file_path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return hex64(fnv1a_bytes(buf.str()));
}

std::filesystem::path run_experiment(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    if (const char* env = std::getenv("TCR_OUT_DIR")) cfg.output_dir = env;
    cfg.validate();
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);

    json manifest;
    manifest["schema_version"] = 1;
    manifest["config"] = cfg.to_json();
    manifest["config_hash"] = hex64(fnv1a_bytes(cfg.to_json().dump()));
    manifest["completed"] = false;
    json files = json::array();
    json seeds = json::array();

    std::string stage = "setup";
    try {
        for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
            const std::uint64_t rep_seed = mix_seed(cfg.master_seed, rep);
            const fs::path rep_dir = out_dir / ("rep" + std::to_string(rep));
            fs::create_directories(rep_dir);
            json rep_seeds;
            rep_seeds["repetition"] = rep;
            rep_seeds["rep_seed"] = rep_seed;

            stage = "simulate";
            auto world = simulate_stage(cfg, rep_seed);
            write_trajectories_csv((rep_dir / "trajectories.csv").string(), world.scm,
                                   world.trajectories);
            write_text(rep_dir / "scm.json", scm_to_json(world.scm).dump(2) + "\n");

            stage = "train";
            json model_doc;
            auto h = train_stage(cfg, world, rep_seed, &model_doc);
            write_text(rep_dir / "classifier.json", model_doc.dump(2) + "\n");

            stage = "fit-scm";
            ScmSpec solver_scm = estimator_stage(cfg, world, rep_seed);
            if (cfg.estimator_mode == "fitted")
                write_text(rep_dir / "estimator.json", scm_to_json(solver_scm).dump(2) + "\n");

            stage = "recourse";
            const auto seekers = pick_recourse_seekers(cfg, world, *h);
            rep_seeds["seekers"] = seekers.size();
            const auto runs = recourse_stage(cfg, world, solver_scm, *h, seekers, rep_seed);
            write_outcomes_csv(rep_dir / "outcomes.csv", world.scm, runs);

            stage = "evaluate";
            const auto records = evaluate_stage(cfg, world, *h, runs, rep_seed);
            write_validity_csv(rep_dir / "validity.csv", records);

            stage = "bounds";
            const auto bounds = randomized_bound_trials(cfg.bound_trials,
                                                        mix_seed(rep_seed, kBounds));
            write_bounds_csv(rep_dir / "bounds.csv", bounds);

            seeds.push_back(rep_seeds);
            for (const char* name : {"trajectories.csv", "scm.json", "classifier.json",
                                     "outcomes.csv", "validity.csv", "bounds.csv"}) {
                const fs::path p = rep_dir / name;
                files.push_back({{"path", (fs::path("rep" + std::to_string(rep)) / name).string()},
                                 {"fnv1a", content_hash_hex(p.string())}});
            }
            if (cfg.estimator_mode == "fitted") {
                const fs::path p = rep_dir / "estimator.json";
                files.push_back(
                    {{"path", (fs::path("rep" + std::to_string(rep)) / "estimator.json").string()},
                     {"fnv1a", content_hash_hex(p.string())}});
            }
        }
        manifest["completed"] = true;
    } catch (const std::exception& e) {
        manifest["completed"] = false;
        manifest["failed_stage"] = stage;
        manifest["error"] = e.what();
        manifest["seeds"] = seeds;
        manifest["files"] = files;
        write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
        throw std::runtime_error("experiment stage '" + stage + "' failed: " + e.what());
    }
    manifest["seeds"] = seeds;
    manifest["files"] = files;
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return out_dir;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

ReportTable report_results(const std::filesystem::path& result_dir) {
    const fs::path manifest_path = result_dir / "manifest.json";
    std::ifstream min(manifest_path);
    if (!min) throw std::runtime_error("missing manifest in '" + result_dir.string() + "'");
    json manifest;
    min >> manifest;
    if (!manifest.value("completed", false))
        throw std::runtime_error("result bundle is incomplete (failed stage: " +
                                 manifest.value("failed_stage", std::string("?")) + ")");

    // Only manifest-listed validity files are admissible.
    std::vector<std::string> validity_files;
    for (const auto& f : manifest.at("files")) {
        const std::string path = f.at("path");
        if (path.find("validity.csv") == std::string::npos) continue;
        const fs::path full = result_dir / path;
        if (!fs::exists(full)) throw std::runtime_error("manifest lists missing file " + path);
        if (content_hash_hex(full.string()) != f.at("fnv1a").get<std::string>())
            throw std::runtime_error("content hash mismatch for " + path);
        validity_files.push_back(full.string());
    }
    if (validity_files.empty()) throw std::runtime_error("no validity records in result bundle");

    struct Acc {
        VecD validity;
        VecD cost;
    };
    std::map<std::tuple<std::string, double, long>, Acc> acc;
    for (const auto& file : validity_files) {
        std::ifstream in(file);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cols = split_csv_line(line);
            const std::string method = cols[0];
            const double eps = std::stod(cols[1]);
            const long eval_time = std::stol(cols[3]);
            auto& a = acc[{method, eps, eval_time}];
            a.validity.push_back(std::stod(cols[5]));
            a.cost.push_back(std::stod(cols[6]));
        }
    }
    ReportTable table;
    for (const auto& [key, a] : acc) {
        ReportTable::Row row;
        row.method = std::get<0>(key);
        row.epsilon = std::get<1>(key);
        row.eval_time = std::get<2>(key);
        row.mean_validity = mean(a.validity);
        row.stddev_validity = a.validity.size() > 1 ? stddev(a.validity) : 0.0;
        row.mean_cost = mean(a.cost);
        row.repetitions = a.validity.size();
        table.rows.push_back(row);
    }
    return table;
}

void write_report_csv(const ReportTable& table, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "method,epsilon,eval_time,mean_validity,stddev_validity,mean_cost,repetitions\n";
    for (const auto& r : table.rows) {
        out << r.method << ',' << csv_double(r.epsilon) << ',' << r.eval_time << ','
            << csv_double(r.mean_validity) << ',' << csv_double(r.stddev_validity) << ','
            << csv_double(r.mean_cost) << ',' << r.repetitions << '\n';
    }
    write_text(path, out.str());
}

std::string format_report(const ReportTable& table) {
    std::ostringstream os;
    os << "method      eps     t       validity          cost\n";
    for (const auto& r : table.rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-10s %6.3g %6ld   %6.3f +/- %-6.3f %8.3f\n",
                      r.method.c_str(), r.epsilon, r.eval_time, r.mean_validity,
                      r.stddev_validity, r.mean_cost);
        os << line;
    }
    return os.str();
}

}  // namespace tcr
