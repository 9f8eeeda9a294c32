#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tcr/experiment.hpp"

using namespace tcr;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.benchmark = {benchmarks::Dataset::LinearAnm, benchmarks::TrendKind::Linear, 0.5};
    cfg.population = 80;
    cfg.horizon = 12;
    cfg.train_fraction = 0.75;
    cfg.recourse_individuals = 6;
    cfg.methods = {{Method::Car, 1.0}, {Method::Tsar, 0.0}};
    cfg.taus = {5};
    cfg.repetitions = 1;
    cfg.master_seed = 99;
    cfg.classifier = "linear";
    cfg.solver.lambda = 0.1;
    cfg.solver.eta = 0.25;
    cfg.solver.er_samples = 20;
    cfg.solver.n_uncertainty = 8;
    cfg.evaluation_samples = 40;
    cfg.bound_trials = 10;
    cfg.train.epochs = 3;
    cfg.output_dir = out_dir;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("experiment config round-trips through json") {
    auto cfg = smoke_config("results/x");
    cfg.solver.cost_norm = CostNorm::WeightedL1;
    cfg.solver.cost_weights = {1.0, 2.0, 0.5};
    cfg.solver.policy = SetPolicy::EnumerateSubsets;
    cfg.solver.max_set_size = 2;
    const json doc = cfg.to_json();
    const auto back = ExperimentConfig::from_json(doc);
    CHECK(back.to_json() == doc);
    CHECK(back.to_json().dump(2) == doc.dump(2));
}

TEST_CASE("config validation catches inconsistent settings") {
    auto cfg = smoke_config("results/x");
    cfg.recourse_individuals = 75;  // larger than the test split
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = smoke_config("results/x");
    cfg.estimator_mode = "unknown";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("minimal pipeline run emits a complete, hash-consistent bundle") {
    const fs::path dir = fs::temp_directory_path() / "tcr_smoke_a";
    fs::remove_all(dir);
    const auto cfg = smoke_config(dir.string());
    const auto out_dir = run_experiment(cfg);

    std::ifstream min(out_dir / "manifest.json");
    REQUIRE(min.good());
    json manifest;
    min >> manifest;
    CHECK(manifest.at("completed") == true);
    CHECK(manifest.at("files").size() >= 6);
    for (const auto& f : manifest.at("files")) {
        const fs::path p = out_dir / f.at("path").get<std::string>();
        REQUIRE(fs::exists(p));
        CHECK(content_hash_hex(p.string()) == f.at("fnv1a").get<std::string>());
    }

    // Aggregation works and matches the single repetition's validity file.
    const auto table = report_results(out_dir);
    CHECK(!table.rows.empty());
    for (const auto& row : table.rows) {
        CHECK(row.repetitions == 1);
        CHECK(row.stddev_validity == 0.0);
        CHECK(row.mean_validity >= 0.0);
        CHECK(row.mean_validity <= 1.0);
    }
    fs::remove_all(dir);
}

TEST_CASE("identical config and seeds give byte-identical bundles") {
    const fs::path dir_a = fs::temp_directory_path() / "tcr_smoke_b1";
    const fs::path dir_b = fs::temp_directory_path() / "tcr_smoke_b2";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    auto cfg = smoke_config(dir_a.string());
    run_experiment(cfg);
    cfg.output_dir = dir_b.string();
    run_experiment(cfg);
    for (const char* name :
         {"rep0/trajectories.csv", "rep0/outcomes.csv", "rep0/validity.csv", "rep0/bounds.csv"}) {
        CHECK(slurp(dir_a / name) == slurp(dir_b / name));
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("thread width does not change results") {
    const fs::path dir_a = fs::temp_directory_path() / "tcr_smoke_t1";
    const fs::path dir_b = fs::temp_directory_path() / "tcr_smoke_t2";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    auto cfg = smoke_config(dir_a.string());
    setenv("TCR_THREADS", "1", 1);
    run_experiment(cfg);
    cfg.output_dir = dir_b.string();
    setenv("TCR_THREADS", "2", 1);
    run_experiment(cfg);
    unsetenv("TCR_THREADS");
    CHECK(slurp(dir_a / "rep0/outcomes.csv") == slurp(dir_b / "rep0/outcomes.csv"));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("report aggregation matches a hand-computed mean and stddev") {
    const fs::path dir = fs::temp_directory_path() / "tcr_smoke_c";
    fs::remove_all(dir);
    auto cfg = smoke_config(dir.string());
    cfg.repetitions = 2;
    cfg.methods = {{Method::Car, 1.0}};
    run_experiment(cfg);

    // Hand-read the two validity files.
    std::vector<double> vals;
    for (int rep = 0; rep < 2; ++rep) {
        std::ifstream in(dir / ("rep" + std::to_string(rep)) / "validity.csv");
        std::string line;
        std::getline(in, line);  // header
        std::getline(in, line);
        const auto comma = [&](int field) {
            std::size_t pos = 0;
            for (int i = 0; i < field; ++i) pos = line.find(',', pos) + 1;
            return std::stod(line.substr(pos, line.find(',', pos) - pos));
        };
        vals.push_back(comma(5));
    }
    const double mean_v = 0.5 * (vals[0] + vals[1]);
    const double sd_v = std::sqrt((vals[0] - mean_v) * (vals[0] - mean_v) +
                                  (vals[1] - mean_v) * (vals[1] - mean_v));

    const auto table = report_results(dir);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].repetitions == 2);
    CHECK(table.rows[0].mean_validity == doctest::Approx(mean_v));
    CHECK(table.rows[0].stddev_validity == doctest::Approx(sd_v));
    fs::remove_all(dir);
}

TEST_CASE("report refuses missing or tampered bundles") {
    CHECK_THROWS(report_results(fs::temp_directory_path() / "tcr_missing_dir"));

    const fs::path dir = fs::temp_directory_path() / "tcr_smoke_d";
    fs::remove_all(dir);
    const auto cfg = smoke_config(dir.string());
    run_experiment(cfg);
    {
        std::ofstream out(dir / "rep0" / "validity.csv", std::ios::app);
        out << "tampered\n";
    }
    CHECK_THROWS_WITH_AS(report_results(dir), doctest::Contains("hash mismatch"),
                         std::runtime_error);
    fs::remove_all(dir);
}
