#pragma once

#include "tcr/scm.hpp"

namespace tcr::benchmarks {

enum class Dataset { LinearAnm, NonlinearAnm, Adult, Compas, Loan };
enum class TrendKind { None, Linear, Seasonal, LinearSeasonal };

struct BenchmarkId {
    Dataset dataset = Dataset::LinearAnm;
    TrendKind trend = TrendKind::None;
    double alpha = 0.0;

    void validate() const;
};

Dataset dataset_from_string(const std::string& name);
std::string dataset_to_string(Dataset d);
TrendKind trend_kind_from_string(const std::string& name);
std::string trend_kind_to_string(TrendKind k);

// Builds the ready-made spec: structural equations, noise, actionability
// flags, the trend attached to its designated variable, and the label
// function (calibration pending for the benchmarks that need it).
ScmSpec build(const BenchmarkId& id);

// Bernoulli labels for a cross-section of states; the label normalizer is
// calibrated on the provided sample.
std::vector<int> label_sampler(const ScmSpec& scm, const Matrix& states, std::uint64_t seed);

// Replaces every equation's noise with N(0, sigma); used by the uncertainty
// sweeps where sigma = 0 yields a fully deterministic process.
ScmSpec override_noise_with_gaussian(ScmSpec scm, double sigma);

// Fits a 1-hidden-layer tanh regressor on (inputs, targets); used both here
// (fresh structural equations for the realistic graphs) and by tests.
MlpRegressor fit_mlp_regressor(const Matrix& inputs, const VecD& targets, std::size_t hidden,
                               std::size_t iters, double learning_rate, std::uint64_t seed,
                               bool sigmoid_output = false);

// One-variable trend-stationary AR process: X^t = ar X^{t-1} - c t + U,
// U ~ N(mu_m + mu_x, sqrt(sd_m^2 + sd_x^2)). The closed-form recourse
// analysis uses this process throughout.
ScmSpec build_ar1_process(double ar, double c, double mu_m, double mu_x, double sd_m, double sd_x);

}  // namespace tcr::benchmarks
