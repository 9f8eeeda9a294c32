#pragma once

#include "tcr/predictors.hpp"
#include "tcr/scm.hpp"

namespace tcr {

enum class Method { Imf, Car, Sar, Tsar };
enum class ErMode { Plain, Counterfactual, Interventional };
enum class CostNorm { L1, L2, WeightedL1 };
enum class SetPolicy { Fixed, EnumerateSubsets };

Method method_from_string(const std::string& name);
std::string method_to_string(Method m);

struct RecourseConfig {
    Method method = Method::Tsar;
    double epsilon = 0.0;  // ball radius for imf/car/sar
    long tau = 1;          // forecast lag for t-sar
    double lambda = 1.0;
    double eta = 0.5;
    double gamma = 0.98;  // per-epoch multiplicative lambda decay
    std::size_t epochs = 30;
    std::size_t inner_iters = 25;
    std::size_t n_uncertainty = 20;
    std::size_t er_samples = 20;  // Monte-Carlo draws inside interventional ER
    CostNorm cost_norm = CostNorm::L1;
    VecD cost_weights;  // per-variable, weighted-l1 only
    SetPolicy policy = SetPolicy::Fixed;
    std::size_t max_set_size = 0;            // enumeration cap; 0 = |actionable|
    std::vector<std::size_t> intervention_set;  // fixed policy; empty = all actionable
    double convergence_tol = 1e-4;
    std::size_t convergence_window = 5;

    void validate() const;
};

struct RecourseOutcome {
    Method method = Method::Tsar;
    double epsilon = 0.0;
    long tau = 0;
    VecD theta;  // full-dimension offsets, zero off the intervention set
    std::vector<std::size_t> intervention_set;
    bool converged = false;
    long issue_time = 0;
    std::size_t epochs_used = 0;
    double expected_response = 0.0;  // worst-case ER at the returned theta
    double cost = 0.0;
};

double intervention_cost(const RecourseConfig& cfg, std::span<const double> theta);

// Number of coordinates theta actually moves.
std::size_t sparsity(std::span<const double> theta, double tol = 1e-12);

// ER(x, tau; theta) under the requested distribution. `history` rows end at
// absolute time t_hist; interventional mode targets iv.apply_at.
double expected_response(const ScmSpec& scm, const Matrix& history, long t_hist,
                         const Intervention& iv, ErMode mode, std::size_t n, std::uint64_t seed,
                         const Predictor& h);

// Min-max projected-gradient search shared by all four engines.
RecourseOutcome solve(const ScmSpec& scm, const Matrix& history, long t_hist,
                      const RecourseConfig& cfg, const Predictor& h, std::uint64_t seed);

// Step trends m_i(t) = 1{t >= at}(-theta_i), one per coordinate of theta.
std::vector<TrendSpec> adversarial_trend_for(const VecD& theta, double at);

// Copy of `scm` whose per-variable trends are replaced by the adversarial
// step trends for theta.
ScmSpec apply_adversarial_trend(ScmSpec scm, const VecD& theta, double at);

}  // namespace tcr
