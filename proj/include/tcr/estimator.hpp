#pragma once

#include "tcr/scm.hpp"

namespace tcr {

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EstimatorConfig {
    long fit_cutoff = -1;  // defaults to half the available horizon
    std::uint64_t seed = 0;
};

// Learns an approximate SCM from trajectories: one linear regressor per
// non-frozen variable over (declared parents, t) with an intercept and unit
// Gaussian noise; frozen variables are copied. The result is a full ScmSpec
// usable by every core operation.
ScmSpec fit_scm(const std::vector<Trajectory>& data, const ScmSpec& graph,
                const EstimatorConfig& cfg = {});

// Mean one-step prediction error of the fitted means against realized data,
// per feature, averaged over individuals and t in [1, t_limit].
VecD one_step_mse(const ScmSpec& estimator, const std::vector<Trajectory>& data, long t_limit);

struct ForecastQuality {
    std::vector<VecD> mse;  // [horizon][feature]
};

// Noise-free estimator rollouts scored against stochastic truth rollouts
// from shared conditioning states.
ForecastQuality forecast_quality(const ScmSpec& estimator, const ScmSpec& truth, long horizon,
                                 std::size_t n, std::uint64_t seed);

}  // namespace tcr
