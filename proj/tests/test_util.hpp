#pragma once

#include "tcr/scm.hpp"

namespace tcr::testutil {

// Single-variable AR process with optional noise and trend, used across the
// suites. x^t = ar x^{t-1} + intercept + u.
inline ScmSpec ar1(double ar, double intercept, NoiseSpec noise,
                   std::optional<TrendSpec> trend = std::nullopt) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"x", true, false, false}};
    StructuralEquation eq;
    eq.parents = {{0, 1}};
    eq.affine = {{0, ar}};
    eq.intercept = intercept;
    eq.noise = noise;
    eq.trend = trend;
    scm.equations = {eq};
    scm.validate();
    return scm;
}

// Mean of X^{t+tau} for the Example-1 process given x_prev at t-1, derived
// here by direct recursion (independent of the library's closed form).
inline double example1_mean_by_recursion(double alpha, double c, double mu_m, double mu_x,
                                         double x_prev, long t, long tau) {
    double mean = x_prev;
    for (long s = t; s <= t + tau; ++s) mean = alpha * mean + (-c * static_cast<double>(s)) + mu_m + mu_x;
    return mean;
}

}  // namespace tcr::testutil
