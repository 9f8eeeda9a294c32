#pragma once

#include <functional>
#include <map>

#include "tcr/recourse.hpp"

namespace tcr {

struct ValidityRecord {
    Method method = Method::Tsar;
    double epsilon = 0.0;
    long issue_time = 0;
    long eval_time = 0;
    std::size_t n = 0;
    double validity = 0.0;         // fraction with E[h] >= 1/2
    double mean_cost_valid = 0.0;  // mean cost over valid outcomes
    double mean_set_size = 0.0;    // mean |I| over valid outcomes
};

struct IndividualCase {
    Matrix history;  // observed rows ending at the issue time
    long t_hist = 0;
    RecourseOutcome outcome;
};

// For each evaluation lag, simulates every individual forward on the true
// process, applies their theta at issue_time + tau, and scores E[h] against
// 1/2. Unconverged outcomes count as invalid.
std::vector<ValidityRecord> validity_over_time(const ScmSpec& truth, const Predictor& h,
                                               const std::vector<IndividualCase>& cases,
                                               const std::vector<long>& eval_taus, std::size_t n_mc,
                                               std::uint64_t seed, const RecourseConfig& cost_cfg);

// Time-indexed classifier sequence; t is absolute.
using ClassifierSequence = std::function<double(long t, std::span<const double> state)>;

// Monte-Carlo estimate of E|h^{t+tau}(x_hat^{t+tau}) - h^t(x_hat^t)| under
// interventional sampling at both times, coupled through a common rollout.
double invalidation_rate(const ScmSpec& scm, const ClassifierSequence& h_seq,
                         const std::vector<std::size_t>& targets, const VecD& theta, long t,
                         long tau, std::size_t n, std::uint64_t seed, int burn_in = 10);

struct BoundReport {
    double empirical = 0.0;
    double bound = 0.0;
    double slack = 0.0;  // bound - empirical
    double ci = 0.0;     // Monte-Carlo half-width on the slack
    std::map<std::string, double> params;
};

// Upper bound k sqrt(d) (E||b' - b|| + E||x' - x||) against the empirical
// invalidation rate of the two bounded linear scorers; the proof-consistent
// form carries k sqrt(d) on both terms, the stated form only on the first
// (reported in params as "stated_bound").
BoundReport theorem1_bound(double k, const VecD& beta_t, const VecD& beta_ttau,
                           const Matrix& x_samples_t, const Matrix& x_samples_ttau);

// Trend-stationary refinement: k (sqrt(d) E||b' - b|| + d (m*(t+tau) - m*(t)))
// with m* the largest per-feature trend; empirical side built from the shared
// stationary base states plus the trends at both times.
BoundReport corollary3_bound(double k, const VecD& beta_t, const VecD& beta_ttau,
                             const std::vector<TrendSpec>& trends, double t, double tau,
                             const Matrix& stationary_base);

// Cost-stability bound for preference-weighted l1 costs.
BoundReport appendixG_cost_bound(double k, const VecD& w_t, const VecD& w_ttau,
                                 const Matrix& xhat_t, const Matrix& x_t, const Matrix& xhat_ttau,
                                 const Matrix& x_ttau);

// Closed-form optimal offset for the 1-D trend-stationary AR process:
// theta = -a^{tau+1} x_prev - sum_{i=0}^{tau} a^{tau-i} (-c (t+i) + mu_m + mu_x).
double example1_oracle(double alpha, double beta, double c, double mu_m, double mu_x,
                       double x_prev, long t, long tau);

// Expectation E[X^{t+tau}] of the same process given x_prev at t-1.
double example1_mean_state(double alpha, double c, double mu_m, double mu_x, double x_prev, long t,
                           long tau);

}  // namespace tcr
