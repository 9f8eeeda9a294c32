#include "tcr/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace tcr {

std::vector<ValidityRecord> validity_over_time(const ScmSpec& truth, const Predictor& h,
                                               const std::vector<IndividualCase>& cases,
                                               const std::vector<long>& eval_taus, std::size_t n_mc,
                                               std::uint64_t seed,
                                               const RecourseConfig& cost_cfg) {
    if (cases.empty()) throw ValidationError("no individuals to evaluate");
    std::vector<ValidityRecord> records;
    records.reserve(eval_taus.size());
    for (long tau : eval_taus) {
        ValidityRecord rec;
        rec.method = cases.front().outcome.method;
        rec.epsilon = cases.front().outcome.epsilon;
        rec.issue_time = cases.front().t_hist;
        rec.eval_time = cases.front().t_hist + tau;
        rec.n = cases.size();
        std::size_t valid = 0;
        double cost_sum = 0.0, size_sum = 0.0;
        for (std::size_t c = 0; c < cases.size(); ++c) {
            const auto& ind = cases[c];
            if (!ind.outcome.converged) continue;  // unconverged counts as invalid
            Intervention iv;
            for (std::size_t i : ind.outcome.intervention_set) {
                iv.targets.push_back(i);
                iv.theta.push_back(ind.outcome.theta[i]);
            }
            iv.mode = InterventionMode::Soft;
            iv.apply_at = ind.t_hist + tau;
            const double er = expected_response(truth, ind.history, ind.t_hist, iv,
                                                ErMode::Interventional, n_mc,
                                                mix_seed(seed, c, static_cast<std::uint64_t>(tau)),
                                                h);
            if (er >= 0.5) {
                ++valid;
                cost_sum += intervention_cost(cost_cfg, ind.outcome.theta);
                size_sum += static_cast<double>(sparsity(ind.outcome.theta));
            }
        }
        rec.validity = static_cast<double>(valid) / static_cast<double>(cases.size());
        rec.mean_cost_valid = valid ? cost_sum / static_cast<double>(valid) : 0.0;
        rec.mean_set_size = valid ? size_sum / static_cast<double>(valid) : 0.0;
        records.push_back(rec);
    }
    return records;
}

double invalidation_rate(const ScmSpec& scm, const ClassifierSequence& h_seq,
                         const std::vector<std::size_t>& targets, const VecD& theta, long t,
                         long tau, std::size_t n, std::uint64_t seed, int burn_in) {
    if (tau < 0) throw ValidationError("tau must be >= 0");
    Intervention iv;
    iv.targets = targets;
    iv.theta = theta;
    iv.mode = InterventionMode::Soft;

    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        // One base world per draw; both interventional states share it.
        auto base = sample_trajectory(scm, t + tau, 1, mix_seed(seed, k),
                                      {.burn_in = burn_in});
        const Matrix win_t = history_window(base[0], t, scm.max_lag);
        RandomStream rng_t(mix_seed(seed, k, 1));
        iv.apply_at = t;
        const VecD xh_t = conditional_reevaluate(scm, win_t, t, iv, rng_t);

        const Matrix win_tt = history_window(base[0], t + tau, scm.max_lag);
        RandomStream rng_tt(mix_seed(seed, k, 2));
        iv.apply_at = t + tau;
        const VecD xh_tt = conditional_reevaluate(scm, win_tt, t + tau, iv, rng_tt);

        total += std::fabs(h_seq(t + tau, xh_tt) - h_seq(t, xh_t));
    }
    return total / static_cast<double>(n);
}

namespace {

void check_bounded(double k, const VecD& v, const char* what) {
    for (double x : v)
        if (std::fabs(x) > k + 1e-9)
            throw ValidationError(std::string(what) + " violates the |.| <= k precondition");
}

void check_bounded(double k, const Matrix& m, const char* what) {
    for (double x : m.data)
        if (std::fabs(x) > k + 1e-9)
            throw ValidationError(std::string(what) + " violates the |.| <= k precondition");
}

}  // namespace

BoundReport theorem1_bound(double k, const VecD& beta_t, const VecD& beta_ttau,
                           const Matrix& x_samples_t, const Matrix& x_samples_ttau) {
    if (beta_t.size() != beta_ttau.size() || x_samples_t.cols != beta_t.size() ||
        x_samples_ttau.cols != beta_t.size() || x_samples_t.rows != x_samples_ttau.rows)
        throw ValidationError("theorem1_bound: shape mismatch");
    check_bounded(k, beta_t, "beta^t");
    check_bounded(k, beta_ttau, "beta^{t+tau}");
    check_bounded(k, x_samples_t, "x^t");
    check_bounded(k, x_samples_ttau, "x^{t+tau}");

    const double d = static_cast<double>(beta_t.size());
    const double beta_diff = norm2(sub(beta_ttau, beta_t));
    const std::size_t n = x_samples_t.rows;
    VecD slack_samples(n), dh_samples(n), xdiff_samples(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto x0 = x_samples_t.row(r);
        const auto x1 = x_samples_ttau.row(r);
        const double dh = std::fabs(dot(beta_ttau, x1) - dot(beta_t, x0));
        const double xdiff = norm2(sub(x1, x0));
        dh_samples[r] = dh;
        xdiff_samples[r] = xdiff;
        slack_samples[r] = k * std::sqrt(d) * (beta_diff + xdiff) - dh;
    }
    BoundReport rep;
    rep.empirical = mean(dh_samples);
    rep.bound = k * std::sqrt(d) * (beta_diff + mean(xdiff_samples));
    rep.slack = rep.bound - rep.empirical;
    rep.ci = 1.96 * standard_error(slack_samples);
    rep.params = {{"k", k},
                  {"d", d},
                  {"beta_diff", beta_diff},
                  {"stated_bound", k * std::sqrt(d) * beta_diff + mean(xdiff_samples)}};
    return rep;
}

BoundReport corollary3_bound(double k, const VecD& beta_t, const VecD& beta_ttau,
                             const std::vector<TrendSpec>& trends, double t, double tau,
                             const Matrix& stationary_base) {
    const std::size_t d = beta_t.size();
    if (trends.size() != d || beta_ttau.size() != d || stationary_base.cols != d)
        throw ValidationError("corollary3_bound: shape mismatch");
    check_bounded(k, beta_t, "beta^t");
    check_bounded(k, beta_ttau, "beta^{t+tau}");

    VecD m_t(d), m_tt(d);
    for (std::size_t i = 0; i < d; ++i) {
        m_t[i] = evaluate_trend(trends[i], t);
        m_tt[i] = evaluate_trend(trends[i], t + tau);
    }
    const double m_star_t = *std::max_element(m_t.begin(), m_t.end());
    const double m_star_tt = *std::max_element(m_tt.begin(), m_tt.end());

    const std::size_t n = stationary_base.rows;
    VecD dh_samples(n), slack_samples(n);
    const double beta_diff = norm2(sub(beta_ttau, beta_t));
    const double bound =
        k * (std::sqrt(static_cast<double>(d)) * beta_diff +
             static_cast<double>(d) * (m_star_tt - m_star_t));
    for (std::size_t r = 0; r < n; ++r) {
        VecD x0(d), x1(d);
        for (std::size_t i = 0; i < d; ++i) {
            x0[i] = stationary_base(r, i) + m_t[i];
            x1[i] = stationary_base(r, i) + m_tt[i];
        }
        check_bounded(k, x0, "x^t");
        check_bounded(k, x1, "x^{t+tau}");
        dh_samples[r] = std::fabs(dot(beta_ttau, x1) - dot(beta_t, x0));
        slack_samples[r] = bound - dh_samples[r];
    }
    BoundReport rep;
    rep.empirical = mean(dh_samples);
    rep.bound = bound;
    rep.slack = rep.bound - rep.empirical;
    rep.ci = 1.96 * standard_error(slack_samples);
    rep.params = {{"k", k},
                  {"d", static_cast<double>(d)},
                  {"t", t},
                  {"tau", tau},
                  {"m_star_t", m_star_t},
                  {"m_star_ttau", m_star_tt}};
    return rep;
}

BoundReport appendixG_cost_bound(double k, const VecD& w_t, const VecD& w_ttau,
                                 const Matrix& xhat_t, const Matrix& x_t, const Matrix& xhat_ttau,
                                 const Matrix& x_ttau) {
    const std::size_t d = w_t.size();
    if (w_ttau.size() != d || xhat_t.cols != d || x_t.cols != d || xhat_ttau.cols != d ||
        x_ttau.cols != d || xhat_t.rows != x_t.rows || xhat_ttau.rows != x_ttau.rows ||
        xhat_t.rows != xhat_ttau.rows)
        throw ValidationError("appendixG_cost_bound: shape mismatch");
    check_bounded(k, w_t, "w^t");
    check_bounded(k, w_ttau, "w^{t+tau}");
    check_bounded(k, xhat_t, "xhat^t");
    check_bounded(k, x_t, "x^t");
    check_bounded(k, xhat_ttau, "xhat^{t+tau}");
    check_bounded(k, x_ttau, "x^{t+tau}");

    const std::size_t n = xhat_t.rows;
    const double w_diff = norm2(sub(w_ttau, w_t));
    VecD dc_samples(n), disp_diff_samples(n), slack_samples(n);
    for (std::size_t r = 0; r < n; ++r) {
        VecD disp0(d), disp1(d);
        for (std::size_t i = 0; i < d; ++i) {
            disp0[i] = std::fabs(xhat_t(r, i) - x_t(r, i));
            disp1[i] = std::fabs(xhat_ttau(r, i) - x_ttau(r, i));
        }
        const double c0 = dot(disp0, w_t);
        const double c1 = dot(disp1, w_ttau);
        dc_samples[r] = std::fabs(c1 - c0);
        disp_diff_samples[r] = norm2(sub(disp1, disp0));
        slack_samples[r] =
            k * std::sqrt(static_cast<double>(d)) * (w_diff + disp_diff_samples[r]) - dc_samples[r];
    }
    BoundReport rep;
    rep.empirical = mean(dc_samples);
    rep.bound = k * std::sqrt(static_cast<double>(d)) * (w_diff + mean(disp_diff_samples));
    rep.slack = rep.bound - rep.empirical;
    rep.ci = 1.96 * standard_error(slack_samples);
    rep.params = {{"k", k}, {"d", static_cast<double>(d)}, {"w_diff", w_diff}};
    return rep;
}

double example1_mean_state(double alpha, double c, double mu_m, double mu_x, double x_prev, long t,
                           long tau) {
    double acc = std::pow(alpha, static_cast<double>(tau + 1)) * x_prev;
    for (long i = 0; i <= tau; ++i) {
        acc += std::pow(alpha, static_cast<double>(tau - i)) *
               (-c * static_cast<double>(t + i) + mu_m + mu_x);
    }
    return acc;
}

double example1_oracle(double alpha, double beta, double c, double mu_m, double mu_x,
                       double x_prev, long t, long tau) {
    if (alpha <= 0.0 || alpha >= 1.0) throw ValidationError("alpha must lie in (0, 1)");
    if (beta <= 0.0) throw ValidationError("beta must be > 0 for the sigmoid threshold to flip");
    return -example1_mean_state(alpha, c, mu_m, mu_x, x_prev, t, tau);
}

}  // namespace tcr
