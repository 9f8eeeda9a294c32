#include <cmath>

#include "doctest.h"
#include "tcr/analysis.hpp"
#include "tcr/benchmarks.hpp"
#include "tcr/recourse.hpp"
#include "test_util.hpp"

using namespace tcr;

namespace {

// E[sigmoid(beta (X + theta))] for X ~ N(mu, sd^2) by Simpson quadrature;
// the independent oracle for interventional expected responses.
double quadrature_er(double beta, double mu, double sd, double theta) {
    if (sd == 0.0) return sigmoid(beta * (mu + theta));
    const int n = 4000;
    const double lo = mu - 10.0 * sd, hi = mu + 10.0 * sd;
    const double h = (hi - lo) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + h * i;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double pdf = std::exp(-0.5 * (x - mu) * (x - mu) / (sd * sd)) /
                           (sd * std::sqrt(2.0 * M_PI));
        acc += w * pdf * sigmoid(beta * (x + theta));
    }
    return acc * h / 3.0;
}

// Forecast variance of the example-1 process after tau + 1 fresh steps.
double example1_variance(double alpha, double sd_u, long tau) {
    double var = 0.0;
    for (long i = 0; i <= tau; ++i)
        var += std::pow(alpha, 2.0 * static_cast<double>(tau - i)) * sd_u * sd_u;
    return var;
}

RecourseConfig base_config(Method m) {
    RecourseConfig cfg;
    cfg.method = m;
    cfg.lambda = 0.1;
    cfg.eta = 0.25;
    cfg.gamma = 0.98;
    cfg.epochs = 30;
    cfg.inner_iters = 50;
    cfg.n_uncertainty = 8;
    cfg.er_samples = 200;
    return cfg;
}

}  // namespace

TEST_CASE("plain expected response is exactly predict(x + theta)") {
    const BoundedLinearClassifier h({0.7, -0.3}, 1.0);
    Matrix hist(1, 2);
    hist(0, 0) = 0.4;
    hist(0, 1) = -1.1;
    Intervention iv;
    iv.targets = {0, 1};
    iv.theta = {0.5, 0.2};
    iv.apply_at = 0;
    ScmSpec dummy;
    dummy.max_lag = 0;
    dummy.variables = {{"a", true, false, false}, {"b", true, false, false}};
    dummy.equations.resize(2);
    dummy.equations[0].noise = NoiseSpec::gaussian(0, 1);
    dummy.equations[1].noise = NoiseSpec::gaussian(0, 1);
    const double er = expected_response(dummy, hist, 0, iv, ErMode::Plain, 1, 0, h);
    CHECK(er == doctest::Approx(h.predict(VecD{0.9, -0.9})).epsilon(1e-12));
}

TEST_CASE("zero theta on a deterministic process gives the rollout response") {
    auto scm = benchmarks::build({benchmarks::Dataset::LinearAnm, benchmarks::TrendKind::Linear,
                                  0.6});
    scm = benchmarks::override_noise_with_gaussian(scm, 0.0);
    const BoundedLinearClassifier h({0.4, 0.4, 0.4}, 1.0);
    Matrix hist(2, 3);
    hist.data = {0.2, -0.1, 0.5, 0.3, 0.0, -0.2};
    Intervention iv;
    iv.targets = {0};
    iv.theta = {0.0};
    iv.apply_at = 7;
    const double er = expected_response(scm, hist, 1, iv, ErMode::Interventional, 5, 3, h);
    const auto rollout = forecast_uncertainty_set(scm, hist, 1, 6, 1, 99);
    CHECK(er == doctest::Approx(h.predict(rollout[0])).epsilon(1e-12));
}

TEST_CASE("interventional expected response matches the quadrature oracle") {
    const double alpha = 0.55, c = 0.4, sd = 0.5;
    const auto scm = benchmarks::build_ar1_process(alpha, c, 0.0, 0.0, sd / std::sqrt(2.0),
                                                   sd / std::sqrt(2.0));
    const BoundedLinearClassifier h({1.0}, 1.0);
    Matrix hist(1, 1);
    hist(0, 0) = 0.8;
    const long t = 4, tau = 3;
    Intervention iv;
    iv.targets = {0};
    iv.theta = {2.5};
    iv.apply_at = t + tau;
    const std::size_t n = 40000;
    const double er = expected_response(scm, hist, t - 1, iv, ErMode::Interventional, n, 17, h);
    const double mu = testutil::example1_mean_by_recursion(alpha, c, 0.0, 0.0, 0.8, t, tau);
    const double expected = quadrature_er(1.0, mu, std::sqrt(example1_variance(alpha, sd, tau)),
                                          2.5);
    // 3 SE of a bounded-response mean.
    CHECK(std::fabs(er - expected) < 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("solver matches the example-1 closed form within five percent") {
    RandomStream rng(424242);
    for (int trial = 0; trial < 8; ++trial) {
        const double alpha = 0.15 + 0.7 * rng.uniform();
        const double c = 0.4 + 1.6 * rng.uniform();
        const double mu_m = -0.3 + 0.6 * rng.uniform();
        const double mu_x = -0.3 + 0.6 * rng.uniform();
        const double sd_m = 0.2 + 0.3 * rng.uniform();
        const double sd_x = 0.2 + 0.3 * rng.uniform();
        const double x_prev = -0.5 + rng.uniform();
        const long t = 6 + static_cast<long>(rng.index(15));
        const long tau = static_cast<long>(rng.index(11));

        const double oracle = example1_oracle(alpha, 1.0, c, mu_m, mu_x, x_prev, t, tau);
        const auto scm = benchmarks::build_ar1_process(alpha, c, mu_m, mu_x, sd_m, sd_x);
        const BoundedLinearClassifier h({1.0}, 1.0);
        Matrix hist(1, 1);
        hist(0, 0) = x_prev;

        RecourseConfig cfg = base_config(Method::Tsar);
        cfg.tau = tau + 1;
        cfg.lambda = 0.05;
        cfg.eta = 0.08;
        cfg.epochs = 30;
        cfg.inner_iters = 400;
        cfg.n_uncertainty = 2;
        cfg.er_samples = 2000;
        const auto out = solve(scm, hist, t - 1, cfg, h, rng.next_u64());
        REQUIRE(out.converged);
        INFO("oracle " << oracle << " solved " << out.theta[0]);
        CHECK(std::fabs(out.theta[0] - oracle) / std::fabs(oracle) < 0.05);
    }
}

TEST_CASE("epsilon zero equals a single-member solve on a deterministic process") {
    auto scm = benchmarks::build({benchmarks::Dataset::LinearAnm, benchmarks::TrendKind::None,
                                  0.0});
    scm = benchmarks::override_noise_with_gaussian(scm, 0.0);
    const BoundedLinearClassifier h({0.5, 0.5, 0.5}, 1.0);
    Matrix hist(2, 3);
    hist.data = {-0.5, -0.4, -0.6, -0.5, -0.4, -0.6};

    RecourseConfig robust = base_config(Method::Sar);
    robust.epsilon = 0.0;
    robust.n_uncertainty = 20;
    robust.er_samples = 1;  // deterministic process
    RecourseConfig single = robust;
    single.n_uncertainty = 1;

    const auto a = solve(scm, hist, 1, robust, h, 5);
    const auto b = solve(scm, hist, 1, single, h, 5);
    CHECK(a.converged);
    CHECK(a.theta == b.theta);
}

TEST_CASE("adversarial trend construction") {
    SUBCASE("zero theta gives a zero trend") {
        const auto trends = adversarial_trend_for({0.0, 0.0}, 3.0);
        for (const auto& tr : trends)
            for (double t : {0.0, 3.0, 9.0}) CHECK(evaluate_trend(tr, t) == 0.0);
    }
    SUBCASE("step location matches the definition") {
        const auto trends = adversarial_trend_for({1.5}, 4.0);
        CHECK(evaluate_trend(trends[0], 3.999) == 0.0);
        CHECK(evaluate_trend(trends[0], 4.0) == doctest::Approx(-1.5));
        CHECK(evaluate_trend(trends[0], 50.0) == doctest::Approx(-1.5));
    }
    SUBCASE("the constructed trend invalidates robust recourse") {
        const auto scm = benchmarks::build_ar1_process(0.5, 0.0, 0.0, 0.0, 0.35, 0.35);
        const BoundedLinearClassifier h({2.0}, 2.0);
        const long t_issue = 10, tau = 4;
        const auto trajs = sample_trajectory(scm, t_issue, 30, 2025);
        RecourseConfig cfg = base_config(Method::Sar);
        cfg.epsilon = 1.0;
        std::size_t solved = 0, still_valid = 0;
        for (const auto& traj : trajs) {
            if (h.predict(traj.states.row(t_issue)) >= 0.5) continue;
            const Matrix hist = history_window(traj, t_issue, scm.max_lag);
            const auto out = solve(scm, hist, t_issue, cfg, h, traj.seed);
            if (!out.converged) continue;
            ++solved;
            const auto hostile =
                apply_adversarial_trend(scm, out.theta, static_cast<double>(t_issue + tau));
            Intervention iv;
            iv.targets = out.intervention_set;
            for (std::size_t i : out.intervention_set) iv.theta.push_back(out.theta[i]);
            iv.apply_at = t_issue + tau;
            const double er = expected_response(hostile, hist, t_issue, iv,
                                                ErMode::Interventional, 600, 7, h);
            if (er >= 0.5) ++still_valid;
        }
        REQUIRE(solved >= 5);
        INFO("solved " << solved << " still valid " << still_valid);
        CHECK(static_cast<double>(still_valid) / static_cast<double>(solved) < 0.5);
    }
}

TEST_CASE("fixed seed gives a byte-identical outcome") {
    const auto scm = benchmarks::build({benchmarks::Dataset::LinearAnm,
                                        benchmarks::TrendKind::Linear, 0.5});
    const BoundedLinearClassifier h({0.5, 0.5, 0.5}, 1.0);
    const auto trajs = sample_trajectory(scm, 3, 1, 6);
    const Matrix hist = history_window(trajs[0], 3, scm.max_lag);
    RecourseConfig cfg = base_config(Method::Tsar);
    cfg.tau = 5;
    cfg.er_samples = 50;
    const auto a = solve(scm, hist, 3, cfg, h, 909);
    const auto b = solve(scm, hist, 3, cfg, h, 909);
    CHECK(a.theta == b.theta);
    CHECK(a.converged == b.converged);
    CHECK(a.cost == b.cost);
    CHECK(a.expected_response == b.expected_response);
}

TEST_CASE("hopeless problems return an unconverged outcome with the best theta") {
    const auto scm = benchmarks::build_ar1_process(0.5, 0.0, 0.0, 0.0, 0.3, 0.3);
    const BoundedLinearClassifier h({1.0}, 1.0);
    Matrix hist(2, 1);
    hist(0, 0) = -40.0;
    hist(1, 0) = -40.0;
    RecourseConfig cfg = base_config(Method::Sar);
    cfg.epochs = 2;
    cfg.inner_iters = 2;  // far too few steps to climb out
    cfg.er_samples = 30;
    const auto out = solve(scm, hist, 1, cfg, h, 3);
    CHECK(!out.converged);
    CHECK(out.theta[0] > 0.0);
    CHECK(out.expected_response < 0.5);
}

TEST_CASE("subset enumeration returns the documented best fixed-set outcome") {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"u", true, false, false}, {"v", true, false, false}};
    for (int i = 0; i < 2; ++i) {
        StructuralEquation eq;
        eq.parents = {{static_cast<std::size_t>(i), 1}};
        eq.affine = {{0, 0.5}};
        eq.noise = NoiseSpec::gaussian(0.0, 0.2);
        scm.equations.push_back(eq);
    }
    scm.validate();
    const BoundedLinearClassifier h({0.2, 1.0}, 1.0);
    Matrix hist(2, 2);
    hist.data = {-1.0, -1.0, -1.0, -1.0};

    RecourseConfig cfg = base_config(Method::Sar);
    cfg.epsilon = 0.2;
    cfg.policy = SetPolicy::EnumerateSubsets;
    cfg.max_set_size = 2;
    const auto best = solve(scm, hist, 1, cfg, h, 44);

    RecourseConfig fixed = cfg;
    fixed.policy = SetPolicy::Fixed;
    std::vector<RecourseOutcome> all;
    for (const auto& set : std::vector<std::vector<std::size_t>>{{0}, {1}, {0, 1}}) {
        fixed.intervention_set = set;
        all.push_back(solve(scm, hist, 1, fixed, h, 44));
    }
    auto better = [](const RecourseOutcome& a, const RecourseOutcome& b) {
        if (a.converged != b.converged) return a.converged;
        if (a.converged) {
            if (std::fabs(a.cost - b.cost) > 1e-12) return a.cost < b.cost;
            if (a.intervention_set.size() != b.intervention_set.size())
                return a.intervention_set.size() < b.intervention_set.size();
            return a.intervention_set < b.intervention_set;
        }
        return a.expected_response > b.expected_response;
    };
    RecourseOutcome expected = all[0];
    for (const auto& o : all)
        if (better(o, expected)) expected = o;
    CHECK(best.intervention_set == expected.intervention_set);
    CHECK(best.theta == expected.theta);
    CHECK(best.converged);
}

TEST_CASE("monotone coordinates are clamped to nonnegative offsets") {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"up", true, false, false}, {"down", true, true, false}};
    for (int i = 0; i < 2; ++i) {
        StructuralEquation eq;
        eq.parents = {{static_cast<std::size_t>(i), 1}};
        eq.affine = {{0, 0.5}};
        eq.noise = NoiseSpec::gaussian(0.0, 0.1);
        scm.equations.push_back(eq);
    }
    scm.validate();
    // The classifier rewards lowering "down", which monotonicity forbids.
    const BoundedLinearClassifier h({1.0, -1.0}, 1.0);
    Matrix hist(2, 2);
    hist.data = {-0.8, 0.0, -0.8, 0.0};
    RecourseConfig cfg = base_config(Method::Sar);
    cfg.epsilon = 0.1;
    const auto out = solve(scm, hist, 1, cfg, h, 11);
    CHECK(out.converged);
    CHECK(out.theta[1] == 0.0);
    CHECK(out.theta[0] > 0.0);
}

TEST_CASE("converged outcomes stay sound on fresh uncertainty samples") {
    const auto scm = benchmarks::build({benchmarks::Dataset::LinearAnm,
                                        benchmarks::TrendKind::Linear, 0.5});
    const BoundedLinearClassifier h({0.4, 0.4, 0.4}, 1.0);
    const long t_issue = 2, tau = 5;
    const auto trajs = sample_trajectory(scm, t_issue, 20, 31);
    RecourseConfig cfg = base_config(Method::Tsar);
    cfg.tau = tau;
    cfg.er_samples = 100;
    std::size_t checked = 0;
    for (const auto& traj : trajs) {
        if (h.predict(traj.states.row(t_issue)) >= 0.5) continue;
        const Matrix hist = history_window(traj, t_issue, scm.max_lag);
        const auto out = solve(scm, hist, t_issue, cfg, h, traj.seed);
        if (!out.converged) continue;
        Intervention iv;
        iv.targets = out.intervention_set;
        for (std::size_t i : out.intervention_set) iv.theta.push_back(out.theta[i]);
        iv.apply_at = t_issue + tau;
        const std::size_t n = 500;
        const double er = expected_response(scm, hist, t_issue, iv, ErMode::Interventional, n,
                                            traj.seed ^ 0xF00DULL, h);
        const double se = 0.5 / std::sqrt(static_cast<double>(n));
        CHECK(er >= 0.5 - 2.0 * se);
        ++checked;
    }
    CHECK(checked >= 5);
}
