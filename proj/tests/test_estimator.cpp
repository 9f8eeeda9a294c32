#include <cmath>

#include "doctest.h"
#include "tcr/benchmarks.hpp"
#include "tcr/estimator.hpp"
#include "test_util.hpp"

using namespace tcr;

namespace {

// Two-variable linear-Gaussian SCM with known coefficients.
ScmSpec two_var_linear(double noise_sd) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"a", true, false, false}, {"b", true, false, false}};
    StructuralEquation ea;
    ea.parents = {{0, 1}};
    ea.affine = {{0, 0.6}};
    ea.intercept = 0.2;
    ea.noise = NoiseSpec::gaussian(0.0, noise_sd);
    StructuralEquation eb;
    eb.parents = {{1, 1}, {0, 0}};
    eb.affine = {{0, 0.5}, {1, -0.8}};
    eb.intercept = -0.1;
    eb.noise = NoiseSpec::gaussian(0.0, noise_sd);
    scm.equations = {ea, eb};
    scm.validate();
    return scm;
}

}  // namespace

TEST_CASE("recovers linear coefficients within 3 standard errors") {
    const auto truth = two_var_linear(1.0);
    const auto data = sample_trajectory(truth, 40, 400, 42);
    const auto est = fit_scm(data, truth, {.fit_cutoff = 40, .seed = 1});
    CHECK_NOTHROW(est.validate());

    // Variable b: features are (b lag, a lag-0, t, intercept).
    const auto& eq = est.equations[1];
    REQUIRE(eq.parents.size() == 2);
    // Rough SE scale for n ~ 16000 standardized-ish rows.
    CHECK(std::fabs(eq.affine[0].coeff - 0.5) < 0.03);
    CHECK(std::fabs(eq.affine[1].coeff - (-0.8)) < 0.03);
    CHECK(std::fabs(eq.intercept - (-0.1)) < 0.05);
    CHECK(std::fabs(eq.time_coeff) < 0.01);
    CHECK(eq.noise.kind == NoiseKind::Gaussian);
    CHECK(eq.noise.stddev == 1.0);  // fixed unit variance by construction

    // Residual-variance diagnostic near the true noise variance.
    REQUIRE(est.provenance.has_value());
    CHECK(est.provenance->residual_variance[1] == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("held-out one-step error stays close to the irreducible noise") {
    const auto truth = two_var_linear(0.7);
    const auto train = sample_trajectory(truth, 30, 300, 7);
    const auto est = fit_scm(train, truth, {.fit_cutoff = 30, .seed = 2});
    const auto held = sample_trajectory(truth, 30, 300, 8);
    const auto mse = one_step_mse(est, held, 30);
    for (std::size_t i = 0; i < 2; ++i) {
        INFO("feature " << i << " mse " << mse[i]);
        CHECK(mse[i] <= 1.2 * 0.7 * 0.7);
        CHECK(mse[i] >= 0.8 * 0.7 * 0.7);
    }
}

TEST_CASE("constant feature becomes an intercept-only fit") {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"c", true, false, false}};
    StructuralEquation eq;
    eq.parents = {{0, 1}};
    eq.affine = {{0, 0.0}};
    eq.intercept = 3.25;
    eq.noise = NoiseSpec::point_mass(0.0);
    scm.equations = {eq};
    scm.validate();
    const auto data = sample_trajectory(scm, 20, 50, 3);
    const auto est = fit_scm(data, scm, {.fit_cutoff = 20, .seed = 3});
    const auto& fitted = est.equations[0];
    CHECK(fitted.affine[0].coeff == 0.0);  // constant lag column dropped
    CHECK(std::fabs(fitted.time_coeff) < 1e-12);
    CHECK(fitted.intercept == doctest::Approx(3.25).epsilon(1e-9));
}

TEST_CASE("duplicate regressors raise a fit-degenerate error naming the variable") {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"root", true, false, false}, {"dup", true, false, false}};
    StructuralEquation root;
    root.noise = NoiseSpec::gaussian(0.0, 1.0);
    StructuralEquation dup;
    dup.parents = {{0, 0}, {0, 0}};  // same column twice
    dup.affine = {{0, 0.5}, {1, 0.25}};
    dup.noise = NoiseSpec::gaussian(0.0, 1.0);
    scm.equations = {root, dup};
    scm.validate();
    const auto data = sample_trajectory(scm, 10, 50, 4);
    try {
        fit_scm(data, scm, {.fit_cutoff = 10, .seed = 4});
        FAIL("expected FitError");
    } catch (const FitError& e) {
        CHECK(std::string(e.what()).find("dup") != std::string::npos);
    }
}

TEST_CASE("frozen variables are copied, fitted spec is simulatable") {
    const auto truth = benchmarks::build({benchmarks::Dataset::Compas,
                                          benchmarks::TrendKind::Linear, 0.5});
    const auto data = sample_trajectory(truth, 40, 200, 11);
    const auto est = fit_scm(data, truth, {.fit_cutoff = 20, .seed = 5});
    CHECK(est.equations[est.var_index("sex")].freeze_after_t0);
    CHECK(est.equations[est.var_index("age")].freeze_after_t0);
    CHECK(!est.equations[est.var_index("priors")].freeze_after_t0);
    // forecast_uncertainty_set is well-defined on the fitted spec.
    const Matrix window = history_window(data[0], 5, est.max_lag);
    const auto fc = forecast_uncertainty_set(est, window, 5, 10, 8, 6);
    CHECK(fc.size() == 8);
    for (const auto& x : fc)
        for (double v : x) CHECK(std::isfinite(v));
}

TEST_CASE("time regressor extrapolates a pure linear trend") {
    // x^t = 0.5 x^{t-1} - m(t) + u with a linear trend; the fitted t-term
    // must track the ramp well past the cutoff.
    TrendSpec trend;
    trend.alpha = 1.0;
    trend.beta_linear = 1.0;
    trend.sign = -1;
    const auto truth = testutil::ar1(0.5, 0.0, NoiseSpec::gaussian(0.0, 0.5), trend);
    const long cutoff = 50, horizon = 100;
    const auto data = sample_trajectory(truth, cutoff, 400, 13);
    const auto est = fit_scm(data, truth, {.fit_cutoff = cutoff, .seed = 7});

    // Forecast from a long-run state at the cutoff out to 2x cutoff.
    const auto base = sample_trajectory(truth, cutoff, 64, 14);
    double err_sum = 0.0, truth_mag = 0.0;
    for (const auto& traj : base) {
        const Matrix window = history_window(traj, cutoff, truth.max_lag);
        const auto est_fc = forecast_uncertainty_set(est, window, cutoff, horizon - cutoff, 64, 15);
        const auto tru_fc = forecast_uncertainty_set(truth, window, cutoff, horizon - cutoff, 64, 16);
        double est_mean = 0.0, tru_mean = 0.0;
        for (const auto& x : est_fc) est_mean += x[0] / 64.0;
        for (const auto& x : tru_fc) tru_mean += x[0] / 64.0;
        err_sum += std::fabs(est_mean - tru_mean);
        truth_mag += std::fabs(evaluate_trend(trend, static_cast<double>(horizon)));
    }
    INFO("mean abs forecast error " << err_sum / 64.0 << " trend magnitude " << truth_mag / 64.0);
    CHECK(err_sum <= 0.10 * truth_mag);
}

TEST_CASE("forecast quality against the truth") {
    const auto truth = two_var_linear(0.5);

    SUBCASE("perfect estimator: one-step mse equals the irreducible error") {
        const auto q = forecast_quality(truth, truth, 3, 4000, 21);
        // a carries only its own noise; b also inherits a's same-step noise
        // through the lag-0 coefficient -0.8.
        CHECK(q.mse[0][0] == doctest::Approx(0.25).epsilon(0.1));
        CHECK(q.mse[0][1] == doctest::Approx(0.25 * (1.0 + 0.64)).epsilon(0.1));
    }
    SUBCASE("zero-noise truth with the exact estimator gives zero error") {
        const auto det = two_var_linear(0.0);
        const auto q = forecast_quality(det, det, 4, 16, 22);
        for (const auto& row : q.mse)
            for (double v : row) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("omitting the trend makes the error grow with horizon") {
        TrendSpec trend;
        trend.alpha = 1.0;
        trend.beta_linear = 2.0;
        trend.sign = -1;
        const auto trended = testutil::ar1(0.5, 0.0, NoiseSpec::gaussian(0.0, 0.3), trend);
        const auto blind = testutil::ar1(0.5, 0.0, NoiseSpec::gaussian(0.0, 0.3));
        const auto q = forecast_quality(blind, trended, 12, 500, 23);
        CHECK(q.mse[11][0] > q.mse[5][0]);
        CHECK(q.mse[5][0] > q.mse[1][0]);
    }
    SUBCASE("variable id mismatch is rejected") {
        auto renamed = truth;
        renamed.variables[0].name = "other";
        CHECK_THROWS_AS(forecast_quality(renamed, truth, 2, 8, 24), ValidationError);
    }
}

TEST_CASE("loan estimator one-step error sits near its theoretical floor") {
    // The mean one-step error over fitted features is bounded below by the
    // average noise variance and should not exceed it by much more than the
    // nonlinear terms (gated income, quadratic age, product) can explain.
    const auto truth = benchmarks::build({benchmarks::Dataset::Loan,
                                          benchmarks::TrendKind::LinearSeasonal, 1.0});
    const auto data = sample_trajectory(truth, 50, 400, 31);
    const auto est = fit_scm(data, truth, {.fit_cutoff = 50, .seed = 9});
    const auto mse = one_step_mse(est, data, 50);
    double avg = 0.0, floor = 0.0;
    std::size_t n_fit = 0;
    for (std::size_t i = 0; i < truth.dim(); ++i) {
        if (est.equations[i].freeze_after_t0) continue;
        const auto& noise = truth.equations[i].noise;
        double var = 0.0;
        if (noise.kind == NoiseKind::Gaussian) var = noise.stddev * noise.stddev;
        if (noise.kind == NoiseKind::Gamma) var = noise.shape * noise.scale * noise.scale;
        avg += mse[i];
        floor += var;
        ++n_fit;
    }
    avg /= static_cast<double>(n_fit);
    floor /= static_cast<double>(n_fit);
    INFO("loan mean one-step mse " << avg << ", noise floor " << floor);
    CHECK(avg >= floor);
    CHECK(avg <= 2.0 * floor);
}
