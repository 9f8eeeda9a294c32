#include "tcr/estimator.hpp"

#include <cmath>
#include <sstream>

namespace tcr {

namespace {

// Mean prediction of a fitted equation given realized rows around time t.
double fitted_mean(const StructuralEquation& eq, const Matrix& states, std::size_t t) {
    double mu = eq.intercept + eq.time_coeff * static_cast<double>(t);
    for (const auto& a : eq.affine) {
        const auto& p = eq.parents[a.parent];
        mu += a.coeff * states(t - static_cast<std::size_t>(p.lag), p.var);
    }
    return mu;
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

ScmSpec fit_scm(const std::vector<Trajectory>& data, const ScmSpec& graph,
                const EstimatorConfig& cfg) {
    if (data.empty()) throw FitError("no trajectories supplied");
    graph.validate();
    const std::size_t d = graph.dim();
    const long horizon = static_cast<long>(data.front().states.rows) - 1;
    long cutoff = cfg.fit_cutoff >= 0 ? cfg.fit_cutoff : horizon / 2;
    if (cutoff > horizon) cutoff = horizon;
    if (cutoff < 1) throw FitError("trajectories must cover at least one transition");

    ScmSpec est;
    est.max_lag = graph.max_lag;
    est.variables = graph.variables;
    est.equations.resize(d);

    EstimatorProvenance prov;
    prov.fit_cutoff = cutoff;
    prov.seed = cfg.seed;
    prov.residual_variance.assign(d, 0.0);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const auto& traj : data)
        hash = fnv1a(traj.states.data.data(), traj.states.data.size() * sizeof(double), hash);
    std::ostringstream hex;
    hex << std::hex << hash;
    prov.data_hash = hex.str();

    for (std::size_t i = 0; i < d; ++i) {
        const auto& true_eq = graph.equations[i];
        StructuralEquation eq;
        if (true_eq.freeze_after_t0) {
            // Copied forward; the estimator never refits identity dynamics.
            eq.freeze_after_t0 = true;
            eq.noise = NoiseSpec::point_mass(0.0);
            est.equations[i] = std::move(eq);
            continue;
        }
        // Features: own lag-1 value, the true graph's declared parents, t.
        std::vector<Parent> parents;
        parents.push_back({i, 1});
        for (const auto& p : true_eq.parents) {
            if (p.var == i && p.lag == 1) continue;  // already present
            parents.push_back(p);
        }
        const std::size_t n_features = parents.size() + 2;  // + t + intercept
        std::size_t n_rows = 0;
        for (const auto& traj : data)
            n_rows += static_cast<std::size_t>(std::min<long>(cutoff, static_cast<long>(traj.states.rows) - 1));
        Matrix design(n_rows, n_features);
        VecD target(n_rows);
        std::size_t r = 0;
        for (const auto& traj : data) {
            const long t_max = std::min<long>(cutoff, static_cast<long>(traj.states.rows) - 1);
            for (long t = 1; t <= t_max; ++t) {
                for (std::size_t j = 0; j < parents.size(); ++j) {
                    const auto& p = parents[j];
                    design(r, j) = traj.states(static_cast<std::size_t>(t - p.lag), p.var);
                }
                design(r, parents.size()) = static_cast<double>(t);
                design(r, parents.size() + 1) = 1.0;
                target[r] = traj.states(static_cast<std::size_t>(t), i);
                ++r;
            }
        }
        // Constant regressors carry no signal and would alias the intercept;
        // they are dropped and their coefficients pinned to zero.
        std::vector<std::size_t> kept;
        for (std::size_t j = 0; j + 1 < n_features; ++j) {  // intercept always kept
            double lo = design(0, j), hi = design(0, j);
            for (std::size_t row = 1; row < n_rows; ++row) {
                lo = std::min(lo, design(row, j));
                hi = std::max(hi, design(row, j));
            }
            if (hi - lo > 1e-12) kept.push_back(j);
        }
        Matrix reduced(n_rows, kept.size() + 1);
        for (std::size_t row = 0; row < n_rows; ++row) {
            for (std::size_t j = 0; j < kept.size(); ++j) reduced(row, j) = design(row, kept[j]);
            reduced(row, kept.size()) = 1.0;
        }
        VecD coeffs(n_features, 0.0);
        try {
            const VecD fitted = least_squares(reduced, target);
            for (std::size_t j = 0; j < kept.size(); ++j) coeffs[kept[j]] = fitted[j];
            coeffs[n_features - 1] = fitted[kept.size()];
        } catch (const std::runtime_error&) {
            throw FitError("fit degenerate: rank-deficient design for variable '" +
                           graph.variables[i].name + "'");
        }
        eq.parents = parents;
        eq.affine.resize(parents.size());
        for (std::size_t j = 0; j < parents.size(); ++j) eq.affine[j] = {j, coeffs[j]};
        eq.time_coeff = coeffs[parents.size()];
        eq.intercept = coeffs[parents.size() + 1];
        eq.noise = NoiseSpec::gaussian(0.0, 1.0);  // fixed unit variance

        double ss = 0.0;
        for (std::size_t row = 0; row < n_rows; ++row) {
            const double resid = dot(design.row(row), coeffs) - target[row];
            ss += resid * resid;
        }
        prov.residual_variance[i] = n_rows ? ss / static_cast<double>(n_rows) : 0.0;
        est.equations[i] = std::move(eq);
    }
    est.provenance = prov;
    est.validate();
    return est;
}

VecD one_step_mse(const ScmSpec& estimator, const std::vector<Trajectory>& data, long t_limit) {
    const std::size_t d = estimator.dim();
    VecD sum(d, 0.0);
    std::vector<std::size_t> count(d, 0);
    for (const auto& traj : data) {
        const long t_max = std::min<long>(t_limit, static_cast<long>(traj.states.rows) - 1);
        for (long t = 1; t <= t_max; ++t) {
            for (std::size_t i = 0; i < d; ++i) {
                const auto& eq = estimator.equations[i];
                if (eq.freeze_after_t0) continue;
                const double mu = fitted_mean(eq, traj.states, static_cast<std::size_t>(t)) +
                                  eq.trend_contribution(static_cast<double>(t));
                const double err = traj.states(static_cast<std::size_t>(t), i) - mu;
                sum[i] += err * err;
                ++count[i];
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        if (count[i]) sum[i] /= static_cast<double>(count[i]);
    return sum;
}

ForecastQuality forecast_quality(const ScmSpec& estimator, const ScmSpec& truth, long horizon,
                                 std::size_t n, std::uint64_t seed) {
    if (estimator.dim() != truth.dim()) throw ValidationError("estimator/truth dimension mismatch");
    for (std::size_t i = 0; i < truth.dim(); ++i) {
        if (estimator.variables[i].name != truth.variables[i].name)
            throw ValidationError("estimator/truth variable id mismatch at index " +
                                  std::to_string(i));
    }
    if (horizon < 1) throw ValidationError("horizon must be >= 1");

    // Conditioning states drawn from the truth's (approximately) stationary
    // regime; a noise-free estimator handles the deterministic side.
    ScmSpec mean_est = estimator;
    for (auto& eq : mean_est.equations) {
        if (eq.placement == NoisePlacement::AfterTransform &&
            eq.output == OutputTransform::Identity) {
            eq.noise = NoiseSpec::point_mass(eq.noise.expectation());
        } else {
            eq.noise = NoiseSpec::point_mass(eq.noise.expectation());
            // Routed noise collapses to its mean inside the equation as well.
        }
    }

    const long t_cond = 20;
    auto base = sample_trajectory(truth, t_cond, n, mix_seed(seed, 1), {.burn_in = 20});

    ForecastQuality q;
    q.mse.assign(static_cast<std::size_t>(horizon), VecD(truth.dim(), 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        const Matrix& hist = base[k].states;
        auto truth_path = forecast_windows(truth, hist, t_cond, horizon, 1, mix_seed(seed, 2, k));
        auto est_path = forecast_windows(mean_est, hist, t_cond, horizon, 1, mix_seed(seed, 3, k));
        const std::size_t offset = truth_path[0].rows - static_cast<std::size_t>(horizon);
        for (long h = 1; h <= horizon; ++h) {
            const std::size_t row = offset + static_cast<std::size_t>(h) - 1;
            for (std::size_t c = 0; c < truth.dim(); ++c) {
                const double diff = est_path[0](row, c) - truth_path[0](row, c);
                q.mse[static_cast<std::size_t>(h - 1)][c] += diff * diff / static_cast<double>(n);
            }
        }
    }
    return q;
}

}  // namespace tcr
