#include "tcr/recourse.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace tcr {

Method method_from_string(const std::string& name) {
    if (name == "imf") return Method::Imf;
    if (name == "car") return Method::Car;
    if (name == "sar") return Method::Sar;
    if (name == "t-sar" || name == "tsar") return Method::Tsar;
    throw ValidationError("unknown recourse method '" + name + "'");
}

std::string method_to_string(Method m) {
    switch (m) {
        case Method::Imf: return "imf";
        case Method::Car: return "car";
        case Method::Sar: return "sar";
        case Method::Tsar: return "t-sar";
    }
    return "?";
}

void RecourseConfig::validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw ValidationError("gamma must lie in (0, 1)");
    if (lambda <= 0.0 || eta <= 0.0) throw ValidationError("lambda and eta must be > 0");
    if (epsilon < 0.0) throw ValidationError("epsilon must be >= 0");
    if (method == Method::Tsar && tau <= 0) throw ValidationError("t-sar requires tau > 0");
    if (epochs == 0 || inner_iters == 0 || n_uncertainty == 0 || er_samples == 0)
        throw ValidationError("iteration and sample counts must be positive");
    if (cost_norm == CostNorm::WeightedL1 && cost_weights.empty())
        throw ValidationError("weighted-l1 cost needs weights");
}

double intervention_cost(const RecourseConfig& cfg, std::span<const double> theta) {
    switch (cfg.cost_norm) {
        case CostNorm::L1:
            return norm1(theta);
        case CostNorm::L2:
            return norm2(theta);
        case CostNorm::WeightedL1: {
            double s = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i)
                s += cfg.cost_weights[i] * std::fabs(theta[i]);
            return s;
        }
    }
    return 0.0;
}

std::size_t sparsity(std::span<const double> theta, double tol) {
    std::size_t n = 0;
    for (double v : theta)
        if (std::fabs(v) > tol) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// Uncertainty members and ER evaluation
// ---------------------------------------------------------------------------

namespace {

// One Monte-Carlo context for an uncertainty-set member: an evaluation
// window (rows ending at t_eval) plus the noise stream used when the
// intervened set is re-drawn. Everything here is independent of theta, so
// contexts are built once per solve and the loss stays a deterministic
// function of theta.
struct ErContext {
    Matrix window;
    std::uint64_t noise_seed = 0;
};

struct Member {
    long t_eval = 0;
    std::vector<ErContext> contexts;
};

Matrix tail_window(const Matrix& history, std::size_t rows_needed) {
    if (history.rows <= rows_needed) return history;
    Matrix out(rows_needed, history.cols);
    const std::size_t start = history.rows - rows_needed;
    for (std::size_t r = 0; r < rows_needed; ++r)
        for (std::size_t c = 0; c < history.cols; ++c) out(r, c) = history(start + r, c);
    return out;
}

Matrix last_rows_with_pinned(const Matrix& path, std::size_t keep, const Matrix& pinned_row,
                             std::size_t pinned_index) {
    if (path.rows < keep) throw ValidationError("history too short for the spec's lags");
    // keep rows ending just before t_eval, then the pinned state at t_eval.
    Matrix out(keep + 1, path.cols);
    const std::size_t start = path.rows - keep;
    for (std::size_t r = 0; r < keep; ++r)
        for (std::size_t c = 0; c < path.cols; ++c) out(r, c) = path(start + r, c);
    for (std::size_t c = 0; c < path.cols; ++c) out(keep, c) = pinned_row(pinned_index, c);
    return out;
}

std::vector<Member> build_members(const ScmSpec& scm, const Matrix& history, long t_hist,
                                  const RecourseConfig& cfg, std::uint64_t seed) {
    std::vector<Member> members;
    members.reserve(cfg.n_uncertainty);
    const std::size_t d = scm.dim();
    const std::size_t lag_rows = static_cast<std::size_t>(scm.max_lag);
    switch (cfg.method) {
        case Method::Imf: {
            const VecD x = history.row_vec(history.rows - 1);
            RandomStream rng(mix_seed(seed, 0x494d46ULL));
            for (std::size_t k = 0; k < cfg.n_uncertainty; ++k) {
                Member m;
                m.t_eval = t_hist;
                ErContext ctx;
                ctx.window = Matrix(1, d);
                VecD v = x;
                if (k > 0 && cfg.epsilon > 0.0) {
                    const VecD dir = rng.on_sphere(d);
                    for (std::size_t j = 0; j < d; ++j) v[j] += cfg.epsilon * dir[j];
                }
                for (std::size_t j = 0; j < d; ++j) ctx.window(0, j) = v[j];
                m.contexts.push_back(std::move(ctx));
                members.push_back(std::move(m));
            }
            break;
        }
        case Method::Car:
        case Method::Sar: {
            const Matrix window = tail_window(history, lag_rows + 1);
            RandomStream rng(mix_seed(seed, 0x424c4cULL));
            for (std::size_t k = 0; k < cfg.n_uncertainty; ++k) {
                VecD delta(d, 0.0);
                if (k > 0 && cfg.epsilon > 0.0) {
                    const VecD dir = rng.on_sphere(d);
                    for (std::size_t j = 0; j < d; ++j) delta[j] = cfg.epsilon * dir[j];
                }
                Matrix mapped_window = window;
                const VecD mapped = counterfactual_shift_all(scm, window, t_hist, delta);
                for (std::size_t j = 0; j < d; ++j)
                    mapped_window(mapped_window.rows - 1, j) = mapped[j];

                Member m;
                m.t_eval = t_hist;
                if (cfg.method == Method::Car) {
                    ErContext ctx;
                    ctx.window = std::move(mapped_window);
                    m.contexts.push_back(std::move(ctx));
                } else {
                    for (std::size_t s = 0; s < cfg.er_samples; ++s) {
                        ErContext ctx;
                        ctx.window = mapped_window;
                        ctx.noise_seed = mix_seed(seed, 0x534152ULL, k, s);
                        m.contexts.push_back(std::move(ctx));
                    }
                }
                members.push_back(std::move(m));
            }
            break;
        }
        case Method::Tsar: {
            // Forecast members give the conditioning values at t + tau; the
            // path up to t + tau - 1 is re-drawn per Monte-Carlo context.
            auto forecasts = forecast_windows(scm, history, t_hist, cfg.tau, cfg.n_uncertainty,
                                              mix_seed(seed, 0x545341ULL));
            for (std::size_t k = 0; k < forecasts.size(); ++k) {
                Member m;
                m.t_eval = t_hist + cfg.tau;
                const auto paths = roll_paths(scm, history, t_hist, cfg.tau - 1, cfg.er_samples,
                                              mix_seed(seed, 0x545342ULL, k));
                for (std::size_t s = 0; s < cfg.er_samples; ++s) {
                    ErContext ctx;
                    ctx.window = last_rows_with_pinned(paths[s], lag_rows, forecasts[k],
                                                       forecasts[k].rows - 1);
                    ctx.noise_seed = mix_seed(seed, 0x545343ULL, k, s);
                    m.contexts.push_back(std::move(ctx));
                }
                members.push_back(std::move(m));
            }
            break;
        }
    }
    return members;
}

ErMode er_mode_for(Method m) {
    switch (m) {
        case Method::Imf: return ErMode::Plain;
        case Method::Car: return ErMode::Counterfactual;
        case Method::Sar:
        case Method::Tsar: return ErMode::Interventional;
    }
    return ErMode::Plain;
}

struct ErResult {
    double value = 0.0;
    VecD grad;  // d ER / d theta_k, one entry per intervention target
};

ErResult member_er(const ScmSpec& scm, const Member& member, const Intervention& iv, ErMode mode,
                   const Predictor& h, bool want_grad) {
    const std::size_t m = iv.targets.size();
    ErResult res;
    res.grad.assign(m, 0.0);
    switch (mode) {
        case ErMode::Plain: {
            const auto& ctx = member.contexts.front();
            VecD x = ctx.window.row_vec(ctx.window.rows - 1);
            for (std::size_t k = 0; k < m; ++k) x[iv.targets[k]] += iv.theta[k];
            res.value = h.predict(x);
            if (want_grad) {
                const VecD g = h.input_gradient(x);
                for (std::size_t k = 0; k < m; ++k) res.grad[k] = g[iv.targets[k]];
            }
            return res;
        }
        case ErMode::Counterfactual: {
            const auto& ctx = member.contexts.front();
            Matrix jac;
            Intervention local = iv;
            local.apply_at = member.t_eval;
            const VecD x = abduct_and_counterfactual(scm, ctx.window, member.t_eval, local,
                                                     want_grad ? &jac : nullptr);
            res.value = h.predict(x);
            if (want_grad) {
                const VecD g = h.input_gradient(x);
                for (std::size_t k = 0; k < m; ++k)
                    for (std::size_t i = 0; i < x.size(); ++i) res.grad[k] += g[i] * jac(i, k);
            }
            return res;
        }
        case ErMode::Interventional: {
            Intervention local = iv;
            local.apply_at = member.t_eval;
            double total = 0.0;
            for (const auto& ctx : member.contexts) {
                RandomStream rng(ctx.noise_seed);
                Matrix jac;
                const VecD x = conditional_reevaluate(scm, ctx.window, member.t_eval, local, rng,
                                                      want_grad ? &jac : nullptr);
                total += h.predict(x);
                if (want_grad) {
                    const VecD g = h.input_gradient(x);
                    for (std::size_t k = 0; k < m; ++k)
                        for (std::size_t i = 0; i < x.size(); ++i) res.grad[k] += g[i] * jac(i, k);
                }
            }
            const double inv = 1.0 / static_cast<double>(member.contexts.size());
            res.value = total * inv;
            if (want_grad)
                for (auto& g : res.grad) g *= inv;
            return res;
        }
    }
    return res;
}

struct FixedSetResult {
    RecourseOutcome outcome;
};

// One descent step on ell(ER, 1) + lambda * cost. The l1 costs use the
// proximal (soft-threshold) update — a plain subgradient oscillates with
// amplitude eta * lambda around zero and never settles; l2 is smooth away
// from the origin and keeps the plain step.
void descend_step(const RecourseConfig& cfg, const std::vector<std::size_t>& targets,
                  double lambda, const VecD& smooth_grad, VecD& theta) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double u = theta[k] - cfg.eta * smooth_grad[k];
        switch (cfg.cost_norm) {
            case CostNorm::L1:
            case CostNorm::WeightedL1: {
                const double w =
                    cfg.cost_norm == CostNorm::L1 ? 1.0 : cfg.cost_weights[targets[k]];
                const double shrink = cfg.eta * lambda * w;
                theta[k] = u > shrink ? u - shrink : (u < -shrink ? u + shrink : 0.0);
                break;
            }
            case CostNorm::L2: {
                const double n = norm2(theta);
                theta[k] = u - (n > 1e-12 ? cfg.eta * lambda * theta[k] / n : 0.0);
                break;
            }
        }
    }
}

RecourseOutcome solve_fixed_set(const ScmSpec& scm, const std::vector<Member>& members,
                                long t_hist, const std::vector<std::size_t>& targets,
                                const RecourseConfig& cfg, const Predictor& h) {
    const std::size_t m = targets.size();
    Intervention iv;
    iv.targets = targets;
    iv.theta.assign(m, 0.0);
    iv.mode = InterventionMode::Soft;

    const ErMode mode = er_mode_for(cfg.method);

    auto project = [&](VecD& theta) {
        for (std::size_t k = 0; k < m; ++k) {
            if (scm.variables[targets[k]].monotone_nondecreasing)
                theta[k] = std::max(theta[k], 0.0);
        }
    };

    // Worst-case ER over the member set with common random numbers, so the
    // loss is a deterministic function of theta.
    auto worst_member = [&](const VecD& theta) {
        Intervention local = iv;
        local.theta = theta;
        double worst = std::numeric_limits<double>::infinity();
        std::size_t worst_idx = 0;
        for (std::size_t j = 0; j < members.size(); ++j) {
            const double er = member_er(scm, members[j], local, mode, h, false).value;
            if (er < worst) {
                worst = er;
                worst_idx = j;
            }
        }
        return std::pair<std::size_t, double>{worst_idx, worst};
    };

    VecD theta(m, 0.0);
    project(theta);

    RecourseOutcome best;
    best.method = cfg.method;
    best.epsilon = cfg.epsilon;
    best.tau = cfg.method == Method::Tsar ? cfg.tau : 0;
    best.issue_time = t_hist;
    best.intervention_set = targets;
    best.theta.assign(scm.dim(), 0.0);
    double best_cost = std::numeric_limits<double>::infinity();
    double best_er = -std::numeric_limits<double>::infinity();
    bool best_valid = false;

    auto consider = [&](const VecD& cand, double worst_er, std::size_t epoch) {
        const double cost = intervention_cost(cfg, cand);
        const bool valid = worst_er >= 0.5;
        bool better = false;
        if (valid && (!best_valid || cost < best_cost - 1e-12)) better = true;
        if (!valid && !best_valid && worst_er > best_er) better = true;
        if (better) {
            best_valid = valid;
            best_cost = cost;
            best_er = worst_er;
            std::fill(best.theta.begin(), best.theta.end(), 0.0);
            for (std::size_t k = 0; k < m; ++k) best.theta[targets[k]] = cand[k];
            best.expected_response = worst_er;
            best.cost = cost;
            best.epochs_used = epoch + 1;
        }
    };

    double lambda = cfg.lambda;
    double prev_loss = std::numeric_limits<double>::quiet_NaN();
    std::size_t stable_iters = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        bool stepped = false;
        for (std::size_t inner = 0; inner < cfg.inner_iters; ++inner) {
            const auto [widx, wer] = worst_member(theta);
            const double loss =
                -std::log(std::clamp(wer, 1e-290, 1.0)) + lambda * intervention_cost(cfg, theta);
            stable_iters = std::isfinite(prev_loss) &&
                                   std::fabs(loss - prev_loss) < cfg.convergence_tol
                               ? stable_iters + 1
                               : 0;
            prev_loss = loss;

            consider(theta, wer, epoch);
            if (wer >= 0.5) {
                // Worst-case ER satisfied. Converged once the loss has been
                // flat over the window, or when theta is a fixed point of
                // this epoch's loop (no step was needed).
                if (stable_iters >= cfg.convergence_window || !stepped) {
                    best.converged = true;
                    return best;
                }
                break;  // satisfied: decay lambda and re-check next epoch
            }

            Intervention local = iv;
            local.theta = theta;
            const ErResult er = member_er(scm, members[widx], local, mode, h, true);
            const double inv_er = 1.0 / std::clamp(er.value, 1e-290, 1.0);
            VecD smooth_grad(m);
            for (std::size_t k = 0; k < m; ++k) smooth_grad[k] = -inv_er * er.grad[k];
            descend_step(cfg, targets, lambda, smooth_grad, theta);
            project(theta);
            stepped = true;
        }
        lambda *= cfg.gamma;
    }
    const auto [widx_final, wer_final] = worst_member(theta);
    (void)widx_final;
    consider(theta, wer_final, cfg.epochs - 1);
    best.converged = best_valid;
    return best;
}

std::vector<std::size_t> actionable_set(const ScmSpec& scm) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scm.dim(); ++i)
        if (scm.variables[i].actionable) out.push_back(i);
    return out;
}

}  // namespace

double expected_response(const ScmSpec& scm, const Matrix& history, long t_hist,
                         const Intervention& iv, ErMode mode, std::size_t n, std::uint64_t seed,
                         const Predictor& h) {
    iv.validate(scm);
    switch (mode) {
        case ErMode::Plain: {
            VecD x = history.row_vec(history.rows - 1);
            for (std::size_t k = 0; k < iv.targets.size(); ++k) {
                if (iv.mode == InterventionMode::Hard)
                    x[iv.targets[k]] = iv.theta[k];
                else
                    x[iv.targets[k]] += iv.theta[k];
            }
            return h.predict(x);
        }
        case ErMode::Counterfactual: {
            const Matrix window = tail_window(history, static_cast<std::size_t>(scm.max_lag) + 1);
            const VecD x = abduct_and_counterfactual(scm, window, t_hist, iv);
            return h.predict(x);
        }
        case ErMode::Interventional: {
            const auto samples = interventional_sample(scm, history, t_hist, iv, n, seed);
            double total = 0.0;
            for (const auto& x : samples) total += h.predict(x);
            return total / static_cast<double>(samples.size());
        }
    }
    return 0.0;
}

RecourseOutcome solve(const ScmSpec& scm, const Matrix& history, long t_hist,
                      const RecourseConfig& cfg, const Predictor& h, std::uint64_t seed) {
    cfg.validate();
    scm.validate();
    const auto members = build_members(scm, history, t_hist, cfg, seed);

    if (cfg.policy == SetPolicy::Fixed) {
        std::vector<std::size_t> targets =
            cfg.intervention_set.empty() ? actionable_set(scm) : cfg.intervention_set;
        if (targets.empty()) throw ValidationError("no actionable variables to intervene on");
        for (std::size_t i : targets)
            if (i >= scm.dim() || !scm.variables[i].actionable)
                throw ValidationError("intervention set must contain actionable variables");
        return solve_fixed_set(scm, members, t_hist, targets, cfg, h);
    }

    // Subset enumeration: size then lexicographic order; the best valid
    // outcome wins by cost, ties by smaller |I| then lexicographic I.
    const auto pool = actionable_set(scm);
    if (pool.empty()) throw ValidationError("no actionable variables to intervene on");
    const std::size_t cap = cfg.max_set_size == 0
                                ? pool.size()
                                : std::min<std::size_t>(cfg.max_set_size, pool.size());
    std::optional<RecourseOutcome> best;
    auto better = [&](const RecourseOutcome& a, const RecourseOutcome& b) {
        if (a.converged != b.converged) return a.converged;
        if (a.converged) {
            if (std::fabs(a.cost - b.cost) > 1e-12) return a.cost < b.cost;
            if (a.intervention_set.size() != b.intervention_set.size())
                return a.intervention_set.size() < b.intervention_set.size();
            return a.intervention_set < b.intervention_set;
        }
        return a.expected_response > b.expected_response;
    };
    // Enumerate by size so the |I| tie-break sees smaller sets first.
    for (std::size_t size = 1; size <= cap; ++size) {
        std::vector<std::size_t> pick;
        auto by_size = [&](auto&& self, std::size_t start) -> void {
            if (pick.size() == size) {
                const auto out = solve_fixed_set(scm, members, t_hist, pick, cfg, h);
                if (!best || better(out, *best)) best = out;
                return;
            }
            for (std::size_t i = start; i < pool.size(); ++i) {
                pick.push_back(pool[i]);
                self(self, i + 1);
                pick.pop_back();
            }
        };
        by_size(by_size, 0);
    }
    return *best;
}

std::vector<TrendSpec> adversarial_trend_for(const VecD& theta, double at) {
    std::vector<TrendSpec> trends;
    trends.reserve(theta.size());
    for (double th : theta) {
        TrendSpec t;
        t.custom = CustomTrend::Step;
        t.step_at = at;
        t.step_value = -th;
        t.sign = 1;
        trends.push_back(t);
    }
    return trends;
}

ScmSpec apply_adversarial_trend(ScmSpec scm, const VecD& theta, double at) {
    if (theta.size() != scm.dim()) throw ValidationError("theta dimension mismatch");
    const auto trends = adversarial_trend_for(theta, at);
    for (std::size_t i = 0; i < scm.dim(); ++i) scm.equations[i].trend = trends[i];
    return scm;
}

}  // namespace tcr
