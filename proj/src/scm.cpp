#include "tcr/scm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tcr {

namespace {

constexpr std::uint64_t kLabelTag = 0x4c41424cULL;  // stream tag for label draws

std::string var_time_message(const std::string& what, const std::string& var, long t) {
    std::ostringstream os;
    os << what << " (variable '" << var << "', t=" << t << ")";
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// NoiseSpec
// ---------------------------------------------------------------------------

NoiseSpec NoiseSpec::gaussian(double mean, double stddev) {
    NoiseSpec n;
    n.kind = NoiseKind::Gaussian;
    n.mean = mean;
    n.stddev = stddev;
    return n;
}

NoiseSpec NoiseSpec::mixture(std::vector<MixtureComponent> components) {
    NoiseSpec n;
    n.kind = NoiseKind::MixtureGaussian;
    n.components = std::move(components);
    return n;
}

NoiseSpec NoiseSpec::bernoulli(double p) {
    NoiseSpec n;
    n.kind = NoiseKind::Bernoulli;
    n.p = p;
    return n;
}

NoiseSpec NoiseSpec::poisson(double rate) {
    NoiseSpec n;
    n.kind = NoiseKind::Poisson;
    n.rate = rate;
    return n;
}

NoiseSpec NoiseSpec::gamma_dist(double shape, double scale) {
    NoiseSpec n;
    n.kind = NoiseKind::Gamma;
    n.shape = shape;
    n.scale = scale;
    return n;
}

NoiseSpec NoiseSpec::point_mass(double value) {
    NoiseSpec n;
    n.kind = NoiseKind::PointMass;
    n.mean = value;
    return n;
}

double NoiseSpec::sample(RandomStream& rng) const {
    switch (kind) {
        case NoiseKind::Gaussian:
            return stddev == 0.0 ? mean : rng.normal(mean, stddev);
        case NoiseKind::MixtureGaussian: {
            const double u = rng.uniform();
            double acc = 0.0;
            for (const auto& c : components) {
                acc += c.weight;
                if (u < acc || &c == &components.back()) return rng.normal(c.mean, c.stddev);
            }
            return rng.normal(components.back().mean, components.back().stddev);
        }
        case NoiseKind::Bernoulli:
            return rng.bernoulli(p) ? 1.0 : 0.0;
        case NoiseKind::Poisson:
            return static_cast<double>(rng.poisson(rate));
        case NoiseKind::Gamma:
            return rng.gamma(shape, scale);
        case NoiseKind::PointMass:
            return mean;
    }
    return 0.0;
}

double NoiseSpec::expectation() const {
    switch (kind) {
        case NoiseKind::Gaussian:
        case NoiseKind::PointMass:
            return mean;
        case NoiseKind::MixtureGaussian: {
            double m = 0.0;
            for (const auto& c : components) m += c.weight * c.mean;
            return m;
        }
        case NoiseKind::Bernoulli:
            return p;
        case NoiseKind::Poisson:
            return rate;
        case NoiseKind::Gamma:
            return shape * scale;
    }
    return 0.0;
}

bool NoiseSpec::deterministic() const {
    switch (kind) {
        case NoiseKind::PointMass:
            return true;
        case NoiseKind::Gaussian:
            return stddev == 0.0;
        case NoiseKind::MixtureGaussian:
            return std::all_of(components.begin(), components.end(), [&](const MixtureComponent& c) {
                return c.stddev == 0.0 && c.mean == components.front().mean;
            });
        default:
            return false;
    }
}

void NoiseSpec::validate() const {
    switch (kind) {
        case NoiseKind::Gaussian:
            if (stddev < 0.0) throw ValidationError("gaussian stddev must be >= 0");
            break;
        case NoiseKind::MixtureGaussian: {
            if (components.empty()) throw ValidationError("mixture needs at least one component");
            double total = 0.0;
            for (const auto& c : components) {
                if (c.weight <= 0.0) throw ValidationError("mixture weights must be positive");
                if (c.stddev < 0.0) throw ValidationError("mixture stddev must be >= 0");
                total += c.weight;
            }
            if (std::fabs(total - 1.0) > 1e-9) throw ValidationError("mixture weights must sum to 1");
            break;
        }
        case NoiseKind::Bernoulli:
            if (p < 0.0 || p > 1.0) throw ValidationError("bernoulli p must be in [0, 1]");
            break;
        case NoiseKind::Poisson:
            if (rate <= 0.0) throw ValidationError("poisson rate must be > 0");
            break;
        case NoiseKind::Gamma:
            if (shape <= 0.0 || scale <= 0.0) throw ValidationError("gamma parameters must be > 0");
            break;
        case NoiseKind::PointMass:
            break;
    }
}

// ---------------------------------------------------------------------------
// TrendSpec
// ---------------------------------------------------------------------------

void TrendSpec::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("trend alpha must be in [0, 1]");
    if (beta_linear < 0.0 || beta_seasonal < 0.0)
        throw ValidationError("trend betas must be >= 0");
    if (sign != 1 && sign != -1) throw ValidationError("trend sign must be +1 or -1");
}

double evaluate_trend(const TrendSpec& spec, double t) {
    switch (spec.custom) {
        case CustomTrend::Step:
            return t >= spec.step_at ? spec.step_value : 0.0;
        case CustomTrend::NegativeLinear:
            return -spec.linear_rate * t;
        case CustomTrend::None:
            break;
    }
    if (spec.alpha == 0.0) return 0.0;
    const double lin = spec.beta_linear * std::min(0.05 * t, 10.0);
    const double seas = spec.beta_seasonal * std::fabs(std::sin(0.5 * t));
    return spec.alpha * (lin + seas);
}

// ---------------------------------------------------------------------------
// MlpRegressor
// ---------------------------------------------------------------------------

double MlpRegressor::eval(std::span<const double> inputs) const {
    double out = b2;
    for (std::size_t h = 0; h < w2.size(); ++h) {
        double z = b1[h];
        for (std::size_t j = 0; j < inputs.size(); ++j) z += w1(h, j) * inputs[j];
        out += w2[h] * std::tanh(z);
    }
    return sigmoid_output ? sigmoid(out) : out;
}

VecD MlpRegressor::input_gradient(std::span<const double> inputs) const {
    VecD grad(inputs.size(), 0.0);
    double out = b2;
    std::vector<double> act(w2.size());
    for (std::size_t h = 0; h < w2.size(); ++h) {
        double z = b1[h];
        for (std::size_t j = 0; j < inputs.size(); ++j) z += w1(h, j) * inputs[j];
        act[h] = std::tanh(z);
        out += w2[h] * act[h];
    }
    const double outer = sigmoid_output ? sigmoid_derivative(out) : 1.0;
    for (std::size_t h = 0; h < w2.size(); ++h) {
        const double f = outer * w2[h] * (1.0 - act[h] * act[h]);
        for (std::size_t j = 0; j < inputs.size(); ++j) grad[j] += f * w1(h, j);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// StructuralEquation
// ---------------------------------------------------------------------------

double StructuralEquation::trend_contribution(double t) const {
    if (!trend) return 0.0;
    // Burn-in steps live before calendar time 0.
    const double tc = t < 0.0 ? 0.0 : t;
    return static_cast<double>(trend->sign) * evaluate_trend(*trend, tc);
}

namespace {

double logistic_inner(const LogisticTerm& term, std::span<const double> pa, double u_inside) {
    double z = term.bias + u_inside;
    for (const auto& f : term.features) {
        const double x = pa[f.parent];
        z += f.weight * (f.inner_sigmoid ? sigmoid(f.inner_scale * x) : x);
    }
    return z;
}

}  // namespace

double StructuralEquation::eval(std::span<const double> pa, double t, double u) const {
    double raw = intercept + time_coeff * t;
    for (const auto& a : affine) raw += a.coeff * pa[a.parent];
    for (const auto& s : squares) {
        const double diff = pa[s.parent] - s.shift;
        raw += s.coeff * diff * diff;
    }
    for (const auto& pr : products) raw += pr.coeff * pa[pr.a] * pa[pr.b];
    for (const auto& pp : positive_parts) raw += pp.coeff * std::max(pa[pp.parent], 0.0);
    if (logistic) {
        const double u_inside = placement == NoisePlacement::InsideLogistic ? u : 0.0;
        raw += logistic->scale * sigmoid(logistic_inner(*logistic, pa, u_inside));
    }
    if (mlp) {
        VecD inputs(mlp->inputs.size());
        for (std::size_t j = 0; j < inputs.size(); ++j) inputs[j] = pa[mlp->inputs[j]];
        raw += mlp->net.eval(inputs);
    }
    raw += trend_contribution(t);
    if (placement == NoisePlacement::BeforeTransform) raw += u;
    double value = output == OutputTransform::ThresholdHalf ? (raw > 0.5 ? 1.0 : 0.0) : raw;
    if (placement == NoisePlacement::AfterTransform) value += u;
    return value;
}

bool StructuralEquation::invertible() const {
    if (noise.deterministic()) return true;
    return placement == NoisePlacement::AfterTransform && output == OutputTransform::Identity;
}

double StructuralEquation::structural_part(std::span<const double> pa, double t) const {
    if (!invertible()) {
        throw AbductionError("structural_part undefined: equation is not additive in its noise");
    }
    return eval(pa, t, noise.deterministic() ? noise.expectation() : 0.0);
}

double StructuralEquation::partial(std::size_t idx, std::span<const double> pa, double /*t*/,
                                   double u) const {
    if (output == OutputTransform::ThresholdHalf) return 0.0;  // flat a.e.
    double g = 0.0;
    for (const auto& a : affine)
        if (a.parent == idx) g += a.coeff;
    for (const auto& s : squares)
        if (s.parent == idx) g += 2.0 * s.coeff * (pa[s.parent] - s.shift);
    for (const auto& pr : products) {
        if (pr.a == idx) g += pr.coeff * pa[pr.b];
        if (pr.b == idx) g += pr.coeff * pa[pr.a];
    }
    for (const auto& pp : positive_parts)
        if (pp.parent == idx && pa[pp.parent] > 0.0) g += pp.coeff;
    if (logistic) {
        const double u_inside = placement == NoisePlacement::InsideLogistic ? u : 0.0;
        const double z = logistic_inner(*logistic, pa, u_inside);
        const double dz = sigmoid_derivative(z);
        for (const auto& f : logistic->features) {
            if (f.parent != idx) continue;
            double inner = f.weight;
            if (f.inner_sigmoid) inner *= f.inner_scale * sigmoid_derivative(f.inner_scale * pa[f.parent]);
            g += logistic->scale * dz * inner;
        }
    }
    if (mlp) {
        VecD inputs(mlp->inputs.size());
        for (std::size_t j = 0; j < inputs.size(); ++j) inputs[j] = pa[mlp->inputs[j]];
        const VecD grad = mlp->net.input_gradient(inputs);
        for (std::size_t j = 0; j < inputs.size(); ++j)
            if (mlp->inputs[j] == idx) g += grad[j];
    }
    return g;
}

// ---------------------------------------------------------------------------
// LabelSpec
// ---------------------------------------------------------------------------

double LabelSpec::raw_score(std::span<const double> state) const {
    double s = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * state[i];
    for (const auto& pr : products) s += pr.coeff * state[pr.a] * state[pr.b];
    return s;
}

double LabelSpec::probability(std::span<const double> state) const {
    const double score = raw_score(state) - center;
    if (std::fabs(normalizer) < 1e-300) return 0.5;
    return sigmoid(scale * score / normalizer);
}

void LabelSpec::calibrate(const Matrix& states) {
    if (calibration == LabelCalibration::None) return;
    VecD scores(states.rows);
    for (std::size_t r = 0; r < states.rows; ++r) scores[r] = raw_score(states.row(r));
    if (calibration == LabelCalibration::MeanAbsScore) {
        double s = 0.0;
        for (double v : scores) s += std::fabs(v);
        center = 0.0;
        normalizer = states.rows ? s / static_cast<double>(states.rows) : 1.0;
    } else {
        center = mean(scores);
        const double sd = stddev(scores);
        normalizer = sd > 0.0 ? sd : 1.0;
    }
    calibration = LabelCalibration::None;
}

// ---------------------------------------------------------------------------
// ScmSpec
// ---------------------------------------------------------------------------

std::size_t ScmSpec::var_index(const std::string& name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i].name == name) return i;
    throw ValidationError("unknown variable id '" + name + "'");
}

std::vector<std::vector<std::size_t>> ScmSpec::lag0_children() const {
    std::vector<std::vector<std::size_t>> children(variables.size());
    for (std::size_t i = 0; i < equations.size(); ++i) {
        for (const auto& p : equations[i].parents) {
            if (p.lag == 0) children[p.var].push_back(i);
        }
    }
    return children;
}

std::vector<std::size_t> ScmSpec::topological_order() const {
    const std::size_t d = variables.size();
    std::vector<std::size_t> indegree(d, 0);
    for (std::size_t i = 0; i < equations.size(); ++i) {
        for (const auto& p : equations[i].parents)
            if (p.lag == 0) ++indegree[i];
    }
    // Kahn's algorithm; the ready set is scanned in declared order so ties
    // break deterministically.
    std::vector<std::size_t> order;
    order.reserve(d);
    std::vector<char> done(d, 0);
    const auto children = lag0_children();
    for (std::size_t produced = 0; produced < d; ++produced) {
        std::size_t pick = d;
        for (std::size_t i = 0; i < d; ++i) {
            if (!done[i] && indegree[i] == 0) {
                pick = i;
                break;
            }
        }
        if (pick == d) throw ValidationError("lag-0 edges contain a cycle");
        done[pick] = 1;
        order.push_back(pick);
        for (std::size_t c : children[pick]) --indegree[c];
    }
    return order;
}

void ScmSpec::validate() const {
    if (variables.empty()) throw ValidationError("spec has no variables");
    if (equations.size() != variables.size())
        throw ValidationError("exactly one equation per variable required");
    if (max_lag < 0) throw ValidationError("max_lag must be >= 0");
    for (std::size_t i = 0; i < equations.size(); ++i) {
        const auto& eq = equations[i];
        eq.noise.validate();
        if (eq.trend) eq.trend->validate();
        for (const auto& p : eq.parents) {
            if (p.var >= variables.size()) throw ValidationError("parent index out of range");
            if (p.lag < 0 || p.lag > max_lag)
                throw ValidationError("parent lag exceeds the declared horizon");
            if (p.lag == 0 && p.var == i) throw ValidationError("lag-0 self edge");
        }
        auto check_parent_ref = [&](std::size_t ref) {
            if (ref >= eq.parents.size()) throw ValidationError("term references missing parent");
        };
        for (const auto& a : eq.affine) check_parent_ref(a.parent);
        for (const auto& s : eq.squares) check_parent_ref(s.parent);
        for (const auto& pr : eq.products) {
            check_parent_ref(pr.a);
            check_parent_ref(pr.b);
        }
        for (const auto& pp : eq.positive_parts) check_parent_ref(pp.parent);
        if (eq.logistic)
            for (const auto& f : eq.logistic->features) check_parent_ref(f.parent);
        if (eq.mlp)
            for (std::size_t ref : eq.mlp->inputs) check_parent_ref(ref);
        if (variables[i].actionable && eq.freeze_after_t0)
            throw ValidationError("actionable variable '" + variables[i].name + "' cannot be frozen");
        if (eq.placement == NoisePlacement::InsideLogistic && !eq.logistic)
            throw ValidationError("noise routed inside a missing logistic term");
    }
    topological_order();  // throws on lag-0 cycles
}

// ---------------------------------------------------------------------------
// Intervention
// ---------------------------------------------------------------------------

void Intervention::validate(const ScmSpec& scm) const {
    if (targets.empty()) throw ValidationError("intervention set must be nonempty");
    if (targets.size() != theta.size())
        throw ValidationError("intervention theta size must match the target set");
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const std::size_t i = targets[k];
        if (i >= scm.dim()) throw ValidationError("intervention target out of range");
        if (!scm.variables[i].actionable)
            throw ValidationError("intervention on non-actionable variable '" +
                                  scm.variables[i].name + "'");
        if (mode == InterventionMode::Soft && scm.variables[i].monotone_nondecreasing &&
            theta[k] < 0.0)
            throw ValidationError("monotone variable '" + scm.variables[i].name +
                                  "' requires theta >= 0");
        if (k > 0 && targets[k] <= targets[k - 1])
            throw ValidationError("intervention targets must be strictly increasing");
    }
}

// ---------------------------------------------------------------------------
// Simulation kernels
// ---------------------------------------------------------------------------

namespace {

struct Path {
    Matrix rows;  // row k is time t0 + k
    long t0 = 0;

    double at(std::size_t var, long t) const {
        if (t < t0) return 0.0;
        return rows(static_cast<std::size_t>(t - t0), var);
    }
    void set(std::size_t var, long t, double v) {
        rows(static_cast<std::size_t>(t - t0), var) = v;
    }
    long t_last() const { return t0 + static_cast<long>(rows.rows) - 1; }
};

void gather_parents(const StructuralEquation& eq, const Path& path, long t, VecD& buf) {
    buf.resize(eq.parents.size());
    for (std::size_t j = 0; j < eq.parents.size(); ++j)
        buf[j] = path.at(eq.parents[j].var, t - eq.parents[j].lag);
}

// Evaluates one timestep in topological order. `first_sim_t` drives the
// freeze semantics; `iv` (when non-null and t == iv->apply_at) is applied.
void eval_step(const ScmSpec& scm, const std::vector<std::size_t>& order, Path& path, long t,
               long first_sim_t, std::uint64_t noise_seed, const Intervention* iv) {
    VecD pa;
    for (std::size_t i : order) {
        const auto& eq = scm.equations[i];
        double value;
        const double* theta = nullptr;
        bool hard = false;
        if (iv && t == iv->apply_at) {
            for (std::size_t k = 0; k < iv->targets.size(); ++k) {
                if (iv->targets[k] == i) {
                    theta = &iv->theta[k];
                    hard = iv->mode == InterventionMode::Hard;
                    break;
                }
            }
        }
        if (hard) {
            value = *theta;
        } else if (eq.freeze_after_t0 && t > first_sim_t) {
            value = path.at(i, t - 1);
            if (theta) value += *theta;
        } else {
            gather_parents(eq, path, t, pa);
            RandomStream rng(mix_seed(noise_seed, i, static_cast<std::uint64_t>(t)));
            const double u = eq.noise.sample(rng);
            value = eq.eval(pa, static_cast<double>(t), u);
            if (theta) value += *theta;
        }
        if (!std::isfinite(value)) {
            throw SimulationError(
                var_time_message("simulation diverged to a non-finite value",
                                 scm.variables[i].name, t));
        }
        path.set(i, t, value);
    }
}

Path make_path_from_history(const ScmSpec& scm, const Matrix& history, long t_hist, long t_target) {
    if (history.cols != scm.dim() && history.rows > 0)
        throw ValidationError("history width does not match the spec dimension");
    const long hist_rows = static_cast<long>(history.rows);
    Path path;
    path.t0 = t_hist - hist_rows + 1;
    path.rows = Matrix(static_cast<std::size_t>(t_target - path.t0 + 1), scm.dim());
    for (long r = 0; r < hist_rows; ++r)
        for (std::size_t c = 0; c < scm.dim(); ++c)
            path.rows(static_cast<std::size_t>(r), c) = history(static_cast<std::size_t>(r), c);
    return path;
}

Path roll_forward(const ScmSpec& scm, const std::vector<std::size_t>& order, const Matrix& history,
                  long t_hist, long t_target, std::uint64_t noise_seed, const Intervention* iv) {
    Path path = make_path_from_history(scm, history, t_hist, t_target);
    for (long t = t_hist + 1; t <= t_target; ++t) {
        // Frozen variables keep copying; first_sim_t below any history row.
        eval_step(scm, order, path, t, path.t0 - 1, noise_seed, iv);
    }
    return path;
}

}  // namespace

std::vector<Trajectory> sample_trajectory(const ScmSpec& scm, long t_max, std::size_t n,
                                          std::uint64_t seed, SimulationOptions opts) {
    if (t_max < 0) throw ValidationError("t_max must be >= 0");
    if (n < 1) throw ValidationError("n must be >= 1");
    if (opts.burn_in < 0) throw ValidationError("burn_in must be >= 0");
    if (opts.sample_labels && scm.label && scm.label->calibration != LabelCalibration::None)
        throw ValidationError("label spec must be calibrated before sampling labels");
    const auto order = scm.topological_order();
    std::vector<Trajectory> out;
    out.reserve(n);
    const long first_t = -static_cast<long>(opts.burn_in);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t traj_seed = mix_seed(seed, k);
        Path path;
        path.t0 = first_t;
        path.rows = Matrix(static_cast<std::size_t>(t_max - first_t + 1), scm.dim());
        for (long t = first_t; t <= t_max; ++t)
            eval_step(scm, order, path, t, first_t, traj_seed, nullptr);

        Trajectory traj;
        traj.seed = traj_seed;
        traj.states = Matrix(static_cast<std::size_t>(t_max + 1), scm.dim());
        for (long t = 0; t <= t_max; ++t)
            for (std::size_t c = 0; c < scm.dim(); ++c)
                traj.states(static_cast<std::size_t>(t), c) = path.at(c, t);
        traj.lag_rows = Matrix(static_cast<std::size_t>(scm.max_lag), scm.dim());
        for (int l = 0; l < scm.max_lag; ++l)
            for (std::size_t c = 0; c < scm.dim(); ++c)
                traj.lag_rows(static_cast<std::size_t>(l), c) = path.at(c, -scm.max_lag + l);
        traj.labels.assign(static_cast<std::size_t>(t_max + 1), -1);
        if (opts.sample_labels && scm.label) {
            for (long t = 0; t <= t_max; ++t) {
                RandomStream rng(mix_seed(traj_seed, kLabelTag, static_cast<std::uint64_t>(t)));
                const double p = scm.label->probability(traj.states.row(static_cast<std::size_t>(t)));
                traj.labels[static_cast<std::size_t>(t)] = rng.bernoulli(p) ? 1 : 0;
            }
        }
        out.push_back(std::move(traj));
    }
    return out;
}

Matrix history_window(const Trajectory& traj, long t_obs, int max_lag) {
    if (t_obs < 0 || t_obs >= static_cast<long>(traj.states.rows))
        throw ValidationError("t_obs outside the trajectory");
    Matrix window(static_cast<std::size_t>(max_lag) + 1, traj.states.cols);
    for (long l = 0; l <= max_lag; ++l) {
        const long t = t_obs - max_lag + l;
        for (std::size_t c = 0; c < traj.states.cols; ++c) {
            double v = 0.0;
            if (t >= 0) {
                v = traj.states(static_cast<std::size_t>(t), c);
            } else if (traj.lag_rows.rows > 0) {
                const long idx = static_cast<long>(traj.lag_rows.rows) + t;  // t = -1 -> last row
                if (idx >= 0) v = traj.lag_rows(static_cast<std::size_t>(idx), c);
            }
            window(static_cast<std::size_t>(l), c) = v;
        }
    }
    return window;
}

std::vector<char> descendant_mask(const ScmSpec& scm, const std::vector<std::size_t>& targets) {
    std::vector<char> mask(scm.dim(), 0);
    const auto children = scm.lag0_children();
    std::vector<std::size_t> stack;
    for (std::size_t i : targets) {
        if (i >= scm.dim()) throw ValidationError("unknown variable id in target set");
        mask[i] = 1;
        stack.push_back(i);
    }
    while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        for (std::size_t c : children[v]) {
            if (!mask[c]) {
                mask[c] = 1;
                stack.push_back(c);
            }
        }
    }
    return mask;
}

std::vector<std::size_t> non_descendants(const ScmSpec& scm,
                                         const std::vector<std::size_t>& targets) {
    const auto mask = descendant_mask(scm, targets);
    std::vector<std::size_t> nd;
    for (std::size_t i = 0; i < scm.dim(); ++i)
        if (!mask[i]) nd.push_back(i);
    return nd;
}

std::vector<VecD> interventional_sample(const ScmSpec& scm, const Matrix& history, long t_hist,
                                        const Intervention& iv, std::size_t n,
                                        std::uint64_t seed) {
    iv.validate(scm);
    if (iv.apply_at < t_hist)
        throw ValidationError("intervention must apply at or after the observed horizon");
    const auto order = scm.topological_order();
    std::vector<VecD> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t rep_seed = mix_seed(seed, k);
        if (iv.apply_at == t_hist) {
            RandomStream rng(rep_seed);
            out.push_back(conditional_reevaluate(scm, history, t_hist, iv, rng));
        } else {
            Path path = roll_forward(scm, order, history, t_hist, iv.apply_at, rep_seed, &iv);
            out.push_back(path.rows.row_vec(path.rows.rows - 1));
        }
    }
    return out;
}

namespace {

// Shared counterfactual core: abduce noise, then re-evaluate time t_obs with
// offsets `shift` (soft, one per variable; hard overrides via `hard_value`).
VecD counterfactual_core(const ScmSpec& scm, const Matrix& window, long t_obs, const VecD& shift,
                         const std::vector<char>& hard_mask, const VecD& hard_value,
                         const std::vector<std::size_t>& sens_targets, Matrix* jacobian) {
    if (window.rows < static_cast<std::size_t>(scm.max_lag) + 1)
        throw ValidationError("observation window must cover all lags up to the horizon");
    Path path;
    path.rows = window;
    path.t0 = t_obs - static_cast<long>(window.rows) + 1;

    const std::size_t d = scm.dim();
    VecD u(d, 0.0);
    VecD pa;
    for (std::size_t i = 0; i < d; ++i) {
        const auto& eq = scm.equations[i];
        if (eq.freeze_after_t0 && t_obs > 0) continue;  // copied forward, no noise
        if (!eq.invertible())
            throw AbductionError("unsupported abduction: equation for '" + scm.variables[i].name +
                                 "' is not additive in its noise");
        if (eq.noise.deterministic()) {
            u[i] = eq.noise.expectation();
        } else {
            gather_parents(eq, path, t_obs, pa);
            u[i] = path.at(i, t_obs) - eq.structural_part(pa, static_cast<double>(t_obs));
        }
    }

    const std::vector<char> changed =
        sens_targets.empty() ? std::vector<char>() : descendant_mask(scm, sens_targets);
    const std::size_t m = sens_targets.size();
    Matrix sens;
    if (jacobian) sens = Matrix(d, m, 0.0);

    Path work = path;
    const auto order = scm.topological_order();
    for (std::size_t i : order) {
        const auto& eq = scm.equations[i];
        double value;
        if (hard_mask.size() == d && hard_mask[i]) {
            value = hard_value[i];
        } else if (eq.freeze_after_t0 && t_obs > 0) {
            value = work.at(i, t_obs - 1) + shift[i];
        } else {
            gather_parents(eq, work, t_obs, pa);
            value = eq.eval(pa, static_cast<double>(t_obs), u[i]) + shift[i];
        }
        work.set(i, t_obs, value);

        if (jacobian && !changed.empty() && changed[i]) {
            const bool hard = hard_mask.size() == d && hard_mask[i];
            for (std::size_t k = 0; k < m; ++k) {
                double s = sens_targets[k] == i ? 1.0 : 0.0;
                if (!hard && !(eq.freeze_after_t0 && t_obs > 0)) {
                    for (std::size_t j = 0; j < eq.parents.size(); ++j) {
                        const auto& p = eq.parents[j];
                        if (p.lag != 0 || !changed[p.var]) continue;
                        const double sp = sens(p.var, k);
                        if (sp == 0.0) continue;
                        s += eq.partial(j, pa, static_cast<double>(t_obs), u[i]) * sp;
                    }
                }
                sens(i, k) = s;
            }
        }
    }
    if (jacobian) *jacobian = std::move(sens);
    return work.rows.row_vec(work.rows.rows - 1);
}

}  // namespace

VecD abduct_and_counterfactual(const ScmSpec& scm, const Matrix& window, long t_obs,
                               const Intervention& iv, Matrix* jacobian) {
    iv.validate(scm);
    const std::size_t d = scm.dim();
    VecD shift(d, 0.0);
    std::vector<char> hard_mask;
    VecD hard_value;
    if (iv.mode == InterventionMode::Hard) {
        hard_mask.assign(d, 0);
        hard_value.assign(d, 0.0);
        for (std::size_t k = 0; k < iv.targets.size(); ++k) {
            hard_mask[iv.targets[k]] = 1;
            hard_value[iv.targets[k]] = iv.theta[k];
        }
    } else {
        for (std::size_t k = 0; k < iv.targets.size(); ++k) shift[iv.targets[k]] = iv.theta[k];
    }
    return counterfactual_core(scm, window, t_obs, shift, hard_mask, hard_value, iv.targets,
                               jacobian);
}

VecD counterfactual_shift_all(const ScmSpec& scm, const Matrix& window, long t_obs,
                              const VecD& delta) {
    if (delta.size() != scm.dim()) throw ValidationError("delta dimension mismatch");
    return counterfactual_core(scm, window, t_obs, delta, {}, {}, {}, nullptr);
}

std::vector<Matrix> roll_paths(const ScmSpec& scm, const Matrix& history, long t_hist, long steps,
                               std::size_t n, std::uint64_t seed) {
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (n < 1) throw ValidationError("n must be >= 1");
    const auto order = scm.topological_order();
    std::vector<Matrix> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Path path = roll_forward(scm, order, history, t_hist, t_hist + steps, mix_seed(seed, k),
                                 nullptr);
        out.push_back(std::move(path.rows));
    }
    return out;
}

std::vector<Matrix> forecast_windows(const ScmSpec& scm, const Matrix& history, long t_hist,
                                     long tau, std::size_t n_samples, std::uint64_t seed) {
    if (tau <= 0) throw ValidationError("forecast lag tau must be > 0");
    return roll_paths(scm, history, t_hist, tau, n_samples, seed);
}

std::vector<VecD> forecast_uncertainty_set(const ScmSpec& scm, const Matrix& history, long t_hist,
                                           long tau, std::size_t n_samples, std::uint64_t seed) {
    auto windows = forecast_windows(scm, history, t_hist, tau, n_samples, seed);
    std::vector<VecD> out;
    out.reserve(windows.size());
    for (auto& w : windows) out.push_back(w.row_vec(w.rows - 1));
    return out;
}

VecD conditional_reevaluate(const ScmSpec& scm, const Matrix& window, long t_eval,
                            const Intervention& iv, RandomStream& rng, Matrix* jacobian) {
    const auto changed = descendant_mask(scm, iv.targets);
    const auto order = scm.topological_order();
    Path work;
    work.rows = window;
    work.t0 = t_eval - static_cast<long>(window.rows) + 1;

    const std::size_t d = scm.dim();
    const std::size_t m = iv.targets.size();
    Matrix sens;  // d x m, d value_i / d theta_k
    if (jacobian) sens = Matrix(d, m, 0.0);

    VecD pa;
    for (std::size_t i : order) {
        if (!changed[i]) continue;
        const auto& eq = scm.equations[i];
        std::size_t theta_idx = m;
        for (std::size_t k = 0; k < m; ++k)
            if (iv.targets[k] == i) theta_idx = k;

        const bool hard = theta_idx < m && iv.mode == InterventionMode::Hard;
        double value;
        double u = 0.0;
        if (hard) {
            value = iv.theta[theta_idx];
        } else {
            gather_parents(eq, work, t_eval, pa);
            u = eq.noise.sample(rng);
            value = eq.eval(pa, static_cast<double>(t_eval), u);
            if (theta_idx < m) value += iv.theta[theta_idx];
        }
        if (!std::isfinite(value))
            throw SimulationError(var_time_message("simulation diverged to a non-finite value",
                                                   scm.variables[i].name, t_eval));
        work.set(i, t_eval, value);

        if (jacobian) {
            for (std::size_t k = 0; k < m; ++k) {
                double s = theta_idx == k ? 1.0 : 0.0;
                if (!hard) {
                    for (std::size_t j = 0; j < eq.parents.size(); ++j) {
                        const auto& p = eq.parents[j];
                        if (p.lag != 0 || !changed[p.var]) continue;
                        const double sp = sens(p.var, k);
                        if (sp == 0.0) continue;
                        s += eq.partial(j, pa, static_cast<double>(t_eval), u) * sp;
                    }
                } else if (theta_idx != k) {
                    s = 0.0;  // hard intervention detaches from parents
                }
                sens(i, k) = s;
            }
        }
    }
    if (jacobian) *jacobian = std::move(sens);
    return work.rows.row_vec(work.rows.rows - 1);
}

std::vector<int> sample_labels(const ScmSpec& scm, const Matrix& states, std::uint64_t seed) {
    if (!scm.label) throw ValidationError("spec has no label function");
    if (states.cols != scm.dim()) throw ValidationError("state dimension mismatch");
    std::vector<int> labels(states.rows);
    for (std::size_t r = 0; r < states.rows; ++r) {
        RandomStream rng(mix_seed(seed, r, kLabelTag));
        labels[r] = rng.bernoulli(scm.label->probability(states.row(r))) ? 1 : 0;
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json noise_to_json(const NoiseSpec& n) {
    json j;
    switch (n.kind) {
        case NoiseKind::Gaussian:
            j["kind"] = "gaussian";
            j["mean"] = n.mean;
            j["stddev"] = n.stddev;
            break;
        case NoiseKind::MixtureGaussian: {
            j["kind"] = "mixture-of-gaussians";
            json comps = json::array();
            for (const auto& c : n.components)
                comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"stddev", c.stddev}});
            j["components"] = comps;
            break;
        }
        case NoiseKind::Bernoulli:
            j["kind"] = "bernoulli";
            j["p"] = n.p;
            break;
        case NoiseKind::Poisson:
            j["kind"] = "poisson";
            j["rate"] = n.rate;
            break;
        case NoiseKind::Gamma:
            j["kind"] = "gamma";
            j["shape"] = n.shape;
            j["scale"] = n.scale;
            break;
        case NoiseKind::PointMass:
            j["kind"] = "point-mass";
            j["value"] = n.mean;
            break;
    }
    return j;
}

NoiseSpec noise_from_json(const json& j) {
    const std::string kind = j.at("kind");
    if (kind == "gaussian") return NoiseSpec::gaussian(j.at("mean"), j.at("stddev"));
    if (kind == "mixture-of-gaussians") {
        std::vector<MixtureComponent> comps;
        for (const auto& c : j.at("components"))
            comps.push_back({c.at("weight"), c.at("mean"), c.at("stddev")});
        return NoiseSpec::mixture(std::move(comps));
    }
    if (kind == "bernoulli") return NoiseSpec::bernoulli(j.at("p"));
    if (kind == "poisson") return NoiseSpec::poisson(j.at("rate"));
    if (kind == "gamma") return NoiseSpec::gamma_dist(j.at("shape"), j.at("scale"));
    if (kind == "point-mass") return NoiseSpec::point_mass(j.at("value"));
    throw ValidationError("unknown noise kind '" + kind + "'");
}

json trend_to_json(const TrendSpec& t) {
    json j;
    j["alpha"] = t.alpha;
    j["beta_linear"] = t.beta_linear;
    j["beta_seasonal"] = t.beta_seasonal;
    j["sign"] = t.sign;
    switch (t.custom) {
        case CustomTrend::None:
            break;
        case CustomTrend::Step:
            j["custom"] = "step";
            j["step_at"] = t.step_at;
            j["step_value"] = t.step_value;
            break;
        case CustomTrend::NegativeLinear:
            j["custom"] = "negative-linear";
            j["linear_rate"] = t.linear_rate;
            break;
    }
    return j;
}

TrendSpec trend_from_json(const json& j) {
    TrendSpec t;
    t.alpha = j.value("alpha", 0.0);
    t.beta_linear = j.value("beta_linear", 0.0);
    t.beta_seasonal = j.value("beta_seasonal", 0.0);
    t.sign = j.value("sign", 1);
    const std::string custom = j.value("custom", "");
    if (custom == "step") {
        t.custom = CustomTrend::Step;
        t.step_at = j.at("step_at");
        t.step_value = j.at("step_value");
    } else if (custom == "negative-linear") {
        t.custom = CustomTrend::NegativeLinear;
        t.linear_rate = j.at("linear_rate");
    }
    return t;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    Matrix m;
    m.rows = j.size();
    m.cols = m.rows ? j[0].size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const auto& row : j)
        for (const auto& v : row) m.data.push_back(v.get<double>());
    return m;
}

json mlp_to_json(const MlpRegressor& net) {
    json j;
    j["w1"] = matrix_to_json(net.w1);
    j["b1"] = net.b1;
    j["w2"] = net.w2;
    j["b2"] = net.b2;
    j["sigmoid_output"] = net.sigmoid_output;
    return j;
}

MlpRegressor mlp_from_json(const json& j) {
    MlpRegressor net;
    net.w1 = matrix_from_json(j.at("w1"));
    net.b1 = j.at("b1").get<VecD>();
    net.w2 = j.at("w2").get<VecD>();
    net.b2 = j.at("b2");
    net.sigmoid_output = j.value("sigmoid_output", false);
    return net;
}

}  // namespace

json scm_to_json(const ScmSpec& scm) {
    json doc;
    doc["schema_version"] = 1;
    doc["max_lag"] = scm.max_lag;
    json vars = json::array();
    for (const auto& v : scm.variables) {
        vars.push_back({{"name", v.name},
                        {"actionable", v.actionable},
                        {"monotone_nondecreasing", v.monotone_nondecreasing},
                        {"categorical", v.categorical}});
    }
    doc["variables"] = vars;
    json eqs = json::array();
    for (std::size_t i = 0; i < scm.equations.size(); ++i) {
        const auto& eq = scm.equations[i];
        json e;
        e["target"] = scm.variables[i].name;
        json parents = json::array();
        for (const auto& p : eq.parents)
            parents.push_back({{"var", scm.variables[p.var].name}, {"lag", p.lag}});
        e["parents"] = parents;
        e["intercept"] = eq.intercept;
        if (eq.time_coeff != 0.0) e["time_coeff"] = eq.time_coeff;
        if (!eq.affine.empty()) {
            json terms = json::array();
            for (const auto& a : eq.affine) terms.push_back({{"parent", a.parent}, {"coeff", a.coeff}});
            e["affine"] = terms;
        }
        if (!eq.squares.empty()) {
            json terms = json::array();
            for (const auto& s : eq.squares)
                terms.push_back({{"parent", s.parent}, {"coeff", s.coeff}, {"shift", s.shift}});
            e["squares"] = terms;
        }
        if (!eq.products.empty()) {
            json terms = json::array();
            for (const auto& p : eq.products)
                terms.push_back({{"a", p.a}, {"b", p.b}, {"coeff", p.coeff}});
            e["products"] = terms;
        }
        if (!eq.positive_parts.empty()) {
            json terms = json::array();
            for (const auto& p : eq.positive_parts)
                terms.push_back({{"parent", p.parent}, {"coeff", p.coeff}});
            e["positive_parts"] = terms;
        }
        if (eq.logistic) {
            json lt;
            json feats = json::array();
            for (const auto& f : eq.logistic->features)
                feats.push_back({{"parent", f.parent},
                                 {"weight", f.weight},
                                 {"inner_sigmoid", f.inner_sigmoid},
                                 {"inner_scale", f.inner_scale}});
            lt["features"] = feats;
            lt["bias"] = eq.logistic->bias;
            lt["scale"] = eq.logistic->scale;
            e["logistic"] = lt;
        }
        if (eq.mlp) {
            json mt;
            mt["inputs"] = eq.mlp->inputs;
            mt["net"] = mlp_to_json(eq.mlp->net);
            e["mlp"] = mt;
        }
        e["noise"] = noise_to_json(eq.noise);
        if (eq.trend) e["trend"] = trend_to_json(*eq.trend);
        if (eq.output == OutputTransform::ThresholdHalf) e["output"] = "threshold-half";
        if (eq.placement == NoisePlacement::BeforeTransform) e["noise_placement"] = "before-transform";
        if (eq.placement == NoisePlacement::InsideLogistic) e["noise_placement"] = "inside-logistic";
        if (eq.freeze_after_t0) e["freeze_after_t0"] = true;
        eqs.push_back(e);
    }
    doc["equations"] = eqs;
    if (scm.label) {
        json l;
        l["coeffs"] = scm.label->coeffs;
        if (!scm.label->products.empty()) {
            json terms = json::array();
            for (const auto& p : scm.label->products)
                terms.push_back({{"a", p.a}, {"b", p.b}, {"coeff", p.coeff}});
            l["products"] = terms;
        }
        l["scale"] = scm.label->scale;
        l["center"] = scm.label->center;
        l["normalizer"] = scm.label->normalizer;
        switch (scm.label->calibration) {
            case LabelCalibration::None:
                l["calibration"] = "none";
                break;
            case LabelCalibration::MeanAbsScore:
                l["calibration"] = "mean-abs-score";
                break;
            case LabelCalibration::Standardize:
                l["calibration"] = "standardize";
                break;
        }
        doc["label"] = l;
    }
    if (scm.provenance) {
        doc["provenance"] = {{"fit_cutoff", scm.provenance->fit_cutoff},
                             {"data_hash", scm.provenance->data_hash},
                             {"seed", scm.provenance->seed},
                             {"residual_variance", scm.provenance->residual_variance}};
    }
    return doc;
}

ScmSpec scm_from_json(const json& doc) {
    if (doc.value("schema_version", 0) != 1)
        throw ValidationError("unsupported scm schema version");
    ScmSpec scm;
    scm.max_lag = doc.at("max_lag");
    for (const auto& v : doc.at("variables")) {
        Variable var;
        var.name = v.at("name");
        var.actionable = v.value("actionable", false);
        var.monotone_nondecreasing = v.value("monotone_nondecreasing", false);
        var.categorical = v.value("categorical", false);
        scm.variables.push_back(var);
    }
    for (const auto& e : doc.at("equations")) {
        StructuralEquation eq;
        for (const auto& p : e.at("parents"))
            eq.parents.push_back({scm.var_index(p.at("var")), p.at("lag")});
        eq.intercept = e.value("intercept", 0.0);
        eq.time_coeff = e.value("time_coeff", 0.0);
        if (e.contains("affine"))
            for (const auto& a : e.at("affine")) eq.affine.push_back({a.at("parent"), a.at("coeff")});
        if (e.contains("squares"))
            for (const auto& s : e.at("squares"))
                eq.squares.push_back({s.at("parent"), s.at("coeff"), s.at("shift")});
        if (e.contains("products"))
            for (const auto& p : e.at("products"))
                eq.products.push_back({p.at("a"), p.at("b"), p.at("coeff")});
        if (e.contains("positive_parts"))
            for (const auto& p : e.at("positive_parts"))
                eq.positive_parts.push_back({p.at("parent"), p.at("coeff")});
        if (e.contains("logistic")) {
            LogisticTerm lt;
            for (const auto& f : e.at("logistic").at("features"))
                lt.features.push_back({f.at("parent"), f.at("weight"),
                                       f.value("inner_sigmoid", false), f.value("inner_scale", 1.0)});
            lt.bias = e.at("logistic").at("bias");
            lt.scale = e.at("logistic").at("scale");
            eq.logistic = lt;
        }
        if (e.contains("mlp")) {
            MlpTerm mt;
            mt.inputs = e.at("mlp").at("inputs").get<std::vector<std::size_t>>();
            mt.net = mlp_from_json(e.at("mlp").at("net"));
            eq.mlp = mt;
        }
        eq.noise = noise_from_json(e.at("noise"));
        if (e.contains("trend")) eq.trend = trend_from_json(e.at("trend"));
        if (e.value("output", "") == std::string("threshold-half"))
            eq.output = OutputTransform::ThresholdHalf;
        const std::string placement = e.value("noise_placement", "");
        if (placement == "before-transform") eq.placement = NoisePlacement::BeforeTransform;
        if (placement == "inside-logistic") eq.placement = NoisePlacement::InsideLogistic;
        eq.freeze_after_t0 = e.value("freeze_after_t0", false);
        scm.equations.push_back(std::move(eq));
    }
    if (doc.contains("label")) {
        LabelSpec l;
        const auto& jl = doc.at("label");
        l.coeffs = jl.at("coeffs").get<VecD>();
        if (jl.contains("products"))
            for (const auto& p : jl.at("products"))
                l.products.push_back({p.at("a"), p.at("b"), p.at("coeff")});
        l.scale = jl.value("scale", 1.0);
        l.center = jl.value("center", 0.0);
        l.normalizer = jl.value("normalizer", 1.0);
        const std::string calib = jl.value("calibration", "none");
        if (calib == "mean-abs-score") l.calibration = LabelCalibration::MeanAbsScore;
        if (calib == "standardize") l.calibration = LabelCalibration::Standardize;
        scm.label = l;
    }
    if (doc.contains("provenance")) {
        EstimatorProvenance prov;
        const auto& jp = doc.at("provenance");
        prov.fit_cutoff = jp.at("fit_cutoff");
        prov.data_hash = jp.at("data_hash");
        prov.seed = jp.at("seed");
        prov.residual_variance = jp.at("residual_variance").get<VecD>();
        scm.provenance = prov;
    }
    scm.validate();
    return scm;
}

void write_trajectories_csv(const std::string& path, const ScmSpec& scm,
                            const std::vector<Trajectory>& trajectories) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "individual,t";
    for (const auto& v : scm.variables) out << ',' << v.name;
    out << ",label\n";
    out.precision(17);
    for (std::size_t k = 0; k < trajectories.size(); ++k) {
        const auto& traj = trajectories[k];
        for (std::size_t t = 0; t < traj.states.rows; ++t) {
            out << k << ',' << t;
            for (std::size_t c = 0; c < traj.states.cols; ++c) out << ',' << traj.states(t, c);
            out << ',';
            if (traj.labels[t] >= 0) out << traj.labels[t];
            out << '\n';
        }
    }
}

}  // namespace tcr
