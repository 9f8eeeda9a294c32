#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcr/linalg.hpp"
#include "tcr/rng.hpp"

namespace tcr {

using json = nlohmann::ordered_json;

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AbductionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

enum class NoiseKind { Gaussian, MixtureGaussian, Bernoulli, Poisson, Gamma, PointMass };

struct MixtureComponent {
    double weight = 0.5;
    double mean = 0.0;
    double stddev = 1.0;
};

struct NoiseSpec {
    NoiseKind kind = NoiseKind::PointMass;
    double mean = 0.0;     // gaussian mean / point-mass value
    double stddev = 0.0;   // gaussian
    double p = 0.5;        // bernoulli
    double rate = 1.0;     // poisson
    double shape = 1.0;    // gamma
    double scale = 1.0;    // gamma
    std::vector<MixtureComponent> components;

    static NoiseSpec gaussian(double mean, double stddev);
    static NoiseSpec mixture(std::vector<MixtureComponent> components);
    static NoiseSpec bernoulli(double p);
    static NoiseSpec poisson(double rate);
    static NoiseSpec gamma_dist(double shape, double scale);
    static NoiseSpec point_mass(double value);

    double sample(RandomStream& rng) const;
    double expectation() const;
    bool deterministic() const;
    void validate() const;
};

// ---------------------------------------------------------------------------
// Trend
// ---------------------------------------------------------------------------

enum class CustomTrend {
    None,
    Step,            // 0 for t < step_at, step_value for t >= step_at
    NegativeLinear,  // -linear_rate * t
};

struct TrendSpec {
    double alpha = 0.0;          // strength in [0, 1]
    double beta_linear = 0.0;    // >= 0
    double beta_seasonal = 0.0;  // >= 0
    int sign = 1;                // +1 or -1, how the trend enters the equation
    CustomTrend custom = CustomTrend::None;
    double step_at = 0.0;
    double step_value = 0.0;
    double linear_rate = 0.0;

    void validate() const;
};

// Trend magnitude at time t. The custom override takes precedence; otherwise
// m(t) = alpha * (beta_l * min(0.05 t, 10) + beta_s * |sin(0.5 t)|).
double evaluate_trend(const TrendSpec& spec, double t);

// ---------------------------------------------------------------------------
// Structural equations
// ---------------------------------------------------------------------------

struct Parent {
    std::size_t var = 0;  // variable index in the spec
    int lag = 0;          // 0..max_lag
};

struct AffineTerm {
    std::size_t parent = 0;  // index into the equation's parent list
    double coeff = 0.0;
};

struct SquareTerm {
    std::size_t parent = 0;
    double coeff = 0.0;
    double shift = 0.0;  // coeff * (x - shift)^2
};

struct ProductTerm {
    std::size_t a = 0;
    std::size_t b = 0;
    double coeff = 0.0;  // coeff * x_a * x_b
};

struct PositivePartTerm {
    std::size_t parent = 0;
    double coeff = 0.0;  // coeff * max(x, 0)
};

// scale * sigmoid(bias + sum_j w_j * f_j(x_j) [+ u]) where f_j is either the
// identity or sigmoid(inner_scale * x_j).
struct LogisticFeature {
    std::size_t parent = 0;
    double weight = 0.0;
    bool inner_sigmoid = false;
    double inner_scale = 1.0;
};

struct LogisticTerm {
    std::vector<LogisticFeature> features;
    double bias = 0.0;
    double scale = 1.0;
};

// 1-hidden-layer tanh regressor over a subset of the equation's parents.
struct MlpRegressor {
    Matrix w1;  // hidden x inputs
    VecD b1;
    VecD w2;  // hidden
    double b2 = 0.0;
    bool sigmoid_output = false;

    double eval(std::span<const double> inputs) const;
    VecD input_gradient(std::span<const double> inputs) const;
};

struct MlpTerm {
    std::vector<std::size_t> inputs;  // indices into the parent list
    MlpRegressor net;
};

enum class OutputTransform { Identity, ThresholdHalf };
enum class NoisePlacement { AfterTransform, BeforeTransform, InsideLogistic };

struct StructuralEquation {
    std::vector<Parent> parents;
    double intercept = 0.0;
    double time_coeff = 0.0;  // explicit dependence on t (fitted estimators)
    std::vector<AffineTerm> affine;
    std::vector<SquareTerm> squares;
    std::vector<ProductTerm> products;
    std::vector<PositivePartTerm> positive_parts;
    std::optional<LogisticTerm> logistic;
    std::optional<MlpTerm> mlp;
    NoiseSpec noise;
    std::optional<TrendSpec> trend;
    OutputTransform output = OutputTransform::Identity;
    NoisePlacement placement = NoisePlacement::AfterTransform;
    bool freeze_after_t0 = false;

    // Value given realized parent values (aligned with `parents`) and noise u.
    double eval(std::span<const double> parent_values, double t, double u) const;

    // Noise-free structural part f(pa) + trend; only defined for equations
    // that are additive in their noise.
    double structural_part(std::span<const double> parent_values, double t) const;

    // d eval / d parent_values[idx] at the given point (a.e. for kinks).
    double partial(std::size_t idx, std::span<const double> parent_values, double t,
                   double u) const;

    // True when abduction u = x - f(pa) is well defined.
    bool invertible() const;

    double trend_contribution(double t) const;
};

// ---------------------------------------------------------------------------
// Spec, labels, trajectories, interventions
// ---------------------------------------------------------------------------

struct Variable {
    std::string name;
    bool actionable = false;
    bool monotone_nondecreasing = false;
    bool categorical = false;
};

enum class LabelCalibration { None, MeanAbsScore, Standardize };

// P(Y = 1 | x) = sigmoid(scale * (w.x + sum products - center) / normalizer).
struct LabelSpec {
    VecD coeffs;
    std::vector<ProductTerm> products;  // indices are variable indices here
    double scale = 1.0;
    double center = 0.0;
    double normalizer = 1.0;
    LabelCalibration calibration = LabelCalibration::None;

    double raw_score(std::span<const double> state) const;
    double probability(std::span<const double> state) const;
    // Fills center/normalizer from a cross-section of states.
    void calibrate(const Matrix& states);
};

struct EstimatorProvenance {
    long fit_cutoff = 0;
    std::string data_hash;
    std::uint64_t seed = 0;
    VecD residual_variance;  // diagnostic, per fitted variable
};

struct ScmSpec {
    std::vector<Variable> variables;
    std::vector<StructuralEquation> equations;  // one per variable, same order
    std::optional<LabelSpec> label;
    int max_lag = 1;
    std::optional<EstimatorProvenance> provenance;

    std::size_t dim() const { return variables.size(); }
    std::size_t var_index(const std::string& name) const;

    // Fixed within-timestep order over lag-0 edges, ties by declared order.
    std::vector<std::size_t> topological_order() const;
    std::vector<std::vector<std::size_t>> lag0_children() const;

    void validate() const;
};

struct Trajectory {
    Matrix states;           // (t_max + 1) x d, row t holds x^t
    Matrix lag_rows;         // max_lag rows ending at t = -1 (burn-in tail)
    std::vector<int> labels; // -1 where not sampled
    std::uint64_t seed = 0;
};

// Rows t_obs - max_lag .. t_obs of a trajectory, reaching into the burn-in
// tail when t_obs < max_lag; this is the observation window recourse needs.
Matrix history_window(const Trajectory& traj, long t_obs, int max_lag);

enum class InterventionMode { Soft, Hard };

struct Intervention {
    std::vector<std::size_t> targets;  // variable indices, strictly increasing
    VecD theta;                        // offsets (soft) or values (hard)
    InterventionMode mode = InterventionMode::Soft;
    long apply_at = 0;

    void validate(const ScmSpec& scm) const;
};

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

struct SimulationOptions {
    int burn_in = 10;
    bool sample_labels = false;
};

std::vector<Trajectory> sample_trajectory(const ScmSpec& scm, long t_max, std::size_t n,
                                          std::uint64_t seed, SimulationOptions opts = {});

// Variables with no directed lag-0 path from any member of I; members of I
// are excluded from the result.
std::vector<std::size_t> non_descendants(const ScmSpec& scm, const std::vector<std::size_t>& targets);

std::vector<char> descendant_mask(const ScmSpec& scm, const std::vector<std::size_t>& targets);

// Forward rollouts from an observed history (rows ending at absolute time
// t_hist), applying `iv` at iv.apply_at; returns states at iv.apply_at.
std::vector<VecD> interventional_sample(const ScmSpec& scm, const Matrix& history, long t_hist,
                                        const Intervention& iv, std::size_t n, std::uint64_t seed);

// Deterministic counterfactual for invertible SCMs. `window` holds rows
// t_obs - max_lag .. t_obs; the intervention applies at t_obs. When
// `jacobian` is non-null it receives d state / d theta_k (d x |targets|).
VecD abduct_and_counterfactual(const ScmSpec& scm, const Matrix& window, long t_obs,
                               const Intervention& iv, Matrix* jacobian = nullptr);

// Counterfactual under a soft additive shift of every variable; used to map
// uncertainty-ball perturbations through the causal structure.
VecD counterfactual_shift_all(const ScmSpec& scm, const Matrix& window, long t_obs,
                              const VecD& delta);

// n_samples forward rollouts to t_hist + tau with no intervention.
std::vector<VecD> forecast_uncertainty_set(const ScmSpec& scm, const Matrix& history, long t_hist,
                                           long tau, std::size_t n_samples, std::uint64_t seed);

// n independent forward rollouts of `steps` fresh timesteps; each returned
// matrix holds the history rows followed by the simulated rows.
std::vector<Matrix> roll_paths(const ScmSpec& scm, const Matrix& history, long t_hist, long steps,
                               std::size_t n, std::uint64_t seed);

// As above but returning the full simulated paths (history tail + forecast),
// which downstream consumers need for lagged re-evaluation.
std::vector<Matrix> forecast_windows(const ScmSpec& scm, const Matrix& history, long t_hist,
                                     long tau, std::size_t n_samples, std::uint64_t seed);

// Re-evaluates time t_eval of `window` (its last row) under `iv`: intervened
// variables and their lag-0 descendants are re-drawn with noise from `rng`,
// everything else stays pinned at the window's values. When `jacobian` is
// non-null it receives d state / d theta_k for the intervened coordinates.
VecD conditional_reevaluate(const ScmSpec& scm, const Matrix& window, long t_eval,
                            const Intervention& iv, RandomStream& rng,
                            Matrix* jacobian = nullptr);

std::vector<int> sample_labels(const ScmSpec& scm, const Matrix& states, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Serialization (schema-versioned JSON documents)
// ---------------------------------------------------------------------------

json scm_to_json(const ScmSpec& scm);
ScmSpec scm_from_json(const json& doc);

void write_trajectories_csv(const std::string& path, const ScmSpec& scm,
                            const std::vector<Trajectory>& trajectories);

}  // namespace tcr
