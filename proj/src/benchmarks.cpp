#include "tcr/benchmarks.hpp"

#include <cmath>

namespace tcr::benchmarks {

void BenchmarkId::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("benchmark alpha must be in [0, 1]");
}

Dataset dataset_from_string(const std::string& name) {
    if (name == "linear-anm") return Dataset::LinearAnm;
    if (name == "nonlinear-anm") return Dataset::NonlinearAnm;
    if (name == "adult") return Dataset::Adult;
    if (name == "compas") return Dataset::Compas;
    if (name == "loan") return Dataset::Loan;
    throw ValidationError("unknown benchmark id '" + name + "'");
}

std::string dataset_to_string(Dataset d) {
    switch (d) {
        case Dataset::LinearAnm: return "linear-anm";
        case Dataset::NonlinearAnm: return "nonlinear-anm";
        case Dataset::Adult: return "adult";
        case Dataset::Compas: return "compas";
        case Dataset::Loan: return "loan";
    }
    return "?";
}

TrendKind trend_kind_from_string(const std::string& name) {
    if (name == "none") return TrendKind::None;
    if (name == "linear") return TrendKind::Linear;
    if (name == "seasonal") return TrendKind::Seasonal;
    if (name == "linear+seasonal") return TrendKind::LinearSeasonal;
    throw ValidationError("unknown trend kind '" + name + "'");
}

std::string trend_kind_to_string(TrendKind k) {
    switch (k) {
        case TrendKind::None: return "none";
        case TrendKind::Linear: return "linear";
        case TrendKind::Seasonal: return "seasonal";
        case TrendKind::LinearSeasonal: return "linear+seasonal";
    }
    return "?";
}

namespace {

TrendSpec make_trend(const BenchmarkId& id, double beta_l, double beta_s, int sign) {
    TrendSpec t;
    t.alpha = id.alpha;
    t.sign = sign;
    switch (id.trend) {
        case TrendKind::None:
            t.alpha = 0.0;
            break;
        case TrendKind::Linear:
            t.beta_linear = beta_l;
            break;
        case TrendKind::Seasonal:
            t.beta_seasonal = beta_s;
            break;
        case TrendKind::LinearSeasonal:
            t.beta_linear = beta_l;
            t.beta_seasonal = beta_s;
            break;
    }
    return t;
}

ScmSpec build_linear_anm(const BenchmarkId& id) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"x1", true, false, false}, {"x2", true, false, false},
                     {"x3", true, false, false}};

    StructuralEquation x1;
    x1.parents = {{0, 1}};
    x1.affine = {{0, 0.5}};
    x1.noise = NoiseSpec::mixture({{0.5, -1.0, 1.5}, {0.5, 1.0, 1.0}});

    StructuralEquation x2;
    x2.parents = {{1, 1}, {0, 0}};
    x2.affine = {{0, 0.5}, {1, -0.25}};
    x2.noise = NoiseSpec::gaussian(0.0, 0.1);

    StructuralEquation x3;
    x3.parents = {{2, 1}, {0, 0}, {1, 0}};
    x3.affine = {{0, 0.5}, {1, 0.05}, {2, 0.25}};
    x3.noise = NoiseSpec::gaussian(0.0, 1.0);
    x3.trend = make_trend(id, 1.0, 1.5, -1);

    scm.equations = {x1, x2, x3};
    LabelSpec label;
    label.coeffs = {1.0, 1.0, 1.0};
    label.scale = 2.5;
    label.calibration = LabelCalibration::MeanAbsScore;
    scm.label = label;
    return scm;
}

ScmSpec build_nonlinear_anm(const BenchmarkId& id) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"x1", true, false, false}, {"x2", true, false, false},
                     {"x3", true, false, false}};

    StructuralEquation x1;
    x1.parents = {{0, 1}};
    x1.affine = {{0, 0.5}};
    x1.noise = NoiseSpec::mixture({{0.5, -2.0, 1.5}, {0.5, 1.0, 1.0}});

    StructuralEquation x2;  // 0.5 x2' - 1 + 3 sigmoid(2 x1) + u
    x2.parents = {{1, 1}, {0, 0}};
    x2.affine = {{0, 0.5}};
    x2.intercept = -1.0;
    x2.logistic = LogisticTerm{{{1, 2.0, false, 1.0}}, 0.0, 3.0};
    x2.noise = NoiseSpec::gaussian(0.0, 0.1);

    StructuralEquation x3;  // 0.5 x3' + 0.05 x1 + 0.25 x2^2 - m(t) + u
    x3.parents = {{2, 1}, {0, 0}, {1, 0}};
    x3.affine = {{0, 0.5}, {1, 0.05}};
    x3.squares = {{2, 0.25, 0.0}};
    x3.noise = NoiseSpec::gaussian(0.0, 1.0);
    x3.trend = make_trend(id, 2.0, 5.0, -1);

    scm.equations = {x1, x2, x3};
    LabelSpec label;
    label.coeffs = {1.0, 1.0, 1.0};
    label.scale = 2.5;
    label.calibration = LabelCalibration::MeanAbsScore;
    scm.label = label;
    return scm;
}

// Samples the marginals used when refitting the realistic structural
// equations, then fits a fresh 1-hidden-layer regressor per function.
struct FreshFit {
    Matrix inputs;
    VecD targets;
};

MlpTerm fitted_term(std::vector<std::size_t> parent_refs, const FreshFit& data, bool sigmoid_out,
                    std::uint64_t seed) {
    MlpTerm term;
    term.inputs = std::move(parent_refs);
    term.net = fit_mlp_regressor(data.inputs, data.targets, 8, 400, 0.05, seed, sigmoid_out);
    return term;
}

ScmSpec build_adult(const BenchmarkId& id) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"sex", false, false, true},     {"age", false, false, false},
                     {"us_resident", false, false, true}, {"married", false, false, true},
                     {"education", true, false, false},   {"hours", true, false, false}};

    StructuralEquation sex;
    sex.noise = NoiseSpec::bernoulli(0.9);
    sex.freeze_after_t0 = true;

    StructuralEquation age;
    age.noise = NoiseSpec::gaussian(0.0, 1.0);
    age.freeze_after_t0 = true;

    StructuralEquation us;
    us.noise = NoiseSpec::bernoulli(0.9);
    us.freeze_after_t0 = true;

    // Fresh fits replace the pretrained structural networks: parents drawn
    // from their marginals, targets from fixed reference relations.
    const std::size_t n_fit = 512;
    RandomStream fit_rng(mix_seed(0x41445554ULL, 1));
    Matrix base(n_fit, 4);  // S, A, US, M columns
    for (std::size_t r = 0; r < n_fit; ++r) {
        const double s = fit_rng.bernoulli(0.9) ? 1.0 : 0.0;
        const double a = fit_rng.normal();
        const double u = fit_rng.bernoulli(0.9) ? 1.0 : 0.0;
        const double m_score = 0.9 * a + 0.7 * s + 0.4 * u - 0.6;
        base(r, 0) = s;
        base(r, 1) = a;
        base(r, 2) = u;
        base(r, 3) = m_score > 0.0 ? 1.0 : 0.0;
    }
    auto slice = [&](std::size_t cols) {
        Matrix m(n_fit, cols);
        for (std::size_t r = 0; r < n_fit; ++r)
            for (std::size_t c = 0; c < cols; ++c) m(r, c) = base(r, c);
        return m;
    };
    auto noisy = [&](auto&& fn) {
        VecD y(n_fit);
        for (std::size_t r = 0; r < n_fit; ++r) y[r] = fn(base.row(r)) + 0.05 * fit_rng.normal();
        return y;
    };

    StructuralEquation married;  // 1{ sigmoid(f_M(S, A, US)) > 1/2 }
    married.parents = {{0, 0}, {1, 0}, {2, 0}};
    married.output = OutputTransform::ThresholdHalf;
    married.noise = NoiseSpec::point_mass(0.0);
    {
        FreshFit fm{slice(3), noisy([](std::span<const double> x) {
                        return 0.9 * x[1] + 0.7 * x[0] + 0.4 * x[2] - 0.6;
                    })};
        married.mlp = fitted_term({0, 1, 2}, fm, true, mix_seed(0x41445554ULL, 2));
    }

    StructuralEquation education;  // 0.5 E' + f_E(S, A, US, M) + u
    education.parents = {{4, 1}, {0, 0}, {1, 0}, {2, 0}, {3, 0}};
    education.affine = {{0, 0.5}};
    education.noise = NoiseSpec::gaussian(0.0, 1.0);
    {
        FreshFit fe{slice(4), noisy([](std::span<const double> x) {
                        return 0.3 * std::tanh(x[1]) + 0.25 * x[2] + 0.2 * x[3] - 0.1 * x[0];
                    })};
        education.mlp = fitted_term({1, 2, 3, 4}, fe, false, mix_seed(0x41445554ULL, 3));
    }

    StructuralEquation hours;  // 0.5 H' + f_H(S, A, US, M) - m(t) + u
    hours.parents = {{5, 1}, {0, 0}, {1, 0}, {2, 0}, {3, 0}};
    hours.affine = {{0, 0.5}};
    hours.noise = NoiseSpec::gaussian(0.0, 1.0);
    hours.trend = make_trend(id, 1.0, 1.0, -1);
    {
        FreshFit fh{slice(4), noisy([](std::span<const double> x) {
                        return 0.3 * std::tanh(x[1]) + 0.5 * x[3] + 0.3 * x[0] - 0.2;
                    })};
        hours.mlp = fitted_term({1, 2, 3, 4}, fh, false, mix_seed(0x41445554ULL, 4));
    }

    scm.equations = {sex, age, us, married, education, hours};
    LabelSpec label;
    label.coeffs = {0.0, 0.2, 0.0, 0.1, 0.7, 0.7};
    label.scale = 2.5;
    label.calibration = LabelCalibration::Standardize;
    scm.label = label;
    return scm;
}

ScmSpec build_compas(const BenchmarkId& id) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"sex", false, false, true},
                     {"age", false, false, false},
                     {"caucasian", false, false, true},
                     {"priors", true, false, false}};

    StructuralEquation sex;
    sex.noise = NoiseSpec::bernoulli(0.8);
    sex.freeze_after_t0 = true;

    StructuralEquation age;
    age.noise = NoiseSpec::poisson(1.0);
    age.freeze_after_t0 = true;

    const std::size_t n_fit = 512;
    RandomStream fit_rng(mix_seed(0x434f4d50ULL, 1));
    Matrix base(n_fit, 3);  // S, A, C
    for (std::size_t r = 0; r < n_fit; ++r) {
        const double s = fit_rng.bernoulli(0.8) ? 1.0 : 0.0;
        const double a = static_cast<double>(fit_rng.poisson(1.0));
        const double c_score = 0.4 * s - 0.2 * a + 0.1;
        base(r, 0) = s;
        base(r, 1) = a;
        base(r, 2) = sigmoid(c_score) + fit_rng.normal() > 0.5 ? 1.0 : 0.0;
    }

    StructuralEquation caucasian;  // 1{ sigmoid(f_C(S, A)) + u > 1/2 }, frozen after t=0
    caucasian.parents = {{0, 0}, {1, 0}};
    caucasian.output = OutputTransform::ThresholdHalf;
    caucasian.placement = NoisePlacement::BeforeTransform;
    caucasian.noise = NoiseSpec::gaussian(0.0, 1.0);
    caucasian.freeze_after_t0 = true;
    {
        Matrix in(n_fit, 2);
        VecD y(n_fit);
        for (std::size_t r = 0; r < n_fit; ++r) {
            in(r, 0) = base(r, 0);
            in(r, 1) = base(r, 1);
            y[r] = 0.4 * base(r, 0) - 0.2 * base(r, 1) + 0.1 + 0.05 * fit_rng.normal();
        }
        caucasian.mlp = fitted_term({0, 1}, FreshFit{std::move(in), std::move(y)}, true,
                                    mix_seed(0x434f4d50ULL, 2));
    }

    StructuralEquation priors;  // 0.5 P' + f_P(S, A, C) + m(t) + u
    priors.parents = {{3, 1}, {0, 0}, {1, 0}, {2, 0}};
    priors.affine = {{0, 0.5}};
    priors.noise = NoiseSpec::gaussian(0.0, 1.0);
    priors.trend = make_trend(id, 0.3, 1.0, +1);
    {
        Matrix in(n_fit, 3);
        VecD y(n_fit);
        for (std::size_t r = 0; r < n_fit; ++r) {
            in(r, 0) = base(r, 0);
            in(r, 1) = base(r, 1);
            in(r, 2) = base(r, 2);
            y[r] = 0.5 * std::tanh(base(r, 1)) + 0.6 * base(r, 0) - 0.4 * base(r, 2) - 0.3 +
                   0.05 * fit_rng.normal();
        }
        priors.mlp = fitted_term({1, 2, 3}, FreshFit{std::move(in), std::move(y)}, false,
                                 mix_seed(0x434f4d50ULL, 3));
    }

    scm.equations = {sex, age, caucasian, priors};
    LabelSpec label;
    label.coeffs = {-0.1, -0.3, 0.1, -0.9};
    label.scale = 2.5;
    label.calibration = LabelCalibration::Standardize;
    scm.label = label;
    return scm;
}

ScmSpec build_loan(const BenchmarkId& id) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"gender", false, false, true}, {"age", false, false, false},
                     {"education", false, false, false}, {"loan_amount", false, false, false},
                     {"loan_duration", false, false, false}, {"income", true, false, false},
                     {"savings", true, false, false}};

    StructuralEquation gender;
    gender.noise = NoiseSpec::bernoulli(0.5);
    gender.freeze_after_t0 = true;

    StructuralEquation age;  // 0.5 A' - 35 + Gamma(10, 3.5)
    age.parents = {{1, 1}};
    age.affine = {{0, 0.5}};
    age.intercept = -35.0;
    age.noise = NoiseSpec::gamma_dist(10.0, 3.5);

    StructuralEquation education;  // 0.5 E' - 0.5 + sigmoid(-1 + 0.5 G + sigmoid(0.1 A) + u)
    education.parents = {{2, 1}, {0, 0}, {1, 0}};
    education.affine = {{0, 0.5}};
    education.intercept = -0.5;
    education.logistic = LogisticTerm{{{1, 0.5, false, 1.0}, {2, 1.0, true, 0.1}}, -1.0, 1.0};
    education.placement = NoisePlacement::InsideLogistic;
    education.noise = NoiseSpec::gaussian(0.0, std::sqrt(0.25));

    StructuralEquation amount;  // 0.5 L' + 1 + 0.01 (A-5)(5-A) + G + u
    amount.parents = {{3, 1}, {1, 0}, {0, 0}};
    amount.affine = {{0, 0.5}, {2, 1.0}};
    amount.intercept = 1.0;
    amount.squares = {{1, -0.01, 5.0}};
    amount.noise = NoiseSpec::gaussian(0.0, 2.0);

    StructuralEquation duration;  // 0.5 D' - 1 + 0.1 A + 2 G + L + u
    duration.parents = {{4, 1}, {1, 0}, {0, 0}, {3, 0}};
    duration.affine = {{0, 0.5}, {1, 0.1}, {2, 2.0}, {3, 1.0}};
    duration.intercept = -1.0;
    duration.noise = NoiseSpec::gaussian(0.0, 3.0);

    StructuralEquation income;  // 0.5 I' - 4 + 0.1 (A+35) + 2 G + G E + u - m(t)
    income.parents = {{5, 1}, {1, 0}, {0, 0}, {2, 0}};
    income.affine = {{0, 0.5}, {1, 0.1}, {2, 2.0}};
    income.intercept = -4.0 + 3.5;
    income.products = {{2, 3, 1.0}};
    income.noise = NoiseSpec::gaussian(0.0, 2.0);
    income.trend = make_trend(id, 0.5, 5.0, -1);

    StructuralEquation savings;  // 0.5 S' - 4 + 1.5 * 1{I > 0} I + u
    savings.parents = {{6, 1}, {5, 0}};
    savings.affine = {{0, 0.5}};
    savings.intercept = -4.0;
    savings.positive_parts = {{1, 1.5}};
    savings.noise = NoiseSpec::gaussian(0.0, 5.0);

    scm.equations = {gender, age, education, amount, duration, income, savings};
    LabelSpec label;  // Bernoulli(sigmoid(0.3 (-L - D + I + S + I S)))
    label.coeffs = {0.0, 0.0, 0.0, -1.0, -1.0, 1.0, 1.0};
    label.products = {{5, 6, 1.0}};
    label.scale = 0.3;
    scm.label = label;
    return scm;
}

}  // namespace

ScmSpec build(const BenchmarkId& id) {
    id.validate();
    ScmSpec scm;
    switch (id.dataset) {
        case Dataset::LinearAnm: scm = build_linear_anm(id); break;
        case Dataset::NonlinearAnm: scm = build_nonlinear_anm(id); break;
        case Dataset::Adult: scm = build_adult(id); break;
        case Dataset::Compas: scm = build_compas(id); break;
        case Dataset::Loan: scm = build_loan(id); break;
    }
    scm.validate();
    return scm;
}

std::vector<int> label_sampler(const ScmSpec& scm, const Matrix& states, std::uint64_t seed) {
    if (!scm.label) throw ValidationError("benchmark has no label function");
    if (states.cols != scm.dim()) throw ValidationError("mismatched state dimensionality");
    ScmSpec calibrated = scm;
    calibrated.label->calibrate(states);
    return sample_labels(calibrated, states, seed);
}

ScmSpec override_noise_with_gaussian(ScmSpec scm, double sigma) {
    if (sigma < 0.0) throw ValidationError("sigma must be >= 0");
    for (auto& eq : scm.equations) {
        eq.noise = NoiseSpec::gaussian(0.0, sigma);
        if (eq.placement == NoisePlacement::BeforeTransform) eq.placement = NoisePlacement::AfterTransform;
    }
    return scm;
}

MlpRegressor fit_mlp_regressor(const Matrix& inputs, const VecD& targets, std::size_t hidden,
                               std::size_t iters, double learning_rate, std::uint64_t seed,
                               bool sigmoid_output) {
    if (inputs.rows != targets.size() || inputs.rows == 0)
        throw std::invalid_argument("fit_mlp_regressor: bad data shapes");
    const std::size_t n = inputs.rows, in_dim = inputs.cols;
    MlpRegressor net;
    net.sigmoid_output = sigmoid_output;
    RandomStream rng(mix_seed(seed, 0x524547ULL));
    net.w1 = Matrix(hidden, in_dim);
    const double limit = std::sqrt(6.0 / static_cast<double>(hidden + in_dim));
    for (auto& v : net.w1.data) v = (2.0 * rng.uniform() - 1.0) * limit;
    net.b1.assign(hidden, 0.0);
    net.w2.assign(hidden, 0.0);
    for (auto& v : net.w2) v = (2.0 * rng.uniform() - 1.0) * limit;
    net.b2 = 0.0;

    // Full-batch Adam on MSE; fixed iteration count keeps builds deterministic.
    const double b1m = 0.9, b2m = 0.999, eps = 1e-8;
    std::vector<double> m(hidden * in_dim + 2 * hidden + 1, 0.0), v(m.size(), 0.0);
    for (std::size_t it = 1; it <= iters; ++it) {
        Matrix g_w1(hidden, in_dim);
        VecD g_b1(hidden, 0.0), g_w2(hidden, 0.0);
        double g_b2 = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const auto x = inputs.row(r);
            double out = net.b2;
            VecD act(hidden);
            for (std::size_t h = 0; h < hidden; ++h) {
                double z = net.b1[h];
                for (std::size_t j = 0; j < in_dim; ++j) z += net.w1(h, j) * x[j];
                act[h] = std::tanh(z);
                out += net.w2[h] * act[h];
            }
            double pred = out, outer = 1.0;
            if (sigmoid_output) {
                pred = sigmoid(out);
                outer = pred * (1.0 - pred);
            }
            const double d_out = 2.0 * (pred - targets[r]) * outer / static_cast<double>(n);
            g_b2 += d_out;
            for (std::size_t h = 0; h < hidden; ++h) {
                g_w2[h] += d_out * act[h];
                const double dz = d_out * net.w2[h] * (1.0 - act[h] * act[h]);
                g_b1[h] += dz;
                for (std::size_t j = 0; j < in_dim; ++j) g_w1(h, j) += dz * x[j];
            }
        }
        std::size_t k = 0;
        auto adam = [&](double& param, double grad) {
            m[k] = b1m * m[k] + (1.0 - b1m) * grad;
            v[k] = b2m * v[k] + (1.0 - b2m) * grad * grad;
            const double mh = m[k] / (1.0 - std::pow(b1m, static_cast<double>(it)));
            const double vh = v[k] / (1.0 - std::pow(b2m, static_cast<double>(it)));
            param -= learning_rate * mh / (std::sqrt(vh) + eps);
            ++k;
        };
        for (std::size_t i = 0; i < net.w1.data.size(); ++i) adam(net.w1.data[i], g_w1.data[i]);
        for (std::size_t h = 0; h < hidden; ++h) adam(net.b1[h], g_b1[h]);
        for (std::size_t h = 0; h < hidden; ++h) adam(net.w2[h], g_w2[h]);
        adam(net.b2, g_b2);
    }
    return net;
}

ScmSpec build_ar1_process(double ar, double c, double mu_m, double mu_x, double sd_m,
                          double sd_x) {
    ScmSpec scm;
    scm.max_lag = 1;
    scm.variables = {{"x", true, false, false}};
    StructuralEquation eq;
    eq.parents = {{0, 1}};
    eq.affine = {{0, ar}};
    eq.noise = NoiseSpec::gaussian(mu_m + mu_x, std::sqrt(sd_m * sd_m + sd_x * sd_x));
    TrendSpec trend;
    trend.custom = CustomTrend::NegativeLinear;
    trend.linear_rate = c;
    trend.sign = 1;
    eq.trend = trend;
    scm.equations = {eq};
    scm.validate();
    return scm;
}

}  // namespace tcr::benchmarks
