#include "tcr/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace tcr {

void TrainConfig::validate() const {
    if (batch_size == 0 || epochs == 0 || learning_rate <= 0.0)
        throw std::invalid_argument("train config fields must be positive");
}

// ---------------------------------------------------------------------------
// MlpClassifier
// ---------------------------------------------------------------------------

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, RandomStream& rng) {
    Matrix m(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& v : m.data) v = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
}

}  // namespace

MlpClassifier::MlpClassifier(std::size_t inputs, std::size_t hidden1, std::size_t hidden2,
                             std::uint64_t init_seed) {
    RandomStream rng(mix_seed(init_seed, 0x4d4c50ULL));
    w1_ = glorot(hidden1, inputs, rng);
    w2_ = glorot(hidden2, hidden1, rng);
    VecD w3_row(hidden2);
    const double limit = std::sqrt(6.0 / static_cast<double>(hidden2 + 1));
    for (auto& v : w3_row) v = (2.0 * rng.uniform() - 1.0) * limit;
    w3_ = std::move(w3_row);
    b1_.assign(hidden1, 0.0);
    b2_.assign(hidden2, 0.0);
    b3_ = 0.0;
}

namespace {

struct Forward {
    VecD a1, a2;  // logistic activations
    double z3 = 0.0;
    double out = 0.0;
};

Forward forward_pass(const Matrix& w1, const VecD& b1, const Matrix& w2, const VecD& b2,
                     const VecD& w3, double b3, std::span<const double> x) {
    Forward f;
    f.a1.resize(w1.rows);
    for (std::size_t h = 0; h < w1.rows; ++h) {
        double z = b1[h];
        const auto row = w1.row(h);
        for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * x[j];
        f.a1[h] = std::tanh(z);
    }
    f.a2.resize(w2.rows);
    for (std::size_t h = 0; h < w2.rows; ++h) {
        double z = b2[h];
        const auto row = w2.row(h);
        for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * f.a1[j];
        f.a2[h] = std::tanh(z);
    }
    f.z3 = b3 + dot(w3, f.a2);
    f.out = sigmoid(f.z3);
    return f;
}

}  // namespace

VecD MlpClassifier::standardize(std::span<const double> x) const {
    VecD z(x.begin(), x.end());
    if (!input_mean_.empty()) {
        for (std::size_t j = 0; j < z.size(); ++j)
            z[j] = (z[j] - input_mean_[j]) / input_scale_[j];
    }
    return z;
}

double MlpClassifier::predict(std::span<const double> x) const {
    if (x.size() != dim()) throw std::invalid_argument("predict: input dimension mismatch");
    const VecD z = standardize(x);
    return forward_pass(w1_, b1_, w2_, b2_, w3_, b3_, z).out;
}

VecD MlpClassifier::input_gradient(std::span<const double> x) const {
    if (x.size() != dim()) throw std::invalid_argument("input_gradient: dimension mismatch");
    const VecD z = standardize(x);
    const Forward f = forward_pass(w1_, b1_, w2_, b2_, w3_, b3_, z);
    const double d_out = f.out * (1.0 - f.out);
    VecD d_a2(w2_.rows);
    for (std::size_t h = 0; h < w2_.rows; ++h) d_a2[h] = d_out * w3_[h];
    VecD d_a1(w1_.rows, 0.0);
    for (std::size_t h = 0; h < w2_.rows; ++h) {
        const double dz = d_a2[h] * (1.0 - f.a2[h] * f.a2[h]);
        const auto row = w2_.row(h);
        for (std::size_t j = 0; j < row.size(); ++j) d_a1[j] += dz * row[j];
    }
    VecD grad(dim(), 0.0);
    for (std::size_t h = 0; h < w1_.rows; ++h) {
        const double dz = d_a1[h] * (1.0 - f.a1[h] * f.a1[h]);
        const auto row = w1_.row(h);
        for (std::size_t j = 0; j < row.size(); ++j) grad[j] += dz * row[j];
    }
    if (!input_mean_.empty()) {
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] /= input_scale_[j];
    }
    return grad;
}

struct MlpTrainer {
    static MlpTrainResult run(const Matrix& states, const std::vector<int>& labels,
                              const TrainConfig& cfg, std::size_t hidden1, std::size_t hidden2) {
        cfg.validate();
        if (states.rows != labels.size()) throw std::invalid_argument("states/labels size mismatch");
        if (states.rows == 0) throw std::invalid_argument("empty training data");
        const bool has_pos = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 1; });
        const bool has_neg = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
        if (!has_pos || !has_neg)
            throw std::invalid_argument("degenerate training data: a single class is present");

        MlpClassifier net(states.cols, hidden1, hidden2, cfg.seed);
        // Standardization statistics frozen from the training set.
        net.input_mean_.assign(states.cols, 0.0);
        net.input_scale_.assign(states.cols, 1.0);
        for (std::size_t j = 0; j < states.cols; ++j) {
            VecD column(states.rows);
            for (std::size_t r = 0; r < states.rows; ++r) column[r] = states(r, j);
            net.input_mean_[j] = mean(column);
            const double sd = stddev(column);
            net.input_scale_[j] = sd > 1e-12 ? sd : 1.0;
        }
        Matrix scaled = states;
        for (std::size_t r = 0; r < scaled.rows; ++r)
            for (std::size_t j = 0; j < scaled.cols; ++j)
                scaled(r, j) = (scaled(r, j) - net.input_mean_[j]) / net.input_scale_[j];

        RandomStream shuffle_rng(mix_seed(cfg.seed, 0x53484655ULL));
        std::vector<std::size_t> idx(states.rows);
        std::iota(idx.begin(), idx.end(), 0);

        MlpTrainResult result;
        const double lr = cfg.learning_rate;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            // Fisher-Yates with our deterministic stream.
            for (std::size_t i = idx.size(); i > 1; --i)
                std::swap(idx[i - 1], idx[shuffle_rng.index(i)]);

            double epoch_loss = 0.0;
            for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(start + cfg.batch_size, idx.size());
                const double inv_batch = 1.0 / static_cast<double>(end - start);

                Matrix g_w1(net.w1_.rows, net.w1_.cols), g_w2(net.w2_.rows, net.w2_.cols);
                VecD g_b1(net.b1_.size(), 0.0), g_b2(net.b2_.size(), 0.0);
                VecD g_w3(net.w3_.size(), 0.0);
                double g_b3 = 0.0;

                for (std::size_t s = start; s < end; ++s) {
                    const auto x = scaled.row(idx[s]);
                    const double y = static_cast<double>(labels[idx[s]]);
                    const Forward f = forward_pass(net.w1_, net.b1_, net.w2_, net.b2_, net.w3_,
                                                   net.b3_, x);
                    const double p = std::clamp(f.out, 1e-12, 1.0 - 1e-12);
                    epoch_loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
                    const double dz3 = f.out - y;  // BCE + sigmoid
                    g_b3 += dz3;
                    VecD d_a2(net.w2_.rows);
                    for (std::size_t h = 0; h < net.w2_.rows; ++h) {
                        g_w3[h] += dz3 * f.a2[h];
                        d_a2[h] = dz3 * net.w3_[h];
                    }
                    VecD d_a1(net.w1_.rows, 0.0);
                    for (std::size_t h = 0; h < net.w2_.rows; ++h) {
                        const double dz = d_a2[h] * (1.0 - f.a2[h] * f.a2[h]);
                        g_b2[h] += dz;
                        const auto row = net.w2_.row(h);
                        for (std::size_t j = 0; j < row.size(); ++j) {
                            g_w2(h, j) += dz * f.a1[j];
                            d_a1[j] += dz * row[j];
                        }
                    }
                    for (std::size_t h = 0; h < net.w1_.rows; ++h) {
                        const double dz = d_a1[h] * (1.0 - f.a1[h] * f.a1[h]);
                        g_b1[h] += dz;
                        for (std::size_t j = 0; j < net.w1_.cols; ++j)
                            g_w1(h, j) += dz * x[j];
                    }
                }

                const double step = lr * inv_batch;
                for (std::size_t i = 0; i < net.w1_.data.size(); ++i)
                    net.w1_.data[i] -= step * g_w1.data[i];
                for (std::size_t i = 0; i < net.w2_.data.size(); ++i)
                    net.w2_.data[i] -= step * g_w2.data[i];
                for (std::size_t i = 0; i < net.b1_.size(); ++i) net.b1_[i] -= step * g_b1[i];
                for (std::size_t i = 0; i < net.b2_.size(); ++i) net.b2_[i] -= step * g_b2[i];
                for (std::size_t i = 0; i < net.w3_.size(); ++i) net.w3_[i] -= step * g_w3[i];
                net.b3_ -= step * g_b3;
            }
            result.epoch_loss.push_back(epoch_loss / static_cast<double>(idx.size()));
        }
        result.model = std::move(net);
        return result;
    }
};

MlpTrainResult train_mlp(const Matrix& states, const std::vector<int>& labels,
                         const TrainConfig& cfg, std::size_t hidden1, std::size_t hidden2) {
    return MlpTrainer::run(states, labels, cfg, hidden1, hidden2);
}

double accuracy(const Predictor& h, const Matrix& states, const std::vector<int>& labels) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < states.rows; ++r) {
        const int pred = h.predict(states.row(r)) >= 0.5 ? 1 : 0;
        if (pred == labels[r]) ++correct;
    }
    return states.rows ? static_cast<double>(correct) / static_cast<double>(states.rows) : 0.0;
}

json MlpClassifier::to_json() const {
    json doc;
    doc["schema_version"] = 1;
    doc["kind"] = "mlp-classifier";
    doc["layers"] = {w1_.cols, w1_.rows, w2_.rows, 1};
    json weights;
    auto mat = [](const Matrix& m) {
        json rows = json::array();
        for (std::size_t r = 0; r < m.rows; ++r) {
            json row = json::array();
            for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    weights["w1"] = mat(w1_);
    weights["b1"] = b1_;
    weights["w2"] = mat(w2_);
    weights["b2"] = b2_;
    weights["w3"] = w3_;
    weights["b3"] = b3_;
    doc["weights"] = weights;
    if (!input_mean_.empty()) {
        doc["input_mean"] = input_mean_;
        doc["input_scale"] = input_scale_;
    }
    return doc;
}

MlpClassifier MlpClassifier::from_json(const json& doc) {
    if (doc.value("schema_version", 0) != 1 || doc.value("kind", "") != "mlp-classifier")
        throw std::invalid_argument("not an mlp-classifier document");
    MlpClassifier net;
    const auto& w = doc.at("weights");
    auto mat = [](const json& rows) {
        Matrix m;
        m.rows = rows.size();
        m.cols = m.rows ? rows[0].size() : 0;
        for (const auto& row : rows)
            for (const auto& v : row) m.data.push_back(v.get<double>());
        return m;
    };
    net.w1_ = mat(w.at("w1"));
    net.b1_ = w.at("b1").get<VecD>();
    net.w2_ = mat(w.at("w2"));
    net.b2_ = w.at("b2").get<VecD>();
    net.w3_ = w.at("w3").get<VecD>();
    net.b3_ = w.at("b3");
    if (doc.contains("input_mean")) {
        net.input_mean_ = doc.at("input_mean").get<VecD>();
        net.input_scale_ = doc.at("input_scale").get<VecD>();
    }
    return net;
}

// ---------------------------------------------------------------------------
// BoundedLinearClassifier
// ---------------------------------------------------------------------------

BoundedLinearClassifier::BoundedLinearClassifier(VecD beta, double bound)
    : beta_(std::move(beta)), bound_(bound) {
    for (double b : beta_)
        if (std::fabs(b) > bound_ + 1e-12)
            throw std::invalid_argument("bounded linear weights violate the box constraint");
}

VecD BoundedLinearClassifier::input_gradient(std::span<const double> x) const {
    if (x.size() != beta_.size()) throw std::invalid_argument("input_gradient: dimension mismatch");
    const double d = sigmoid_derivative(score(x));
    VecD g(beta_.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = d * beta_[i];
    return g;
}

json BoundedLinearClassifier::to_json() const {
    json doc;
    doc["schema_version"] = 1;
    doc["kind"] = "bounded-linear";
    doc["beta"] = beta_;
    doc["bound"] = bound_;
    return doc;
}

BoundedLinearClassifier BoundedLinearClassifier::from_json(const json& doc) {
    if (doc.value("schema_version", 0) != 1 || doc.value("kind", "") != "bounded-linear")
        throw std::invalid_argument("not a bounded-linear document");
    return BoundedLinearClassifier(doc.at("beta").get<VecD>(), doc.at("bound"));
}

BoundedLinearClassifier fit_bounded_linear(const Matrix& design, const VecD& target, double bound,
                                           BoundedLsOptions opts) {
    if (bound <= 0.0) throw std::invalid_argument("bound must be > 0");
    if (design.rows == 0) throw std::invalid_argument("empty data");
    if (design.rows != target.size()) throw std::invalid_argument("design/target size mismatch");
    const std::size_t n = design.rows, p = design.cols;

    // Objective (1/n)||X b - y||^2 has gradient Lipschitz constant
    // (2/n) lambda_max <= (2/n) trace(X^T X); step = 1/L guarantees descent.
    double trace = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (double v : design.row(r)) trace += v * v;
    const double step = static_cast<double>(n) / std::max(2.0 * trace, 1e-12);

    VecD beta(p, 0.0);
    VecD grad(p);
    double prev_obj = std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double obj = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = design.row(r);
            const double resid = dot(row, beta) - target[r];
            obj += resid * resid;
            for (std::size_t j = 0; j < p; ++j)
                grad[j] += 2.0 * resid * row[j] / static_cast<double>(n);
        }
        obj /= static_cast<double>(n);
        double move = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double next = std::clamp(beta[j] - step * grad[j], -bound, bound);
            move = std::max(move, std::fabs(next - beta[j]));
            beta[j] = next;
        }
        if (move < opts.tol && obj <= prev_obj + 1e-15) break;
        prev_obj = obj;
    }
    return BoundedLinearClassifier(std::move(beta), bound);
}

void save_predictor_json(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << doc.dump(2) << '\n';
}

json load_predictor_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    json doc;
    in >> doc;
    return doc;
}

}  // namespace tcr
