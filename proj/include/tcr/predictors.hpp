#pragma once

#include <memory>
#include <span>

#include "tcr/scm.hpp"

namespace tcr {

// Classifier interface used by the recourse engines: a probability in (0, 1)
// plus its exact input gradient.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual double predict(std::span<const double> x) const = 0;
    virtual VecD input_gradient(std::span<const double> x) const = 0;
    virtual std::size_t dim() const = 0;
};

struct TrainConfig {
    std::size_t batch_size = 100;
    std::size_t epochs = 15;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;

    void validate() const;
};

// Three-layer MLP (d -> h1 -> h2 -> 1) with tanh hidden units and a
// sigmoid output, trained by SGD on binary cross-entropy. Inputs are
// standardized with statistics frozen from the training set, so feature
// scales cannot saturate the hidden units.
class MlpClassifier : public Predictor {
public:
    MlpClassifier() = default;
    MlpClassifier(std::size_t inputs, std::size_t hidden1, std::size_t hidden2,
                  std::uint64_t init_seed);

    double predict(std::span<const double> x) const override;
    VecD input_gradient(std::span<const double> x) const override;
    std::size_t dim() const override { return w1_.cols; }

    json to_json() const;
    static MlpClassifier from_json(const json& doc);

    friend struct MlpTrainer;

private:
    VecD standardize(std::span<const double> x) const;

    Matrix w1_, w2_;  // hidden1 x d, hidden2 x hidden1
    VecD b1_, b2_;
    VecD w3_;  // hidden2
    double b3_ = 0.0;
    VecD input_mean_, input_scale_;  // empty = identity
};

struct MlpTrainResult {
    MlpClassifier model;
    VecD epoch_loss;  // mean training BCE per epoch
};

// Throws std::invalid_argument on single-class data.
MlpTrainResult train_mlp(const Matrix& states, const std::vector<int>& labels,
                         const TrainConfig& cfg, std::size_t hidden1 = 50,
                         std::size_t hidden2 = 50);

double accuracy(const Predictor& h, const Matrix& states, const std::vector<int>& labels);

// Linear scorer with box-bounded weights; predict() maps the score through a
// sigmoid so the 1/2 recourse threshold matches score >= 0.
class BoundedLinearClassifier : public Predictor {
public:
    BoundedLinearClassifier() = default;
    BoundedLinearClassifier(VecD beta, double bound);

    double score(std::span<const double> x) const {
        if (x.size() != beta_.size()) throw std::invalid_argument("score: dimension mismatch");
        return dot(beta_, x);
    }
    double predict(std::span<const double> x) const override { return sigmoid(score(x)); }
    VecD input_gradient(std::span<const double> x) const override;
    VecD score_gradient() const { return beta_; }
    std::size_t dim() const override { return beta_.size(); }

    const VecD& beta() const { return beta_; }
    double bound() const { return bound_; }

    json to_json() const;
    static BoundedLinearClassifier from_json(const json& doc);

private:
    VecD beta_;
    double bound_ = 0.0;
};

struct BoundedLsOptions {
    std::size_t max_iters = 5000;
    double tol = 1e-10;
};

// Least squares min ||X b - y||^2 subject to -k <= b_i <= k, solved by
// projected gradient descent. The returned weights satisfy the box exactly.
BoundedLinearClassifier fit_bounded_linear(const Matrix& design, const VecD& target, double bound,
                                           BoundedLsOptions opts = {});

void save_predictor_json(const std::string& path, const json& doc);
json load_predictor_json(const std::string& path);

}  // namespace tcr
