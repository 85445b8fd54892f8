#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tabsynth/common.hpp"
#include "tabsynth/data.hpp"
#include "tabsynth/netcore.hpp"

namespace tabsynth {

/// Downstream models used by the utility metrics. Classification targets are
/// category indices stored as reals; predictions follow the same convention.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Vector predict(const Matrix& features) const = 0;
    virtual std::string name() const = 0;
    /// Set when the training target had a single class (constant predictor).
    bool degenerate = false;
};

struct LogRegOptions {
    /// Inverse L2 strength, objective Σ loss + ‖w‖²/(2C).
    double c = 1.0;
    std::size_t max_iterations = 1000;
    double tolerance = 1e-6;
};

/// Multinomial logistic regression trained by gradient descent with backtracking.
class LogisticRegression : public Predictor {
public:
    LogisticRegression(const Matrix& x, const Vector& y, std::size_t classes, const LogRegOptions& opt = {});
    Vector predict(const Matrix& features) const override;
    Matrix predict_proba(const Matrix& features) const;
    std::string name() const override { return "logistic_regression"; }

    const Matrix& weights() const { return weights_; }
    const RowVector& intercept() const { return intercept_; }
    std::size_t iterations() const { return iterations_; }

private:
    Matrix weights_;  // features × classes
    RowVector intercept_;
    std::size_t iterations_ = 0;
};

/// Ordinary least squares with intercept (the fixed point of gradient descent).
class LinearRegression : public Predictor {
public:
    LinearRegression(const Matrix& x, const Vector& y);
    Vector predict(const Matrix& features) const override;
    std::string name() const override { return "linear_regression"; }

private:
    Vector coef_;
    double intercept_ = 0.0;
};

struct TreeOptions {
    std::size_t max_depth = 0;  // 0: unlimited
    std::size_t min_leaf = 1;
};

/// CART with Gini impurity (classification) or variance reduction (regression).
class DecisionTree : public Predictor {
public:
    DecisionTree(const Matrix& x, const Vector& y, Task task, std::size_t classes, const TreeOptions& opt = {});
    Vector predict(const Matrix& features) const override;
    std::string name() const override {
        return task_ == Task::Classification ? "decision_tree_classifier" : "decision_tree_regressor";
    }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t depth() const { return depth_; }

private:
    struct Node {
        int feature = -1;  // -1: leaf
        double threshold = 0.0;
        std::size_t left = 0, right = 0;
        double value = 0.0;
    };
    std::size_t build(const Matrix& x, const Vector& y, std::vector<std::size_t>& idx, std::size_t begin,
                      std::size_t end, std::size_t depth);
    double leaf_value(const Vector& y, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) const;

    Task task_;
    std::size_t classes_;
    TreeOptions opt_;
    std::vector<Node> nodes_;
    std::size_t depth_ = 0;
};

struct MlpOptions {
    std::size_t hidden = 100;
    std::size_t max_epochs = 200;
    std::size_t batch_size = 200;
    double learning_rate = 1e-3;
    double l2 = 1e-4;
    double tolerance = 1e-4;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
};

/// One hidden ReLU layer on the dense-network engine; softmax cross-entropy or squared error.
class MlpPredictor : public Predictor {
public:
    MlpPredictor(const Matrix& x, const Vector& y, Task task, std::size_t classes, const MlpOptions& opt = {});
    Vector predict(const Matrix& features) const override;
    std::string name() const override {
        return task_ == Task::Classification ? "mlp_classifier" : "mlp_regressor";
    }
    std::size_t epochs_run() const { return epochs_; }

private:
    Task task_;
    std::size_t classes_;
    Network net_;
    double y_mean_ = 0.0, y_scale_ = 1.0;
    std::size_t epochs_ = 0;
};

std::unique_ptr<Predictor> fit_logreg(const Matrix& x, const Vector& y, Task task, std::size_t classes);
std::unique_ptr<Predictor> fit_tree(const Matrix& x, const Vector& y, Task task, std::size_t classes);
std::unique_ptr<Predictor> fit_mlp(const Matrix& x, const Vector& y, Task task, std::size_t classes,
                                   std::uint64_t seed = 0);

/// Binary F1 of `positive` when classes == 2, macro F1 over observed labels otherwise.
double f1_score(const Vector& predictions, const Vector& truth, std::size_t classes, std::int32_t positive = 1);
double r2_score(const Vector& predictions, const Vector& truth);
/// (max(r², −1) + 1) / 2.
double r2_normalized(const Vector& predictions, const Vector& truth);

/// Feature construction for the utility protocol: numerical columns optionally
/// standardized with statistics of the fitting table, categorical columns one-hot.
class FeatureEncoder {
public:
    FeatureEncoder(const Table& fit_on, std::size_t target_column, bool standardize);
    Matrix features(const Table& t) const;
    Vector target(const Table& t) const;
    std::size_t width() const { return width_; }

private:
    Schema schema_;
    std::size_t target_;
    bool standardize_;
    std::vector<double> mean_, scale_;  // by schema column
    std::size_t width_ = 0;
};

}  // namespace tabsynth
