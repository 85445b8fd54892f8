#include "tabsynth/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace tabsynth {

namespace {

/// Majority class or mean, for single-class training targets.
class ConstantPredictor : public Predictor {
public:
    ConstantPredictor(double value, std::string name) : value_(value), name_(std::move(name)) { degenerate = true; }
    Vector predict(const Matrix& features) const override { return Vector::Constant(features.rows(), value_); }
    std::string name() const override { return name_; }

private:
    double value_;
    std::string name_;
};

std::size_t distinct_classes(const Vector& y) {
    std::set<double> s(y.data(), y.data() + y.size());
    return s.size();
}

Matrix one_hot(const Vector& y, std::size_t classes) {
    Matrix out = Matrix::Zero(y.size(), static_cast<Eigen::Index>(classes));
    for (Eigen::Index i = 0; i < y.size(); ++i) out(i, static_cast<Eigen::Index>(y[i])) = 1.0;
    return out;
}

Vector argmax_rows(const Matrix& m) {
    Vector out(m.rows());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < m.cols(); ++c)
            if (m(r, c) > m(r, best)) best = c;
        out[r] = static_cast<double>(best);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Logistic regression

LogisticRegression::LogisticRegression(const Matrix& x, const Vector& y, std::size_t classes,
                                       const LogRegOptions& opt) {
    const auto n = static_cast<double>(x.rows());
    const auto d = x.cols();
    const auto k = static_cast<Eigen::Index>(classes);
    const Matrix targets = one_hot(y, classes);
    const double reg = 1.0 / (opt.c * n);
    weights_ = Matrix::Zero(d, k);
    intercept_ = RowVector::Zero(k);

    auto objective = [&](const Matrix& w, const RowVector& b, Matrix* probs) {
        Matrix logits = x * w;
        logits.rowwise() += b;
        double loss = 0.0;
        Matrix p(logits.rows(), logits.cols());
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            double m = logits.row(r).maxCoeff();
            RowVector e = (logits.row(r).array() - m).exp().matrix();
            double s = e.sum();
            p.row(r) = e / s;
            for (Eigen::Index c = 0; c < k; ++c)
                if (targets(r, c) > 0.0) loss -= logits(r, c) - m - std::log(s);
        }
        if (probs) *probs = std::move(p);
        return loss / n + 0.5 * reg * w.squaredNorm();
    };

    Matrix probs;
    double f = objective(weights_, intercept_, &probs);
    double step = 1.0;
    for (iterations_ = 0; iterations_ < opt.max_iterations; ++iterations_) {
        Matrix residual = probs - targets;
        Matrix gw = x.transpose() * residual / n + reg * weights_;
        RowVector gb = residual.colwise().sum() / n;
        double gnorm2 = gw.squaredNorm() + gb.squaredNorm();
        if (std::sqrt(gnorm2) < opt.tolerance) break;
        step = std::min(step * 2.0, 1e6);
        while (true) {
            Matrix w_new = weights_ - step * gw;
            RowVector b_new = intercept_ - step * gb;
            Matrix p_new;
            double f_new = objective(w_new, b_new, &p_new);
            if (f_new <= f - 0.5 * step * gnorm2 || step < 1e-12) {
                weights_ = std::move(w_new);
                intercept_ = std::move(b_new);
                probs = std::move(p_new);
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        if (step < 1e-12) break;
    }
}

Matrix LogisticRegression::predict_proba(const Matrix& features) const {
    Matrix logits = features * weights_;
    logits.rowwise() += intercept_;
    return softmax_rows(logits);
}

Vector LogisticRegression::predict(const Matrix& features) const {
    Matrix logits = features * weights_;
    logits.rowwise() += intercept_;
    return argmax_rows(logits);
}

// ---------------------------------------------------------------------------
// Linear regression

LinearRegression::LinearRegression(const Matrix& x, const Vector& y) {
    Matrix design(x.rows(), x.cols() + 1);
    design << x, Vector::Ones(x.rows());
    Vector sol = design.completeOrthogonalDecomposition().solve(y);
    coef_ = sol.head(x.cols());
    intercept_ = sol[x.cols()];
}

Vector LinearRegression::predict(const Matrix& features) const {
    return (features * coef_).array() + intercept_;
}

// ---------------------------------------------------------------------------
// Decision tree

DecisionTree::DecisionTree(const Matrix& x, const Vector& y, Task task, std::size_t classes, const TreeOptions& opt)
    : task_(task), classes_(classes), opt_(opt) {
    if (x.rows() == 0) throw InputError("decision tree: no training rows");
    std::vector<std::size_t> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    build(x, y, idx, 0, idx.size(), 0);
}

double DecisionTree::leaf_value(const Vector& y, const std::vector<std::size_t>& idx, std::size_t begin,
                                std::size_t end) const {
    if (task_ == Task::Regression) {
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += y[static_cast<Eigen::Index>(idx[i])];
        return s / static_cast<double>(end - begin);
    }
    std::vector<std::size_t> counts(classes_, 0);
    for (std::size_t i = begin; i < end; ++i) ++counts[static_cast<std::size_t>(y[static_cast<Eigen::Index>(idx[i])])];
    return static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::size_t DecisionTree::build(const Matrix& x, const Vector& y, std::vector<std::size_t>& idx, std::size_t begin,
                                std::size_t end, std::size_t depth) {
    struct Work {
        std::size_t node, begin, end, depth;
    };
    const std::size_t root = nodes_.size();
    nodes_.emplace_back();
    std::vector<Work> stack{{root, begin, end, depth}};
    std::vector<std::pair<double, std::size_t>> order;
    std::vector<double> left_counts(classes_), right_counts(classes_);

    while (!stack.empty()) {
        Work w = stack.back();
        stack.pop_back();
        depth_ = std::max(depth_, w.depth);
        const std::size_t n = w.end - w.begin;
        nodes_[w.node].value = leaf_value(y, idx, w.begin, w.end);

        bool pure = true;
        double first = y[static_cast<Eigen::Index>(idx[w.begin])];
        for (std::size_t i = w.begin + 1; i < w.end && pure; ++i) pure = y[static_cast<Eigen::Index>(idx[i])] == first;
        if (pure || n < 2 * opt_.min_leaf || (opt_.max_depth > 0 && w.depth >= opt_.max_depth)) continue;

        // Best split maximizes Σ_side score(side), the impurity reduction up to a constant.
        double best_score = -std::numeric_limits<double>::infinity();
        int best_feature = -1;
        double best_threshold = 0.0;
        for (Eigen::Index f = 0; f < x.cols(); ++f) {
            order.clear();
            for (std::size_t i = w.begin; i < w.end; ++i) order.emplace_back(x(static_cast<Eigen::Index>(idx[i]), f), idx[i]);
            std::sort(order.begin(), order.end());
            if (order.front().first == order.back().first) continue;
            if (task_ == Task::Classification) {
                std::fill(left_counts.begin(), left_counts.end(), 0.0);
                std::fill(right_counts.begin(), right_counts.end(), 0.0);
                for (const auto& [v, i] : order) right_counts[static_cast<std::size_t>(y[static_cast<Eigen::Index>(i)])] += 1.0;
                double lsq = 0.0, rsq = 0.0;
                for (double c : right_counts) rsq += c * c;
                for (std::size_t s = 0; s + 1 < order.size(); ++s) {
                    auto cls = static_cast<std::size_t>(y[static_cast<Eigen::Index>(order[s].second)]);
                    lsq += 2.0 * left_counts[cls] + 1.0;
                    left_counts[cls] += 1.0;
                    rsq -= 2.0 * right_counts[cls] - 1.0;
                    right_counts[cls] -= 1.0;
                    std::size_t nl = s + 1, nr = order.size() - nl;
                    if (order[s].first == order[s + 1].first || nl < opt_.min_leaf || nr < opt_.min_leaf) continue;
                    double score = lsq / static_cast<double>(nl) + rsq / static_cast<double>(nr);
                    if (score > best_score + 1e-12) {
                        best_score = score;
                        best_feature = static_cast<int>(f);
                        best_threshold = 0.5 * (order[s].first + order[s + 1].first);
                    }
                }
            } else {
                double total = 0.0;
                for (const auto& [v, i] : order) total += y[static_cast<Eigen::Index>(i)];
                double left = 0.0;
                for (std::size_t s = 0; s + 1 < order.size(); ++s) {
                    left += y[static_cast<Eigen::Index>(order[s].second)];
                    std::size_t nl = s + 1, nr = order.size() - nl;
                    if (order[s].first == order[s + 1].first || nl < opt_.min_leaf || nr < opt_.min_leaf) continue;
                    double right = total - left;
                    double score = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr);
                    if (score > best_score + 1e-12 * std::max(1.0, std::abs(score))) {
                        best_score = score;
                        best_feature = static_cast<int>(f);
                        best_threshold = 0.5 * (order[s].first + order[s + 1].first);
                    }
                }
            }
        }
        if (best_feature < 0) continue;

        auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                  idx.begin() + static_cast<std::ptrdiff_t>(w.end), [&](std::size_t i) {
                                      return x(static_cast<Eigen::Index>(i), best_feature) <= best_threshold;
                                  });
        auto split = static_cast<std::size_t>(mid - idx.begin());
        std::size_t left_id = nodes_.size();
        nodes_.emplace_back();
        std::size_t right_id = nodes_.size();
        nodes_.emplace_back();
        nodes_[w.node].feature = best_feature;
        nodes_[w.node].threshold = best_threshold;
        nodes_[w.node].left = left_id;
        nodes_[w.node].right = right_id;
        stack.push_back({right_id, split, w.end, w.depth + 1});
        stack.push_back({left_id, w.begin, split, w.depth + 1});
    }
    return root;
}

Vector DecisionTree::predict(const Matrix& features) const {
    Vector out(features.rows());
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        std::size_t node = 0;
        while (nodes_[node].feature >= 0) {
            const auto& nd = nodes_[node];
            node = features(r, nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        out[r] = nodes_[node].value;
    }
    return out;
}

// ---------------------------------------------------------------------------
// MLP

MlpPredictor::MlpPredictor(const Matrix& x, const Vector& y, Task task, std::size_t classes, const MlpOptions& opt)
    : task_(task), classes_(classes) {
    Rng rng(opt.seed);
    NetSpec spec;
    spec.input_width = static_cast<std::size_t>(x.cols());
    spec.widths = {opt.hidden, task == Task::Classification ? classes : 1};
    spec.activations = {Activation::Relu, Activation::Identity};
    net_ = Network(spec, rng);

    Matrix targets;
    if (task == Task::Classification) {
        targets = one_hot(y, classes);
    } else {
        y_mean_ = y.mean();
        double var = (y.array() - y_mean_).square().mean();
        y_scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
        targets = ((y.array() - y_mean_) / y_scale_).matrix();
    }

    AdamConfig ac;
    ac.learning_rate = opt.learning_rate;
    ac.beta1 = 0.9;
    ac.beta2 = 0.999;
    ac.epsilon = 1e-8;
    AdamState state = AdamState::for_network(net_, ac);

    const auto n = static_cast<std::size_t>(x.rows());
    const std::size_t batch = std::min(opt.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (epochs_ = 0; epochs_ < opt.max_epochs;) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            std::size_t b = std::min(batch, n - start);
            Matrix xb(static_cast<Eigen::Index>(b), x.cols());
            Matrix tb(static_cast<Eigen::Index>(b), targets.cols());
            for (std::size_t i = 0; i < b; ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[start + i]));
                tb.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(order[start + i]));
            }
            auto cache = net_.forward(xb);
            Matrix grad;
            double loss = 0.0;
            const double bd = static_cast<double>(b);
            if (task == Task::Classification) {
                Matrix p = softmax_rows(cache.output);
                for (Eigen::Index r = 0; r < p.rows(); ++r)
                    for (Eigen::Index c = 0; c < p.cols(); ++c)
                        if (tb(r, c) > 0.0) loss -= std::log(std::max(p(r, c), 1e-300));
                loss /= bd;
                grad = (p - tb) / bd;
            } else {
                Matrix diff = cache.output - tb;
                loss = 0.5 * diff.squaredNorm() / bd;
                grad = diff / bd;
            }
            Grads g = net_.backward(cache, grad);
            for (std::size_t l = 0; l < g.weight.size(); ++l) {
                loss += 0.5 * opt.l2 * net_.layers()[l].weight.squaredNorm() / bd;
                g.weight[l] += (opt.l2 / bd) * net_.layers()[l].weight;
            }
            adam_step(net_, g, state);
            epoch_loss += loss * bd;
        }
        epoch_loss /= static_cast<double>(n);
        ++epochs_;
        if (!std::isfinite(epoch_loss)) throw NumericError("MLP training diverged");
        if (epoch_loss > best - opt.tolerance) {
            if (++stale >= opt.patience) break;
        } else {
            stale = 0;
        }
        best = std::min(best, epoch_loss);
    }
}

Vector MlpPredictor::predict(const Matrix& features) const {
    auto cache = net_.forward(features);
    if (task_ == Task::Classification) return argmax_rows(cache.output);
    return (cache.output.col(0).array() * y_scale_ + y_mean_).matrix();
}

// ---------------------------------------------------------------------------

std::unique_ptr<Predictor> fit_logreg(const Matrix& x, const Vector& y, Task task, std::size_t classes) {
    if (task == Task::Regression) return std::make_unique<LinearRegression>(x, y);
    if (distinct_classes(y) < 2) return std::make_unique<ConstantPredictor>(y.size() ? y[0] : 0.0, "logistic_regression");
    return std::make_unique<LogisticRegression>(x, y, classes);
}

std::unique_ptr<Predictor> fit_tree(const Matrix& x, const Vector& y, Task task, std::size_t classes) {
    if (task == Task::Classification && distinct_classes(y) < 2)
        return std::make_unique<ConstantPredictor>(y.size() ? y[0] : 0.0, "decision_tree_classifier");
    return std::make_unique<DecisionTree>(x, y, task, classes);
}

std::unique_ptr<Predictor> fit_mlp(const Matrix& x, const Vector& y, Task task, std::size_t classes,
                                   std::uint64_t seed) {
    if (task == Task::Classification && distinct_classes(y) < 2)
        return std::make_unique<ConstantPredictor>(y.size() ? y[0] : 0.0, "mlp_classifier");
    MlpOptions opt;
    opt.seed = seed;
    return std::make_unique<MlpPredictor>(x, y, task, classes, opt);
}

double f1_score(const Vector& predictions, const Vector& truth, std::size_t classes, std::int32_t positive) {
    if (predictions.size() != truth.size()) throw InputError("f1_score: length mismatch");
    auto f1_for = [&](double label) {
        double tp = 0, fp = 0, fn = 0;
        for (Eigen::Index i = 0; i < truth.size(); ++i) {
            bool p = predictions[i] == label, t = truth[i] == label;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
        double denom = 2 * tp + fp + fn;
        return denom > 0 ? 2 * tp / denom : 0.0;
    };
    if (classes == 2) return f1_for(static_cast<double>(positive));
    std::set<double> labels(truth.data(), truth.data() + truth.size());
    labels.insert(predictions.data(), predictions.data() + predictions.size());
    double sum = 0.0;
    for (double l : labels) sum += f1_for(l);
    return labels.empty() ? 0.0 : sum / static_cast<double>(labels.size());
}

double r2_score(const Vector& predictions, const Vector& truth) {
    if (predictions.size() != truth.size() || truth.size() == 0) throw InputError("r2_score: length mismatch");
    double mean = truth.mean();
    double ss_tot = (truth.array() - mean).square().sum();
    double ss_res = (truth - predictions).squaredNorm();
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

double r2_normalized(const Vector& predictions, const Vector& truth) {
    return (std::max(r2_score(predictions, truth), -1.0) + 1.0) / 2.0;
}

// ---------------------------------------------------------------------------

FeatureEncoder::FeatureEncoder(const Table& fit_on, std::size_t target_column, bool standardize)
    : schema_(fit_on.schema()), target_(target_column), standardize_(standardize) {
    mean_.assign(schema_.size(), 0.0);
    scale_.assign(schema_.size(), 1.0);
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        if (i == target_) continue;
        const auto& c = schema_.column(i);
        if (c.is_categorical()) {
            width_ += c.cardinality();
        } else {
            width_ += 1;
            if (standardize_ && fit_on.rows() > 0) {
                Vector v = fit_on.column_values(i);
                mean_[i] = v.mean();
                double sd = std::sqrt((v.array() - mean_[i]).square().mean());
                scale_[i] = sd > 0.0 ? sd : 1.0;
            }
        }
    }
}

Matrix FeatureEncoder::features(const Table& t) const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(width_));
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        if (i == target_) continue;
        const auto& c = schema_.column(i);
        if (c.is_categorical()) {
            for (std::size_t r = 0; r < t.rows(); ++r) out(static_cast<Eigen::Index>(r), off + t.category(r, i)) = 1.0;
            off += static_cast<Eigen::Index>(c.cardinality());
        } else {
            out.col(off) = ((t.column_values(i).array() - mean_[i]) / scale_[i]).matrix();
            off += 1;
        }
    }
    return out;
}

Vector FeatureEncoder::target(const Table& t) const {
    return t.column_values(target_);
}

}  // namespace tabsynth
