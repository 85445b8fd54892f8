#include "tabsynth/transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace tabsynth {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2π))

double log_normal(double x, double mean, double stddev) {
    double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - kLogSqrt2Pi;
}

double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

struct EmFit {
    std::vector<double> weights, means, stds;
    std::vector<double> trace;
    double log_likelihood = -std::numeric_limits<double>::infinity();
};

// k-means++ seeding of K centers.
std::vector<double> seed_centers(std::span<const double> x, std::size_t k, Rng& rng) {
    std::vector<double> centers{x[uniform_index(rng, x.size())]};
    std::vector<double> d2(x.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) break;
        double u = uniform01(rng) * total;
        std::size_t pick = x.size() - 1;
        for (std::size_t i = 0; i < x.size(); ++i) {
            u -= d2[i];
            if (u <= 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(x[pick]);
    }
    return centers;
}

EmFit run_em(std::span<const double> x, std::size_t k, double min_std, const GmmOptions& opt, Rng& rng) {
    const std::size_t n = x.size();
    EmFit fit;
    fit.means = seed_centers(x, k, rng);
    k = fit.means.size();

    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    double spread = std::max(std::sqrt(var / static_cast<double>(n)), min_std);

    fit.weights.assign(k, 1.0 / static_cast<double>(k));
    fit.stds.assign(k, spread);

    std::vector<double> resp(n * k);
    std::vector<double> logp(k);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        // E-step at the current parameters; its log-likelihood belongs to them.
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j)
                logp[j] = fit.weights[j] > 0.0
                              ? std::log(fit.weights[j]) + log_normal(x[i], fit.means[j], fit.stds[j])
                              : -std::numeric_limits<double>::infinity();
            double lse = log_sum_exp(logp);
            ll += lse;
            for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(logp[j] - lse);
        }
        fit.trace.push_back(ll);
        if (it > 0 && ll - prev <= opt.tolerance * std::max(1.0, std::abs(ll))) {
            fit.log_likelihood = ll;
            return fit;
        }
        prev = ll;
        fit.log_likelihood = ll;

        // M-step. The std floor is a fixed box constraint, so each step still
        // maximizes the expected complete-data likelihood.
        for (std::size_t j = 0; j < k; ++j) {
            double nk = 0.0, s1 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i * k + j];
                s1 += resp[i * k + j] * x[i];
            }
            if (nk <= 0.0) {
                fit.weights[j] = 0.0;
                continue;
            }
            double mu = s1 / nk;
            double s2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) s2 += resp[i * k + j] * (x[i] - mu) * (x[i] - mu);
            fit.weights[j] = nk / static_cast<double>(n);
            fit.means[j] = mu;
            fit.stds[j] = std::max(std::sqrt(s2 / nk), min_std);
        }
    }
    // Final log-likelihood for the last M-step.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j)
            logp[j] = fit.weights[j] > 0.0
                          ? std::log(fit.weights[j]) + log_normal(x[i], fit.means[j], fit.stds[j])
                          : -std::numeric_limits<double>::infinity();
        ll += log_sum_exp(logp);
    }
    fit.trace.push_back(ll);
    fit.log_likelihood = ll;
    return fit;
}

}  // namespace

std::vector<std::size_t> GmmModel::active_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < active.size(); ++k)
        if (active[k]) out.push_back(k);
    return out;
}

std::size_t GmmModel::active_count() const {
    return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

std::vector<double> GmmModel::responsibilities(double value) const {
    auto idx = active_indices();
    std::vector<double> logp(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j)
        logp[j] = std::log(weights[idx[j]]) + log_normal(value, means[idx[j]], stds[idx[j]]);
    double lse = log_sum_exp(logp);
    std::vector<double> out(idx.size());
    if (!std::isfinite(lse)) {
        // Far outside every mode: fall back to the nearest mean.
        std::size_t best = 0;
        for (std::size_t j = 1; j < idx.size(); ++j)
            if (std::abs(value - means[idx[j]]) < std::abs(value - means[idx[best]])) best = j;
        out[best] = 1.0;
        return out;
    }
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = std::exp(logp[j] - lse);
    return out;
}

double GmmModel::log_density(double value) const {
    std::vector<double> logp;
    for (auto k : active_indices()) logp.push_back(std::log(weights[k]) + log_normal(value, means[k], stds[k]));
    return log_sum_exp(logp);
}

nlohmann::json GmmModel::to_json() const {
    std::vector<int> mask(active.begin(), active.end());
    return {{"weights", weights}, {"means", means}, {"stds", stds}, {"active", mask}, {"degenerate", degenerate}};
}

GmmModel GmmModel::from_json(const nlohmann::json& j) {
    GmmModel g;
    g.weights = j.at("weights").get<std::vector<double>>();
    g.means = j.at("means").get<std::vector<double>>();
    g.stds = j.at("stds").get<std::vector<double>>();
    for (int a : j.at("active").get<std::vector<int>>()) g.active.push_back(a != 0);
    g.degenerate = j.at("degenerate").get<bool>();
    if (g.means.size() != g.weights.size() || g.stds.size() != g.weights.size() || g.active.size() != g.weights.size() ||
        g.active_count() == 0)
        throw InputError("inconsistent mixture parameters");
    return g;
}

GmmModel fit_gmm(std::span<const double> values, const GmmOptions& options) {
    if (values.empty()) throw InputError("fit_gmm: no values");
    if (options.max_modes < 1) throw InputError("fit_gmm: max_modes must be at least 1");
    std::set<double> distinct(values.begin(), values.end());
    GmmModel g;
    if (distinct.size() < 2) {
        g.weights = {1.0};
        g.means = {values[0]};
        g.stds = {kDegenerateStd};
        g.active = {true};
        g.degenerate = true;
        return g;
    }

    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double min_std = std::max(kDegenerateStd, 1e-3 * std::sqrt(var / n));

    const std::size_t k_max = std::min(options.max_modes, distinct.size());
    Rng rng(options.seed);
    EmFit best;
    double best_bic = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= k_max; ++k) {
        EmFit fit = run_em(values, k, min_std, options, rng);
        double params = 3.0 * static_cast<double>(fit.means.size()) - 1.0;
        double bic = -2.0 * fit.log_likelihood + params * std::log(n);
        if (bic < best_bic) {
            best_bic = bic;
            best = std::move(fit);
        }
    }

    g.weights = best.weights;
    g.means = best.means;
    g.stds = best.stds;
    g.log_likelihood_trace = best.trace;
    g.active.resize(g.weights.size());
    double kept = 0.0;
    for (std::size_t k = 0; k < g.weights.size(); ++k) {
        g.active[k] = g.weights[k] >= options.weight_floor;
        if (g.active[k]) kept += g.weights[k];
    }
    for (std::size_t k = 0; k < g.weights.size(); ++k) g.weights[k] = g.active[k] ? g.weights[k] / kept : 0.0;
    return g;
}

NumericalCode encode_numerical(const GmmModel& g, double value, Rng& rng) {
    auto idx = g.active_indices();
    auto resp = g.responsibilities(value);
    double u = uniform01(rng);
    std::size_t pick = idx.size() - 1;
    double acc = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        acc += resp[j];
        if (u < acc) {
            pick = j;
            break;
        }
    }
    std::size_t mode = idx[pick];
    double alpha = (value - g.means[mode]) / (4.0 * g.stds[mode]);
    return {std::clamp(alpha, -1.0, 1.0), mode};
}

double decode_numerical(const GmmModel& g, double alpha, std::size_t mode) {
    if (mode >= g.size() || !g.active[mode]) throw InputError("decode_numerical: inactive mode index");
    return g.means[mode] + 4.0 * g.stds[mode] * alpha;
}

// ---------------------------------------------------------------------------

EncodedLayout::EncodedLayout(std::vector<Span> spans) : spans_(std::move(spans)) {
    for (const auto& s : spans_) {
        if (s.offset != width_) throw InputError("encoded spans must be contiguous");
        width_ += s.width;
    }
}

std::vector<Span> EncodedLayout::discrete_spans() const {
    std::vector<Span> out;
    for (const auto& s : spans_)
        if (s.kind != SpanKind::Alpha) out.push_back(s);
    return out;
}

const Span& EncodedLayout::discrete_span_of(std::size_t column) const {
    for (const auto& s : spans_)
        if (s.column == column && s.kind != SpanKind::Alpha) return s;
    throw InputError("no discrete span for column " + std::to_string(column));
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

void DataTransformer::fit(const Table& t, const TransformerOptions& options) {
    if (t.empty()) throw InputError("cannot fit a transformer on an empty table");
    schema_ = t.schema();
    gmms_.clear();
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        if (schema_.column(i).is_categorical()) continue;
        auto col = t.numerical().col(static_cast<Eigen::Index>(schema_.slot(i)));
        std::vector<double> v(col.data(), col.data() + col.size());
        GmmOptions go = options.gmm;
        go.seed = derive_seed(options.gmm.seed, {i});
        gmms_.push_back(fit_gmm(v, go));
    }
    build_layout();
    fitted_ = true;
}

void DataTransformer::build_layout() {
    std::vector<Span> spans;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        const auto& c = schema_.column(i);
        if (c.is_categorical()) {
            spans.push_back({SpanKind::Categories, i, offset, c.cardinality()});
            offset += c.cardinality();
        } else {
            auto k = gmms_[schema_.slot(i)].active_count();
            spans.push_back({SpanKind::Alpha, i, offset, 1});
            spans.push_back({SpanKind::Modes, i, offset + 1, k});
            offset += 1 + k;
        }
    }
    layout_ = EncodedLayout(std::move(spans));
}

void DataTransformer::require_fitted() const {
    if (!fitted_) throw InputError("transformer used before fit");
}

const GmmModel& DataTransformer::gmm(std::size_t column) const {
    require_fitted();
    if (schema_.column(column).is_categorical()) throw InputError("categorical column has no mixture");
    return gmms_[schema_.slot(column)];
}

Matrix DataTransformer::transform(const Table& t, Rng& rng) const {
    require_fitted();
    if (!(t.schema().columns().size() == schema_.columns().size()))
        throw InputError("transform: schema mismatch");
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        const auto& a = schema_.column(i);
        const auto& b = t.schema().column(i);
        if (a.name != b.name || a.kind != b.kind || a.categories != b.categories)
            throw InputError("transform: schema mismatch at column '" + b.name + "'");
    }
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(layout_.width()));
    // Per-column active-position lookup for mode indicators.
    std::vector<std::vector<std::size_t>> position(gmms_.size());
    for (std::size_t s = 0; s < gmms_.size(); ++s) {
        position[s].assign(gmms_[s].size(), 0);
        auto idx = gmms_[s].active_indices();
        for (std::size_t j = 0; j < idx.size(); ++j) position[s][idx[j]] = j;
    }
    for (std::size_t r = 0; r < t.rows(); ++r) {
        auto row = static_cast<Eigen::Index>(r);
        for (const auto& span : layout_.spans()) {
            auto off = static_cast<Eigen::Index>(span.offset);
            if (span.kind == SpanKind::Alpha) {
                auto s = schema_.slot(span.column);
                auto code = encode_numerical(gmms_[s], t.number(r, span.column), rng);
                out(row, off) = code.alpha;
                out(row, off + 1 + static_cast<Eigen::Index>(position[s][code.mode])) = 1.0;
            } else if (span.kind == SpanKind::Categories) {
                out(row, off + t.category(r, span.column)) = 1.0;
            }
        }
    }
    return out;
}

Table DataTransformer::inverse_transform(const Matrix& encoded) const {
    require_fitted();
    if (static_cast<std::size_t>(encoded.cols()) != layout_.width())
        throw InputError("inverse_transform: width " + std::to_string(encoded.cols()) + " does not match layout width " +
                         std::to_string(layout_.width()));
    const auto n = encoded.rows();
    Matrix num(n, static_cast<Eigen::Index>(schema_.numerical_count()));
    IndexMatrix cat(n, static_cast<Eigen::Index>(schema_.categorical_count()));
    std::vector<double> buf;
    for (Eigen::Index r = 0; r < n; ++r) {
        for (const auto& span : layout_.spans()) {
            auto off = static_cast<Eigen::Index>(span.offset);
            auto slot = static_cast<Eigen::Index>(schema_.slot(span.column));
            if (span.kind == SpanKind::Alpha) continue;
            buf.resize(span.width);
            for (std::size_t j = 0; j < span.width; ++j) buf[j] = encoded(r, off + static_cast<Eigen::Index>(j));
            std::size_t pick = argmax(buf);
            if (span.kind == SpanKind::Categories) {
                cat(r, slot) = static_cast<std::int32_t>(pick);
            } else {
                const auto& g = gmms_[static_cast<std::size_t>(slot)];
                std::size_t mode = g.active_indices()[pick];
                num(r, slot) = decode_numerical(g, encoded(r, off - 1), mode);
            }
        }
    }
    return Table(schema_, std::move(num), std::move(cat));
}

nlohmann::json DataTransformer::to_json() const {
    require_fitted();
    nlohmann::json g = nlohmann::json::array();
    for (const auto& m : gmms_) g.push_back(m.to_json());
    return {{"schema", schema_.to_json()}, {"gmms", std::move(g)}};
}

DataTransformer DataTransformer::from_json(const nlohmann::json& j) {
    DataTransformer dt;
    dt.schema_ = Schema::from_json(j.at("schema"));
    for (const auto& g : j.at("gmms")) dt.gmms_.push_back(GmmModel::from_json(g));
    if (dt.gmms_.size() != dt.schema_.numerical_count()) throw InputError("mixture count does not match schema");
    dt.build_layout();
    dt.fitted_ = true;
    return dt;
}

// ---------------------------------------------------------------------------

MinMaxScaler MinMaxScaler::fit(std::span<const double> values) {
    if (values.empty()) throw InputError("min-max scaling of an empty column");
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    MinMaxScaler s{*lo, *hi, *hi == *lo};
    return s;
}

double MinMaxScaler::apply(double v) const {
    if (constant) return 0.0;
    return (v - min) / (max - min);
}

Vector MinMaxScaler::apply(const Vector& v) const {
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = apply(v[i]);
    return out;
}

MinMaxResult minmax_fit_apply(std::span<const double> values) {
    auto s = MinMaxScaler::fit(values);
    Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    return {s.apply(v), s};
}

std::vector<std::int32_t> label_encode(std::span<const std::string> labels,
                                       const std::vector<std::string>& categories) {
    std::vector<std::int32_t> out;
    out.reserve(labels.size());
    for (const auto& l : labels) {
        auto it = std::find(categories.begin(), categories.end(), l);
        if (it == categories.end()) throw InputError("unknown label '" + l + "'");
        out.push_back(static_cast<std::int32_t>(it - categories.begin()));
    }
    return out;
}

std::vector<std::string> label_decode(std::span<const std::int32_t> codes,
                                      const std::vector<std::string>& categories) {
    std::vector<std::string> out;
    out.reserve(codes.size());
    for (auto c : codes) {
        if (c < 0 || static_cast<std::size_t>(c) >= categories.size()) throw InputError("label code out of range");
        out.push_back(categories[static_cast<std::size_t>(c)]);
    }
    return out;
}

}  // namespace tabsynth
