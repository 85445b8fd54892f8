#include "tabsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tabsynth/predictors.hpp"
#include "tabsynth/transform.hpp"

namespace tabsynth {

// ---------------------------------------------------------------------------
// Marginal metrics

GridHistogram numerical_histogram(std::span<const double> scaled, std::size_t bins) {
    if (scaled.empty()) throw InputError("histogram of an empty column");
    if (bins == 0) throw InputError("histogram needs at least one bin");
    GridHistogram h;
    h.mass.assign(bins, 0.0);
    h.positions.resize(bins);
    for (std::size_t i = 0; i < bins; ++i)
        h.positions[i] = bins == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(bins - 1);
    const auto b = static_cast<double>(bins);
    for (double v : scaled) {
        double pos = std::floor(v * b);
        auto idx = static_cast<std::size_t>(std::clamp(pos, 0.0, b - 1.0));
        h.mass[idx] += 1.0;
    }
    for (auto& m : h.mass) m /= static_cast<double>(scaled.size());
    return h;
}

GridHistogram categorical_histogram(std::span<const std::int32_t> codes, std::size_t categories) {
    if (codes.empty()) throw InputError("histogram of an empty column");
    GridHistogram h;
    h.mass.assign(categories, 0.0);
    h.positions.resize(categories);
    std::iota(h.positions.begin(), h.positions.end(), 0.0);
    for (auto c : codes) {
        if (c < 0 || static_cast<std::size_t>(c) >= categories) throw InputError("category code out of range");
        h.mass[static_cast<std::size_t>(c)] += 1.0;
    }
    for (auto& m : h.mass) m /= static_cast<double>(codes.size());
    return h;
}

namespace {

void require_same_grid(const GridHistogram& p, const GridHistogram& q) {
    if (p.mass.size() != q.mass.size() || p.positions != q.positions)
        throw InputError("histograms are not on the same grid");
}

}  // namespace

double histogram_intersection(const GridHistogram& p, const GridHistogram& q) {
    require_same_grid(p, q);
    double s = 0.0;
    for (std::size_t i = 0; i < p.mass.size(); ++i) s += std::min(p.mass[i], q.mass[i]);
    return std::clamp(s, 0.0, 1.0);
}

double jensen_shannon_distance(const GridHistogram& p, const GridHistogram& q) {
    require_same_grid(p, q);
    double js = 0.0;
    for (std::size_t i = 0; i < p.mass.size(); ++i) {
        double m = 0.5 * (p.mass[i] + q.mass[i]);
        if (p.mass[i] > 0.0) js += 0.5 * p.mass[i] * std::log2(p.mass[i] / m);
        if (q.mass[i] > 0.0) js += 0.5 * q.mass[i] * std::log2(q.mass[i] / m);
    }
    return std::clamp(std::sqrt(std::max(js, 0.0)), 0.0, 1.0);
}

double wasserstein_1d(const GridHistogram& p, const GridHistogram& q) {
    require_same_grid(p, q);
    double cp = 0.0, cq = 0.0, w = 0.0;
    for (std::size_t i = 0; i + 1 < p.mass.size(); ++i) {
        cp += p.mass[i];
        cq += q.mass[i];
        w += std::abs(cp - cq) * (p.positions[i + 1] - p.positions[i]);
    }
    return w;
}

ColumnCorrelation column_correlation(const GridHistogram& p, const GridHistogram& q) {
    require_same_grid(p, q);
    auto variance = [](const std::vector<double>& v) {
        double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s;
    };
    if (p.mass.size() < 2 || variance(p.mass) <= 0.0 || variance(q.mass) <= 0.0)
        return {histogram_intersection(p, q), true};
    return {std::clamp(pearson(p.mass, q.mass), 0.0, 1.0), false};
}

// ---------------------------------------------------------------------------
// Column-pair metrics

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw InputError("pearson: length mismatch");
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double cramers_v(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
    if (a.size() != b.size() || a.empty()) throw InputError("cramers_v: length mismatch");
    std::map<std::int32_t, std::size_t> ra, rb;
    for (auto v : a) ra.emplace(v, 0);
    for (auto v : b) rb.emplace(v, 0);
    std::size_t i = 0;
    for (auto& [k, idx] : ra) idx = i++;
    i = 0;
    for (auto& [k, idx] : rb) idx = i++;
    const std::size_t nr = ra.size(), nc = rb.size();
    std::vector<double> table(nr * nc, 0.0), rows(nr, 0.0), cols(nc, 0.0);
    for (std::size_t r = 0; r < a.size(); ++r) {
        std::size_t x = ra[a[r]], y = rb[b[r]];
        table[x * nc + y] += 1.0;
        rows[x] += 1.0;
        cols[y] += 1.0;
    }
    const double n = static_cast<double>(a.size());
    auto q = std::min(nr, nc);
    if (q < 2) return 0.0;
    double chi2 = 0.0;
    for (std::size_t x = 0; x < nr; ++x)
        for (std::size_t y = 0; y < nc; ++y) {
            double e = rows[x] * cols[y] / n;
            double d = table[x * nc + y] - e;
            chi2 += d * d / e;
        }
    return std::clamp(std::sqrt(chi2 / (n * static_cast<double>(q - 1))), 0.0, 1.0);
}

double correlation_ratio(std::span<const std::int32_t> categories, std::span<const double> values) {
    if (categories.size() != values.size() || values.empty()) throw InputError("correlation_ratio: length mismatch");
    std::map<std::int32_t, std::pair<double, std::size_t>> groups;
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto& g = groups[categories[i]];
        g.first += values[i];
        g.second += 1;
        total += values[i];
    }
    double mean = total / static_cast<double>(values.size());
    double ss_total = 0.0;
    for (double v : values) ss_total += (v - mean) * (v - mean);
    if (ss_total <= 0.0) return 0.0;
    double ss_between = 0.0;
    for (const auto& [k, g] : groups) {
        double gm = g.first / static_cast<double>(g.second);
        ss_between += static_cast<double>(g.second) * (gm - mean) * (gm - mean);
    }
    return std::clamp(std::sqrt(ss_between / ss_total), 0.0, 1.0);
}

Matrix association_matrix(const Table& t) {
    const auto& s = t.schema();
    const auto d = static_cast<Eigen::Index>(s.size());
    Matrix m = Matrix::Identity(d, d);
    if (t.empty()) throw InputError("association matrix of an empty table");
    std::vector<Vector> values(s.size());
    std::vector<std::vector<std::int32_t>> codes(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.column(i).is_categorical()) codes[i] = t.column_codes(i);
        else values[i] = t.column_values(i);
    }
    auto span_of = [](const Vector& v) { return std::span<const double>(v.data(), static_cast<std::size_t>(v.size())); };
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            bool ci = s.column(i).is_categorical(), cj = s.column(j).is_categorical();
            double v;
            if (!ci && !cj) v = pearson(span_of(values[i]), span_of(values[j]));
            else if (ci && cj) v = cramers_v(codes[i], codes[j]);
            else if (ci) v = correlation_ratio(codes[i], span_of(values[j]));
            else v = correlation_ratio(codes[j], span_of(values[i]));
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    }
    return m;
}

double associations_difference(const Table& real, const Table& synth) {
    if (real.schema().size() != synth.schema().size()) throw InputError("associations_difference: schema mismatch");
    Matrix a = association_matrix(real);
    Matrix b = association_matrix(synth);
    return (a - b).cwiseAbs().mean();
}

// ---------------------------------------------------------------------------
// Joint metrics

Matrix joint_features(const Table& t, const Table& reference) {
    const auto& s = t.schema();
    std::size_t width = 0;
    for (const auto& c : s.columns()) width += c.is_categorical() ? c.cardinality() : 1;
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(width));
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& c = s.column(i);
        if (c.is_categorical()) {
            for (std::size_t r = 0; r < t.rows(); ++r) out(static_cast<Eigen::Index>(r), off + t.category(r, i)) = 1.0;
            off += static_cast<Eigen::Index>(c.cardinality());
        } else {
            Vector ref = reference.column_values(i);
            auto scaler = MinMaxScaler::fit(std::span<const double>(ref.data(), static_cast<std::size_t>(ref.size())));
            out.col(off) = scaler.apply(t.column_values(i));
            off += 1;
        }
    }
    return out;
}

Vector kth_neighbor_distances(const Matrix& queries, const Matrix& reference, std::size_t k) {
    if (k < 1 || k > static_cast<std::size_t>(reference.rows()))
        throw InputError("neighbor rank k must lie in [1, reference rows]");
    if (queries.cols() != reference.cols()) throw InputError("neighbor search: width mismatch");
    const Eigen::Index block = 512;
    const auto nref = reference.rows();
    const std::size_t candidates = std::min<std::size_t>(k + 4, static_cast<std::size_t>(nref));
    Vector ref_norm = reference.rowwise().squaredNorm();
    Vector out(queries.rows());
    std::vector<std::pair<double, Eigen::Index>> approx(static_cast<std::size_t>(nref));
    std::vector<double> exact(candidates);
    for (Eigen::Index start = 0; start < queries.rows(); start += block) {
        Eigen::Index b = std::min(block, queries.rows() - start);
        Matrix cross = queries.middleRows(start, b) * reference.transpose();
        for (Eigen::Index q = 0; q < b; ++q) {
            auto row = queries.row(start + q);
            double qn = row.squaredNorm();
            for (Eigen::Index r = 0; r < nref; ++r)
                approx[static_cast<std::size_t>(r)] = {qn + ref_norm[r] - 2.0 * cross(q, r), r};
            std::nth_element(approx.begin(), approx.begin() + static_cast<std::ptrdiff_t>(candidates - 1), approx.end());
            for (std::size_t c = 0; c < candidates; ++c)
                exact[c] = (row - reference.row(approx[c].second)).norm();
            std::sort(exact.begin(), exact.end());
            out[start + q] = exact[k - 1];
        }
    }
    return out;
}

namespace {

Table sample_rows(const Table& t, std::size_t cap, Rng& rng) {
    if (t.rows() <= cap) return t;
    return subsample(t, cap, rng());
}

}  // namespace

double distance_to_closest_record(const Table& synth, const Table& test, std::size_t sample_cap, std::size_t k,
                                  Rng& rng) {
    if (synth.empty() || test.empty()) throw InputError("distance_to_closest_record: empty input");
    Table sampled = sample_rows(test, sample_cap, rng);
    Matrix q = joint_features(synth, test);
    Matrix r = joint_features(sampled, test);
    return kth_neighbor_distances(q, r, k).mean();
}

double likelihood_approximation(const Table& test, const Table& synth, std::size_t sample_cap, Rng& rng) {
    if (synth.empty() || test.empty()) throw InputError("likelihood_approximation: empty input");
    Table sampled = sample_rows(test, sample_cap, rng);
    Matrix q = joint_features(sampled, test);
    Matrix r = joint_features(synth, test);
    return kth_neighbor_distances(q, r, 1).mean();
}

// ---------------------------------------------------------------------------
// Utility metrics

UtilityScore ml_efficacy(const Table& train, const Table& test, std::uint64_t seed) {
    const auto& schema = train.schema();
    auto target = schema.target_index();
    if (!target) throw InputError("ml_efficacy needs a target column");
    if (train.empty() || test.empty()) throw InputError("ml_efficacy: empty input");
    const Task task = schema.task();
    const bool classification = task == Task::Classification;
    const std::size_t classes = classification ? schema.column(*target).cardinality() : 0;

    FeatureEncoder enc(train, *target, classification);
    Matrix xtr = enc.features(train);
    Vector ytr = enc.target(train);
    Matrix xte = enc.features(test);
    Vector yte = enc.target(test);

    UtilityScore out;
    std::vector<std::unique_ptr<Predictor>> models;
    models.push_back(fit_logreg(xtr, ytr, task, classes));
    models.push_back(fit_tree(xtr, ytr, task, classes));
    models.push_back(fit_mlp(xtr, ytr, task, classes, derive_seed(seed, {3})));
    double sum = 0.0;
    for (const auto& m : models) {
        Vector pred = m->predict(xte);
        double s = classification ? f1_score(pred, yte, classes, schema.positive_index()) : r2_normalized(pred, yte);
        out.per_model[m->name()] = s;
        out.degenerate = out.degenerate || m->degenerate;
        sum += s;
    }
    out.score = sum / static_cast<double>(models.size());
    return out;
}

DimensionWiseScore dimension_wise_prediction(const Table& train, const Table& test, std::uint64_t seed) {
    const auto& schema = train.schema();
    if (schema.size() < 2) throw InputError("dimension-wise prediction needs at least two columns");
    DimensionWiseScore out;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        Schema s = schema.with_target(i);
        auto score = ml_efficacy(train.with_schema(s), test.with_schema(s), derive_seed(seed, {i}));
        out.per_column.push_back(score.score);
    }
    out.score = std::accumulate(out.per_column.begin(), out.per_column.end(), 0.0) /
                static_cast<double>(out.per_column.size());
    return out;
}

// ---------------------------------------------------------------------------
// Reports

const std::vector<std::string>& all_metrics() {
    static const std::vector<std::string> names{metric::ml_efficacy,   metric::dimension_wise, metric::dcr,
                                                metric::likelihood,    metric::associations,   metric::histogram,
                                                metric::jensen_shannon, metric::wasserstein,   metric::column_correlation};
    return names;
}

const std::vector<std::string>& representative_metrics() {
    static const std::vector<std::string> names{metric::ml_efficacy, metric::dcr, metric::associations,
                                                metric::histogram};
    return names;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json bins = nlohmann::json::object();
    for (const auto& [m, byb] : per_bins) {
        nlohmann::json jb = nlohmann::json::object();
        for (const auto& [b, v] : byb) jb[std::to_string(b)] = v;
        bins[m] = jb;
    }
    return {{"scores", scores},     {"per_column", per_column}, {"per_bins", bins},
            {"per_model", per_model}, {"metadata", metadata},     {"flags", flags}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.scores = j.at("scores").get<std::map<std::string, double>>();
    r.per_column = j.value("per_column", decltype(r.per_column){});
    if (j.contains("per_bins"))
        for (const auto& [m, jb] : j["per_bins"].items())
            for (const auto& [b, v] : jb.items()) r.per_bins[m][std::stoul(b)] = v.get<std::vector<double>>();
    r.per_model = j.value("per_model", decltype(r.per_model){});
    r.metadata = j.value("metadata", decltype(r.metadata){});
    r.flags = j.value("flags", decltype(r.flags){});
    return r;
}

namespace {

const std::vector<std::string>& metadata_keys() {
    static const std::vector<std::string> keys{"dataset", "size", "variant", "seed", "trial"};
    return keys;
}

}  // namespace

std::string MetricReport::csv_header() {
    std::string out;
    for (const auto& k : metadata_keys()) out += k + ",";
    for (std::size_t i = 0; i < all_metrics().size(); ++i) out += (i ? "," : "") + all_metrics()[i];
    return out;
}

std::string MetricReport::csv_row() const {
    std::string out;
    for (const auto& k : metadata_keys()) {
        auto it = metadata.find(k);
        out += (it == metadata.end() ? "" : it->second) + ",";
    }
    for (std::size_t i = 0; i < all_metrics().size(); ++i) {
        if (i) out += ",";
        auto it = scores.find(all_metrics()[i]);
        if (it != scores.end()) out += format_real(it->second);
    }
    return out;
}

MetricReport evaluate(const Table& train, const Table& test, const Table& synth, const EvalOptions& options) {
    const auto& schema = test.schema();
    if (!(train.schema().size() == schema.size() && synth.schema().size() == schema.size()))
        throw InputError("evaluate: tables have different schemas");
    if (train.empty() || test.empty() || synth.empty()) throw InputError("evaluate: empty table");

    MetricReport report;
    const bool marginal = options.wants(metric::histogram) || options.wants(metric::jensen_shannon) ||
                          options.wants(metric::wasserstein) || options.wants(metric::column_correlation);
    if (marginal) {
        std::map<std::string, std::vector<double>> cols;
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const auto& c = schema.column(i);
            double hi = 0, js = 0, w = 0, cc = 0;
            if (c.is_categorical()) {
                auto p = categorical_histogram(test.column_codes(i), c.cardinality());
                auto q = categorical_histogram(synth.column_codes(i), c.cardinality());
                hi = histogram_intersection(p, q);
                js = jensen_shannon_distance(p, q);
                w = wasserstein_1d(p, q);
                auto corr = column_correlation(p, q);
                cc = corr.value;
                if (corr.fallback) report.flags.push_back("column_correlation fallback: " + c.name);
            } else {
                Vector pooled(static_cast<Eigen::Index>(train.rows() + test.rows()));
                pooled << train.column_values(i), test.column_values(i);
                auto scaler =
                    MinMaxScaler::fit(std::span<const double>(pooled.data(), static_cast<std::size_t>(pooled.size())));
                Vector rt = scaler.apply(test.column_values(i));
                Vector st = scaler.apply(synth.column_values(i));
                auto as_span = [](const Vector& v) {
                    return std::span<const double>(v.data(), static_cast<std::size_t>(v.size()));
                };
                for (auto bins : options.bins) {
                    auto p = numerical_histogram(as_span(rt), bins);
                    auto q = numerical_histogram(as_span(st), bins);
                    double bhi = histogram_intersection(p, q);
                    double bjs = jensen_shannon_distance(p, q);
                    double bw = wasserstein_1d(p, q);
                    auto corr = column_correlation(p, q);
                    if (corr.fallback)
                        report.flags.push_back("column_correlation fallback: " + c.name + " @" + std::to_string(bins));
                    report.per_bins[metric::histogram][bins].push_back(bhi);
                    report.per_bins[metric::jensen_shannon][bins].push_back(bjs);
                    report.per_bins[metric::wasserstein][bins].push_back(bw);
                    report.per_bins[metric::column_correlation][bins].push_back(corr.value);
                    hi += bhi;
                    js += bjs;
                    w += bw;
                    cc += corr.value;
                }
                const auto nb = static_cast<double>(options.bins.size());
                hi /= nb;
                js /= nb;
                w /= nb;
                cc /= nb;
            }
            cols[metric::histogram].push_back(hi);
            cols[metric::jensen_shannon].push_back(js);
            cols[metric::wasserstein].push_back(w);
            cols[metric::column_correlation].push_back(cc);
        }
        for (const auto& [m, v] : cols) {
            if (!options.wants(m)) continue;
            report.per_column[m] = v;
            report.scores[m] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        }
    }
    if (options.wants(metric::associations)) report.scores[metric::associations] = associations_difference(test, synth);
    if (options.wants(metric::dcr)) {
        Rng rng(derive_seed(options.seed, {1}));
        report.scores[metric::dcr] = distance_to_closest_record(synth, test, options.sample_cap, options.dcr_k, rng);
        report.metadata["dcr_k"] = std::to_string(options.dcr_k);
    }
    if (options.wants(metric::likelihood)) {
        Rng rng(derive_seed(options.seed, {2}));
        report.scores[metric::likelihood] = likelihood_approximation(test, synth, options.sample_cap, rng);
    }
    if (options.wants(metric::ml_efficacy) && schema.target()) {
        auto u = ml_efficacy(synth, test, derive_seed(options.seed, {3}));
        report.scores[metric::ml_efficacy] = u.score;
        report.per_model[metric::ml_efficacy] = u.per_model;
        if (u.degenerate) report.flags.push_back("ml_efficacy: single-class training target");
    }
    if (options.wants(metric::dimension_wise) && schema.size() >= 2) {
        auto d = dimension_wise_prediction(synth, test, derive_seed(options.seed, {4}));
        report.scores[metric::dimension_wise] = d.score;
        report.per_column[metric::dimension_wise] = d.per_column;
    }
    for (const auto& [m, v] : report.scores)
        if (!std::isfinite(v)) throw NumericError("metric " + m + " is not finite");
    return report;
}

}  // namespace tabsynth
