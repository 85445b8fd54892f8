#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tabsynth/common.hpp"
#include "tabsynth/data.hpp"

namespace tabsynth {

/// Normalized histogram on a fixed grid. `positions` are the support points
/// used by the Wasserstein distance.
struct GridHistogram {
    std::vector<double> positions;
    std::vector<double> mass;

    std::size_t bins() const { return mass.size(); }
};

/// Uniform bins on [0,1] for already min-max-scaled values; values outside
/// [0,1] fall into the end bins. Support points are linspace(0, 1, bins).
GridHistogram numerical_histogram(std::span<const double> scaled, std::size_t bins);
/// One bin per category, support points 0..C−1 (unit spacing).
GridHistogram categorical_histogram(std::span<const std::int32_t> codes, std::size_t categories);

double histogram_intersection(const GridHistogram& p, const GridHistogram& q);
/// √JS with base-2 logarithms.
double jensen_shannon_distance(const GridHistogram& p, const GridHistogram& q);
/// W₁ between the two weighted grids.
double wasserstein_1d(const GridHistogram& p, const GridHistogram& q);

struct ColumnCorrelation {
    double value = 0.0;
    /// Zero-variance mass vector: value is the histogram intersection instead.
    bool fallback = false;
};

/// Pearson correlation of the two mass vectors, clamped to [0,1].
ColumnCorrelation column_correlation(const GridHistogram& p, const GridHistogram& q);

double pearson(std::span<const double> a, std::span<const double> b);
/// √(χ²/(n·(min(r,c)−1))) over the observed categories; no bias correction.
double cramers_v(std::span<const std::int32_t> a, std::span<const std::int32_t> b);
/// √(between-category SS / total SS); 0 when the total SS vanishes.
double correlation_ratio(std::span<const std::int32_t> categories, std::span<const double> values);

/// Mixed-type association matrix: Pearson (num–num), Cramér's V (cat–cat),
/// correlation ratio (num–cat). Diagonal is 1.
Matrix association_matrix(const Table& t);
double associations_difference(const Table& real, const Table& synth);

/// Min-max numericals (fitted on `reference`) and one-hot categoricals.
Matrix joint_features(const Table& t, const Table& reference);

/// Mean over synthetic rows of the distance to the k-th nearest of up to
/// `sample_cap` randomly chosen test rows.
double distance_to_closest_record(const Table& synth, const Table& test, std::size_t sample_cap, std::size_t k,
                                  Rng& rng);
/// Mean over up to `sample_cap` random test rows of the distance to the nearest synthetic row.
double likelihood_approximation(const Table& test, const Table& synth, std::size_t sample_cap, Rng& rng);

/// Distance from each query row to its k-th nearest reference row (exact Euclidean).
Vector kth_neighbor_distances(const Matrix& queries, const Matrix& reference, std::size_t k);

struct UtilityScore {
    double score = 0.0;
    /// Model name → score.
    std::map<std::string, double> per_model;
    bool degenerate = false;
};

/// Trains the three task-appropriate predictors on `train`, scores each on `test`, returns the mean.
UtilityScore ml_efficacy(const Table& train, const Table& test, std::uint64_t seed = 0);

struct DimensionWiseScore {
    double score = 0.0;
    std::vector<double> per_column;
};

DimensionWiseScore dimension_wise_prediction(const Table& train, const Table& test, std::uint64_t seed = 0);

namespace metric {
inline const std::string ml_efficacy = "ml_efficacy";
inline const std::string dimension_wise = "dimension_wise_prediction";
inline const std::string dcr = "distance_to_closest_record";
inline const std::string likelihood = "likelihood_approximation";
inline const std::string associations = "associations_difference";
inline const std::string histogram = "histogram_intersection";
inline const std::string jensen_shannon = "jensen_shannon_distance";
inline const std::string wasserstein = "wasserstein_distance";
inline const std::string column_correlation = "column_correlation";
}  // namespace metric

/// Canonical order of the nine metrics.
const std::vector<std::string>& all_metrics();
/// The four metrics chosen to summarize each evaluation dimension.
const std::vector<std::string>& representative_metrics();

struct EvalOptions {
    std::set<std::string> metrics;  // empty: all nine
    std::size_t sample_cap = 5000;
    std::size_t dcr_k = 1;
    std::vector<std::size_t> bins{25, 50, 100};
    std::uint64_t seed = 0;

    bool wants(const std::string& m) const { return metrics.empty() || metrics.count(m) > 0; }
};

struct MetricReport {
    std::map<std::string, double> scores;
    /// metric → per-column scores (schema order; empty entries for skipped columns are absent).
    std::map<std::string, std::vector<double>> per_column;
    /// metric → bins → per-numerical-column score, for the marginal metrics.
    std::map<std::string, std::map<std::size_t, std::vector<double>>> per_bins;
    /// metric → model → score.
    std::map<std::string, std::map<std::string, double>> per_model;
    std::map<std::string, std::string> metadata;
    std::vector<std::string> flags;

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    /// Header and row of the flat one-row-per-cell CSV form.
    static std::string csv_header();
    std::string csv_row() const;
};

/// Full evaluation of a synthetic table against real train/test data:
/// marginal and column-pair metrics compare synth with test (binning from
/// train ∪ test); utility and joint metrics fit on synth and score on test.
MetricReport evaluate(const Table& train, const Table& test, const Table& synth, const EvalOptions& options = {});

}  // namespace tabsynth
