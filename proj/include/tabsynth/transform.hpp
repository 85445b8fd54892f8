#pragma once

#include <span>
#include <string>
#include <vector>

#include "tabsynth/common.hpp"
#include "tabsynth/data.hpp"

namespace tabsynth {

/// One-dimensional Gaussian mixture used for mode-specific normalization.
///
/// Components below the weight floor stay in the arrays but are masked out;
/// the weights of active components sum to one.
struct GmmModel {
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> stds;
    std::vector<bool> active;
    /// Set for constant columns: one mode with a floored std.
    bool degenerate = false;
    /// Training log-likelihood after each EM iteration of the selected fit.
    std::vector<double> log_likelihood_trace;

    std::size_t size() const { return weights.size(); }
    std::vector<std::size_t> active_indices() const;
    std::size_t active_count() const;
    /// Posterior responsibilities over active components, in active order.
    std::vector<double> responsibilities(double value) const;
    double log_density(double value) const;

    nlohmann::json to_json() const;
    static GmmModel from_json(const nlohmann::json& j);
};

struct GmmOptions {
    std::size_t max_modes = 10;
    double weight_floor = 0.005;
    std::size_t max_iterations = 300;
    double tolerance = 1e-10;
    std::uint64_t seed = 0;
};

inline constexpr double kDegenerateStd = 1e-6;

/// EM fit with k-means++ initialization. Component counts 1..max_modes are
/// each fitted and the BIC-minimizing one kept; components whose weight falls
/// below the floor are then deactivated.
GmmModel fit_gmm(std::span<const double> values, const GmmOptions& options = {});

struct NumericalCode {
    double alpha;
    /// Index into GmmModel components (not into the active list).
    std::size_t mode;
};

NumericalCode encode_numerical(const GmmModel& g, double value, Rng& rng);
double decode_numerical(const GmmModel& g, double alpha, std::size_t mode);

enum class SpanKind { Alpha, Modes, Categories };

/// Contiguous block of the encoded vector.
struct Span {
    SpanKind kind;
    std::size_t column;  // schema column index
    std::size_t offset;
    std::size_t width;
};

/// Encoded row layout: per numerical column an alpha slot followed by one
/// indicator per active mode; per categorical column a one-hot block.
class EncodedLayout {
public:
    EncodedLayout() = default;
    explicit EncodedLayout(std::vector<Span> spans);

    const std::vector<Span>& spans() const { return spans_; }
    std::size_t width() const { return width_; }
    /// Spans that are one-hot (mode indicators and categories).
    std::vector<Span> discrete_spans() const;
    /// The span holding column `column`'s categories or modes.
    const Span& discrete_span_of(std::size_t column) const;

private:
    std::vector<Span> spans_;
    std::size_t width_ = 0;
};

struct TransformerOptions {
    GmmOptions gmm;
};

class DataTransformer {
public:
    DataTransformer() = default;

    void fit(const Table& t, const TransformerOptions& options = {});
    bool fitted() const { return fitted_; }

    Matrix transform(const Table& t, Rng& rng) const;
    /// Accepts soft spans; the largest entry of each span wins, ties to the lowest index.
    Table inverse_transform(const Matrix& encoded) const;

    const Schema& schema() const { return schema_; }
    const EncodedLayout& layout() const { return layout_; }
    /// GMM for schema column `column` (numerical columns only).
    const GmmModel& gmm(std::size_t column) const;

    nlohmann::json to_json() const;
    static DataTransformer from_json(const nlohmann::json& j);

private:
    void build_layout();
    void require_fitted() const;

    Schema schema_;
    std::vector<GmmModel> gmms_;  // by numerical slot
    EncodedLayout layout_;
    bool fitted_ = false;
};

/// Index of the maximum entry, ties resolved to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Min-max scaling with stored parameters; unseen values are not clipped.
struct MinMaxScaler {
    double min = 0.0;
    double max = 0.0;
    bool constant = false;

    static MinMaxScaler fit(std::span<const double> values);
    double apply(double v) const;
    Vector apply(const Vector& v) const;
};

struct MinMaxResult {
    Vector scaled;
    MinMaxScaler scaler;
};

MinMaxResult minmax_fit_apply(std::span<const double> values);

/// Maps labels to their index in `categories`; unknown labels are an error.
std::vector<std::int32_t> label_encode(std::span<const std::string> labels,
                                       const std::vector<std::string>& categories);
std::vector<std::string> label_decode(std::span<const std::int32_t> codes,
                                      const std::vector<std::string>& categories);

}  // namespace tabsynth
