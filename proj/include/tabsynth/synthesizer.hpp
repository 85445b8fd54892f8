#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tabsynth/common.hpp"
#include "tabsynth/data.hpp"
#include "tabsynth/netcore.hpp"
#include "tabsynth/transform.hpp"

namespace tabsynth {

enum class Variant { Ctgan, MargCtgan, CtganRaw };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Training-by-sampling condition distribution over categorical columns.
///
/// A column is picked uniformly; within it a category is picked with
/// probability proportional to log(1 + training frequency).
class CondSampler {
public:
    struct Batch {
        /// batch × width, one nonzero entry per row.
        Matrix cond;
        /// Index among categorical columns (not the schema index).
        std::vector<std::size_t> column;
        std::vector<std::int32_t> category;
    };

    CondSampler() = default;
    explicit CondSampler(const Table& train);

    /// Width of the conditional vector (total categories over categorical columns).
    std::size_t width() const { return width_; }
    std::size_t column_count() const { return counts_.size(); }
    /// Schema column index of categorical column `j`.
    std::size_t schema_column(std::size_t j) const { return schema_columns_.at(j); }
    std::size_t offset(std::size_t j) const { return offsets_.at(j); }
    const std::vector<std::size_t>& counts(std::size_t j) const { return counts_.at(j); }
    /// Log-frequency sampling distribution of column `j`.
    const std::vector<double>& probabilities(std::size_t j) const { return log_probs_.at(j); }
    /// Raw frequency distribution of column `j` (used when sampling).
    std::vector<double> frequencies(std::size_t j) const;

    Batch sample(std::size_t batch, Rng& rng) const;
    /// Conditions drawn from the raw training frequencies.
    Batch sample_original(std::size_t batch, Rng& rng) const;
    /// Every row conditioned on the same (column, category).
    Batch fixed(std::size_t batch, std::size_t column, std::int32_t category) const;

    /// Uniformly chosen training row with the given category; if none exist in
    /// this subset, another category is drawn from the sampling distribution.
    std::size_t sample_row(std::size_t column, std::int32_t& category, Rng& rng) const;

    nlohmann::json to_json() const;
    static CondSampler from_json(const nlohmann::json& j);

private:
    void finish();

    std::vector<std::size_t> schema_columns_;
    std::vector<std::size_t> offsets_;
    std::vector<std::vector<std::size_t>> counts_;
    std::vector<std::vector<double>> log_probs_;
    std::vector<std::vector<std::vector<std::size_t>>> rows_;  // not serialized
    std::size_t width_ = 0;
};

/// Decorrelating projection f(x) = Wᵀ(x − μ) with a square orthonormal W.
struct PcaTransform {
    RowVector mean;
    Matrix components;  // d × d, column k is the k-th principal direction
    Vector eigenvalues;  // descending
    std::size_t rank = 0;

    static PcaTransform identity(std::size_t width);
    std::size_t width() const { return static_cast<std::size_t>(components.rows()); }
    Matrix apply(const Matrix& x) const;

    nlohmann::json to_json() const;
    static PcaTransform from_json(const nlohmann::json& j);
};

/// Eigendecomposition of the sample covariance; eigenvalues ≤ 1e-10·max do not count towards rank.
PcaTransform fit_pca(const Matrix& encoded);

struct Moments {
    RowVector mean;
    /// Population standard deviation (divisor n).
    RowVector std;
};

Moments batch_moments(const Matrix& features);

struct MargLoss {
    double value = 0.0;
    double mean_term = 0.0;
    double std_term = 0.0;
    /// ∂value/∂fake, batch × width.
    Matrix fake_gradient;
};

/// ‖mean f(real) − mean f(fake)‖₂ + ‖std f(real) − std f(fake)‖₂.
MargLoss marg_loss(const Matrix& real, const Matrix& fake, const PcaTransform& f);

struct CondLoss {
    double value = 0.0;
    /// ∂value/∂logits over the full encoded width (zero outside chosen spans).
    Matrix logit_gradient;
};

/// Mean cross-entropy of the chosen column's span against the chosen category.
/// `probabilities` holds per-span distributions over the encoded layout.
double cond_loss(const Matrix& probabilities, const EncodedLayout& layout, const CondSampler& sampler,
                 const CondSampler::Batch& cond);
/// Same loss evaluated on raw logits (softmax per chosen span) with its gradient.
CondLoss cond_loss_from_logits(const Matrix& logits, const EncodedLayout& layout, const CondSampler& sampler,
                               const CondSampler::Batch& cond);

struct TrainConfig {
    Variant variant = Variant::MargCtgan;
    std::size_t epochs = 300;
    std::size_t batch_size = 500;
    double gp_lambda = 10.0;
    std::size_t critic_steps = 1;
    std::size_t latent_width = 128;
    std::vector<std::size_t> generator_widths{256, 256};
    std::vector<std::size_t> critic_widths{256, 256};
    AdamConfig generator_adam;
    AdamConfig critic_adam;
    double tau = 0.2;
    std::size_t max_modes = 10;
    double weight_floor = 0.005;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLoss {
    double critic = 0.0;       // L_WGP including penalty
    double wasserstein = 0.0;  // mean D(real) − mean D(fake)
    double penalty = 0.0;
    double adversarial = 0.0;  // −mean D(fake) in the generator step
    double cond = 0.0;
    double marg = 0.0;
};

struct SynthModel {
    DataTransformer transformer;
    Network generator;
    Network critic;
    CondSampler cond_sampler;
    std::optional<PcaTransform> projection;  // absent for ctgan
    TrainConfig config;
    std::vector<EpochLoss> trace;
    std::vector<std::string> diagnostics;

    const Schema& schema() const { return transformer.schema(); }
};

struct TrainOptions {
    /// Replaces the fitted projection (tests of the ablation wiring).
    std::optional<PcaTransform> projection_override;
    /// Called after every epoch with (epoch index, losses).
    std::function<void(std::size_t, const EpochLoss&)> on_epoch;
};

SynthModel train(const Table& train_table, const TrainConfig& config, const TrainOptions& options = {});

/// Generates n rows with hard one-hot spans, conditions drawn from training frequencies.
Table sample(const SynthModel& model, std::size_t n, Rng& rng);
/// Generates n rows all conditioned on (schema column, category).
Table sample_conditioned(const SynthModel& model, std::size_t n, std::size_t column, std::int32_t category, Rng& rng);
/// Raw encoded generator output (hard spans), used by tests.
Matrix generate_encoded(const SynthModel& model, const CondSampler::Batch& cond, Rng& rng, bool hard);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save(const SynthModel& model, const std::filesystem::path& path);
SynthModel load(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize(const SynthModel& model);
SynthModel deserialize(std::span<const std::uint8_t> bytes);

}  // namespace tabsynth
