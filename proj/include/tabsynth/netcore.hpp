#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tabsynth/common.hpp"

namespace tabsynth {

enum class Activation : std::uint32_t { LeakyRelu = 0, Relu = 1, Tanh = 2, Identity = 3 };

inline constexpr double kLeakySlope = 0.2;

double activate(Activation a, double z);
double activate_derivative(Activation a, double z);
double activate_second_derivative(Activation a, double z);

enum class HeadKind : std::uint32_t { Tanh = 0, GumbelSoftmax = 1 };

/// Output head applied to a block of the final (identity) layer.
struct OutputHead {
    HeadKind kind;
    std::size_t offset;
    std::size_t width;
};

struct NetSpec {
    std::size_t input_width = 0;
    std::vector<std::size_t> widths;
    std::vector<Activation> activations;
    /// Empty for nets whose raw output is used directly (critic, predictors).
    std::vector<OutputHead> heads;
};

/// Affine map x·W + b followed by a pointwise nonlinearity; W is in × out.
struct DenseLayer {
    Matrix weight;
    RowVector bias;
    Activation activation = Activation::Identity;
};

struct ForwardCache {
    std::vector<Matrix> inputs;  // a_{l-1}, batch × in
    std::vector<Matrix> pre;     // z_l, batch × out
    Matrix output;
};

struct Grads {
    std::vector<Matrix> weight;
    std::vector<RowVector> bias;
    /// ∂loss/∂input, batch × input width.
    Matrix input;

    Grads& operator+=(const Grads& other);
    Grads& operator*=(double s);
    bool all_finite() const;
};

class Network {
public:
    Network() = default;
    /// Uniform(±1/√fan_in) initialization for weights and biases.
    Network(NetSpec spec, Rng& rng);

    const NetSpec& spec() const { return spec_; }
    std::size_t input_width() const { return spec_.input_width; }
    std::size_t output_width() const { return spec_.widths.empty() ? spec_.input_width : spec_.widths.back(); }
    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    ForwardCache forward(const Matrix& batch) const;
    /// Reverse-mode gradients of Σ output ⊙ output_gradient.
    Grads backward(const ForwardCache& cache, const Matrix& output_gradient) const;
    /// Per-row ∂output/∂input for a scalar-output net.
    Matrix input_gradient(const ForwardCache& cache) const;

    Grads zero_grads() const;
    std::size_t parameter_count() const;
    bool all_finite() const;

    /// Little-endian blob: "TSNN", version, shapes, heads, row-major f64 arrays.
    std::vector<std::uint8_t> serialize() const;
    static Network deserialize(std::span<const std::uint8_t> blob);

    bool operator==(const Network& other) const;

private:
    NetSpec spec_;
    std::vector<DenseLayer> layers_;
};

inline constexpr std::uint32_t kNetworkBlobVersion = 1;

struct PenaltyResult {
    double value = 0.0;
    Grads grads;
    /// ‖∇x̂ D(x̂)‖₂ per row.
    Vector gradient_norms;
    /// Interpolation coefficients ε per row.
    Vector epsilon;
};

/// λ·mean_rows(‖∇x̂ D(x̂)‖₂ − 1)² on x̂ = ε·real + (1−ε)·fake, ε ~ U(0,1) per row,
/// with parameter gradients obtained by differentiating through the input gradient.
PenaltyResult gradient_penalty(const Network& critic, const Matrix& real, const Matrix& fake, Rng& rng,
                               double lambda);
/// Same computation with caller-chosen interpolation coefficients.
PenaltyResult gradient_penalty_at(const Network& critic, const Matrix& real, const Matrix& fake,
                                  const Vector& epsilon, double lambda);

struct GumbelResult {
    /// Forward value: soft sample, or its one-hot discretization when hard.
    Matrix value;
    /// Soft sample softmax((logits + G)/τ), used for gradients.
    Matrix soft;
};

GumbelResult gumbel_softmax(const Matrix& logits, double tau, Rng& rng, bool hard);
/// Deterministic variant with explicit noise (zero noise gives softmax(logits/τ)).
GumbelResult gumbel_softmax_with_noise(const Matrix& logits, const Matrix& noise, double tau, bool hard);
/// Straight-through backward: gradient through the soft sample.
Matrix gumbel_softmax_backward(const Matrix& soft, double tau, const Matrix& grad);

Matrix softmax_rows(const Matrix& logits);

struct HeadOutput {
    Matrix value;
    /// Tanh outputs for tanh heads, soft samples for softmax heads.
    Matrix soft;
};

HeadOutput apply_heads(const Matrix& raw, const std::vector<OutputHead>& heads, double tau, Rng& rng, bool hard);
Matrix heads_backward(const HeadOutput& out, const std::vector<OutputHead>& heads, double tau, const Matrix& grad);

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<Matrix> m_weight, v_weight;
    std::vector<RowVector> m_bias, v_bias;
    std::uint64_t step = 0;

    static AdamState for_network(const Network& net, AdamConfig config);
};

void adam_step(Network& net, const Grads& grads, AdamState& state);

}  // namespace tabsynth
