#include "tabsynth/netcore.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace tabsynth {

double activate(Activation a, double z) {
    switch (a) {
        case Activation::LeakyRelu: return z > 0.0 ? z : kLeakySlope * z;
        case Activation::Relu: return z > 0.0 ? z : 0.0;
        case Activation::Tanh: return std::tanh(z);
        case Activation::Identity: return z;
    }
    return z;
}

double activate_derivative(Activation a, double z) {
    switch (a) {
        case Activation::LeakyRelu: return z > 0.0 ? 1.0 : kLeakySlope;
        case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

double activate_second_derivative(Activation a, double z) {
    if (a != Activation::Tanh) return 0.0;
    double t = std::tanh(z);
    return -2.0 * t * (1.0 - t * t);
}

namespace {

Matrix apply_elementwise(const Matrix& z, Activation a, double (*f)(Activation, double)) {
    Matrix out(z.rows(), z.cols());
    const double* src = z.data();
    double* dst = out.data();
    const auto n = z.size();
    switch (a) {
        case Activation::Identity:
            if (f == &activate) return z;
            break;
        case Activation::Relu:
            if (f == &activate) return z.cwiseMax(0.0);
            break;
        default: break;
    }
    for (Eigen::Index i = 0; i < n; ++i) dst[i] = f(a, src[i]);
    return out;
}

}  // namespace

Grads& Grads::operator+=(const Grads& other) {
    for (std::size_t l = 0; l < weight.size(); ++l) {
        weight[l] += other.weight[l];
        bias[l] += other.bias[l];
    }
    if (input.size() == other.input.size() && input.size() > 0) input += other.input;
    return *this;
}

Grads& Grads::operator*=(double s) {
    for (std::size_t l = 0; l < weight.size(); ++l) {
        weight[l] *= s;
        bias[l] *= s;
    }
    input *= s;
    return *this;
}

bool Grads::all_finite() const {
    for (std::size_t l = 0; l < weight.size(); ++l)
        if (!weight[l].allFinite() || !bias[l].allFinite()) return false;
    return input.allFinite();
}

Network::Network(NetSpec spec, Rng& rng) : spec_(std::move(spec)) {
    if (spec_.widths.size() != spec_.activations.size())
        throw InputError("network spec: widths and activations differ in length");
    if (spec_.input_width == 0) throw InputError("network spec: zero input width");
    std::size_t in = spec_.input_width;
    for (std::size_t l = 0; l < spec_.widths.size(); ++l) {
        std::size_t out = spec_.widths[l];
        if (out == 0) throw InputError("network spec: zero layer width");
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        DenseLayer layer;
        layer.weight.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
        layer.bias.resize(static_cast<Eigen::Index>(out));
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = u(rng);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = u(rng);
        layer.activation = spec_.activations[l];
        layers_.push_back(std::move(layer));
        in = out;
    }
    std::size_t covered = 0;
    for (const auto& h : spec_.heads) {
        if (h.offset != covered) throw InputError("network spec: output heads must tile the output");
        covered += h.width;
    }
    if (!spec_.heads.empty() && covered != output_width())
        throw InputError("network spec: output heads do not cover the output");
}

ForwardCache Network::forward(const Matrix& batch) const {
    if (static_cast<std::size_t>(batch.cols()) != spec_.input_width)
        throw InputError("forward: batch width " + std::to_string(batch.cols()) + ", expected " +
                         std::to_string(spec_.input_width));
    if (!batch.allFinite()) throw NumericError("forward: non-finite input");
    ForwardCache cache;
    cache.inputs.reserve(layers_.size());
    cache.pre.reserve(layers_.size());
    Matrix a = batch;
    for (const auto& layer : layers_) {
        Matrix z = a * layer.weight;
        z.rowwise() += layer.bias;
        cache.inputs.push_back(std::move(a));
        a = apply_elementwise(z, layer.activation, &activate);
        cache.pre.push_back(std::move(z));
    }
    cache.output = std::move(a);
    return cache;
}

Grads Network::backward(const ForwardCache& cache, const Matrix& output_gradient) const {
    if (cache.pre.size() != layers_.size()) throw InputError("backward: missing forward cache");
    if (output_gradient.rows() != cache.output.rows() || output_gradient.cols() != cache.output.cols())
        throw InputError("backward: output gradient shape mismatch");
    Grads g;
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
    Matrix upstream = output_gradient;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto& layer = layers_[l];
        Matrix delta = upstream.cwiseProduct(apply_elementwise(cache.pre[l], layer.activation, &activate_derivative));
        g.weight[l] = cache.inputs[l].transpose() * delta;
        g.bias[l] = delta.colwise().sum();
        upstream = delta * layer.weight.transpose();
    }
    g.input = std::move(upstream);
    return g;
}

Matrix Network::input_gradient(const ForwardCache& cache) const {
    if (output_width() != 1) throw InputError("input_gradient: network output is not scalar");
    return backward(cache, Matrix::Ones(cache.output.rows(), 1)).input;
}

Grads Network::zero_grads() const {
    Grads g;
    for (const auto& layer : layers_) {
        g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        g.bias.push_back(RowVector::Zero(layer.bias.size()));
    }
    return g;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
}

bool Network::all_finite() const {
    for (const auto& layer : layers_)
        if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    return true;
}

bool Network::operator==(const Network& other) const {
    if (layers_.size() != other.layers_.size() || spec_.input_width != other.spec_.input_width) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& a = layers_[l];
        const auto& b = other.layers_[l];
        if (a.activation != b.activation || a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
            a.weight != b.weight || a.bias != b.bias)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
        return std::bit_cast<double>(v);
    }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw InputError("network blob truncated");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

constexpr std::uint32_t kNetMagic = 0x4E4E5354;  // "TSNN" little-endian

}  // namespace

std::vector<std::uint8_t> Network::serialize() const {
    std::vector<std::uint8_t> out;
    put_u32(out, kNetMagic);
    put_u32(out, kNetworkBlobVersion);
    put_u32(out, static_cast<std::uint32_t>(spec_.input_width));
    put_u32(out, static_cast<std::uint32_t>(layers_.size()));
    for (const auto& layer : layers_) {
        put_u32(out, static_cast<std::uint32_t>(layer.weight.rows()));
        put_u32(out, static_cast<std::uint32_t>(layer.weight.cols()));
        put_u32(out, static_cast<std::uint32_t>(layer.activation));
    }
    put_u32(out, static_cast<std::uint32_t>(spec_.heads.size()));
    for (const auto& h : spec_.heads) {
        put_u32(out, static_cast<std::uint32_t>(h.kind));
        put_u32(out, static_cast<std::uint32_t>(h.offset));
        put_u32(out, static_cast<std::uint32_t>(h.width));
    }
    for (const auto& layer : layers_) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) put_f64(out, layer.weight(r, c));
        for (Eigen::Index c = 0; c < layer.bias.size(); ++c) put_f64(out, layer.bias[c]);
    }
    return out;
}

Network Network::deserialize(std::span<const std::uint8_t> blob) {
    Reader in(blob);
    if (in.u32() != kNetMagic) throw InputError("not a network blob");
    auto version = in.u32();
    if (version != kNetworkBlobVersion)
        throw InputError("unsupported network blob version " + std::to_string(version));
    Network net;
    net.spec_.input_width = in.u32();
    auto n_layers = in.u32();
    std::size_t prev = net.spec_.input_width;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        DenseLayer layer;
        auto rows = in.u32();
        auto cols = in.u32();
        auto act = in.u32();
        if (rows != prev || act > 3) throw InputError("network blob: inconsistent layer shapes");
        layer.weight.resize(rows, cols);
        layer.bias.resize(cols);
        layer.activation = static_cast<Activation>(act);
        net.spec_.widths.push_back(cols);
        net.spec_.activations.push_back(layer.activation);
        net.layers_.push_back(std::move(layer));
        prev = cols;
    }
    auto n_heads = in.u32();
    for (std::uint32_t h = 0; h < n_heads; ++h) {
        OutputHead head;
        auto kind = in.u32();
        if (kind > 1) throw InputError("network blob: unknown head kind");
        head.kind = static_cast<HeadKind>(kind);
        head.offset = in.u32();
        head.width = in.u32();
        net.spec_.heads.push_back(head);
    }
    for (auto& layer : net.layers_) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = in.f64();
        for (Eigen::Index c = 0; c < layer.bias.size(); ++c) layer.bias[c] = in.f64();
    }
    if (!in.done()) throw InputError("network blob has trailing bytes");
    return net;
}

// ---------------------------------------------------------------------------
// Gradient penalty

PenaltyResult gradient_penalty(const Network& critic, const Matrix& real, const Matrix& fake, Rng& rng,
                               double lambda) {
    Vector eps(real.rows());
    for (Eigen::Index r = 0; r < eps.size(); ++r) eps[r] = uniform01(rng);
    return gradient_penalty_at(critic, real, fake, eps, lambda);
}

PenaltyResult gradient_penalty_at(const Network& critic, const Matrix& real, const Matrix& fake,
                                  const Vector& epsilon, double lambda) {
    if (real.rows() != fake.rows() || real.cols() != fake.cols())
        throw InputError("gradient_penalty: real and fake batches differ in shape");
    if (epsilon.size() != real.rows()) throw InputError("gradient_penalty: one epsilon per row required");
    if (lambda < 0.0) throw InputError("gradient_penalty: negative weight");
    if (critic.output_width() != 1) throw InputError("gradient_penalty: critic output is not scalar");

    const auto& layers = critic.layers();
    const std::size_t L = layers.size();
    const auto B = real.rows();

    Matrix mixed = (real.array().colwise() * epsilon.array() + fake.array().colwise() * (1.0 - epsilon.array())).matrix();
    ForwardCache cache = critic.forward(mixed);

    // Input-gradient pass, keeping g_l (adjoint of a_l) and δ_l (adjoint of z_l).
    std::vector<Matrix> g(L + 1), delta(L + 1), dsig(L + 1);
    g[L] = Matrix::Ones(B, 1);
    for (std::size_t l = L; l >= 1; --l) {
        dsig[l] = apply_elementwise(cache.pre[l - 1], layers[l - 1].activation, &activate_derivative);
        delta[l] = g[l].cwiseProduct(dsig[l]);
        g[l - 1] = delta[l] * layers[l - 1].weight.transpose();
    }

    PenaltyResult result;
    result.epsilon = epsilon;
    result.gradient_norms = g[0].rowwise().norm();
    const double scale = lambda / static_cast<double>(B);
    Matrix gbar0(B, g[0].cols());
    double value = 0.0;
    for (Eigen::Index r = 0; r < B; ++r) {
        double n = result.gradient_norms[r];
        value += (n - 1.0) * (n - 1.0);
        if (n > 0.0) gbar0.row(r) = (2.0 * scale * (n - 1.0) / n) * g[0].row(r);
        else gbar0.row(r).setZero();
    }
    result.value = scale * value;

    Grads grads = critic.zero_grads();
    // Reverse of the input-gradient pass (l = 1..L), collecting direct
    // contributions to each z_l through σ'(z_l).
    std::vector<Matrix> zbar_direct(L + 1);
    Matrix gbar = std::move(gbar0);
    for (std::size_t l = 1; l <= L; ++l) {
        const auto& W = layers[l - 1].weight;
        Matrix delta_bar = gbar * W;  // B × out
        grads.weight[l - 1] += gbar.transpose() * delta[l];
        Matrix d2 = apply_elementwise(cache.pre[l - 1], layers[l - 1].activation, &activate_second_derivative);
        zbar_direct[l] = delta_bar.cwiseProduct(g[l]).cwiseProduct(d2);
        gbar = delta_bar.cwiseProduct(dsig[l]);
    }
    // Reverse of the forward pass with the injected z adjoints.
    Matrix abar = Matrix::Zero(B, 1);
    for (std::size_t l = L; l >= 1; --l) {
        Matrix zbar = zbar_direct[l] + abar.cwiseProduct(dsig[l]);
        grads.weight[l - 1] += cache.inputs[l - 1].transpose() * zbar;
        grads.bias[l - 1] += zbar.colwise().sum();
        abar = zbar * layers[l - 1].weight.transpose();
    }
    grads.input = Matrix::Zero(B, real.cols());
    result.grads = std::move(grads);
    return result;
}

// ---------------------------------------------------------------------------
// Gumbel-softmax and heads

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        double m = logits.row(r).maxCoeff();
        auto e = (logits.row(r).array() - m).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

GumbelResult gumbel_softmax_with_noise(const Matrix& logits, const Matrix& noise, double tau, bool hard) {
    if (!(tau > 0.0)) throw InputError("gumbel_softmax: temperature must be positive");
    GumbelResult res;
    res.soft = softmax_rows((logits + noise) / tau);
    if (hard) {
        res.value = Matrix::Zero(logits.rows(), logits.cols());
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < logits.cols(); ++c)
                if (res.soft(r, c) > res.soft(r, best)) best = c;
            res.value(r, best) = 1.0;
        }
    } else {
        res.value = res.soft;
    }
    return res;
}

GumbelResult gumbel_softmax(const Matrix& logits, double tau, Rng& rng, bool hard) {
    if (!(tau > 0.0)) throw InputError("gumbel_softmax: temperature must be positive");
    Matrix noise(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < noise.rows(); ++r)
        for (Eigen::Index c = 0; c < noise.cols(); ++c) {
            double u = uniform01(rng);
            u = std::max(u, 1e-300);
            noise(r, c) = -std::log(-std::log(u) + 1e-300);
        }
    return gumbel_softmax_with_noise(logits, noise, tau, hard);
}

Matrix gumbel_softmax_backward(const Matrix& soft, double tau, const Matrix& grad) {
    Vector inner = soft.cwiseProduct(grad).rowwise().sum();
    Matrix centered = grad.colwise() - inner;
    return soft.cwiseProduct(centered) / tau;
}

HeadOutput apply_heads(const Matrix& raw, const std::vector<OutputHead>& heads, double tau, Rng& rng, bool hard) {
    HeadOutput out;
    out.value.resize(raw.rows(), raw.cols());
    out.soft.resize(raw.rows(), raw.cols());
    for (const auto& h : heads) {
        auto off = static_cast<Eigen::Index>(h.offset);
        auto w = static_cast<Eigen::Index>(h.width);
        if (h.kind == HeadKind::Tanh) {
            Matrix t = raw.middleCols(off, w).array().tanh().matrix();
            out.value.middleCols(off, w) = t;
            out.soft.middleCols(off, w) = t;
        } else {
            auto g = gumbel_softmax(raw.middleCols(off, w), tau, rng, hard);
            out.value.middleCols(off, w) = g.value;
            out.soft.middleCols(off, w) = g.soft;
        }
    }
    return out;
}

Matrix heads_backward(const HeadOutput& out, const std::vector<OutputHead>& heads, double tau, const Matrix& grad) {
    Matrix d(grad.rows(), grad.cols());
    for (const auto& h : heads) {
        auto off = static_cast<Eigen::Index>(h.offset);
        auto w = static_cast<Eigen::Index>(h.width);
        if (h.kind == HeadKind::Tanh) {
            auto t = out.soft.middleCols(off, w).array();
            d.middleCols(off, w) = (grad.middleCols(off, w).array() * (1.0 - t * t)).matrix();
        } else {
            d.middleCols(off, w) = gumbel_softmax_backward(out.soft.middleCols(off, w), tau, grad.middleCols(off, w));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::for_network(const Network& net, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (const auto& layer : net.layers()) {
        s.m_weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        s.v_weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        s.m_bias.push_back(RowVector::Zero(layer.bias.size()));
        s.v_bias.push_back(RowVector::Zero(layer.bias.size()));
    }
    return s;
}

namespace {

template <typename P, typename G>
void adam_update(P& param, const G& grad, P& m, P& v, const AdamConfig& c, double bc1, double bc2) {
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    param.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace

void adam_step(Network& net, const Grads& grads, AdamState& state) {
    auto& layers = net.layers();
    if (grads.weight.size() != layers.size() || state.m_weight.size() != layers.size())
        throw InputError("adam_step: gradient/state shape mismatch");
    ++state.step;
    const auto& c = state.config;
    double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        adam_update(layers[l].weight, grads.weight[l], state.m_weight[l], state.v_weight[l], c, bc1, bc2);
        adam_update(layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l], c, bc1, bc2);
    }
}

}  // namespace tabsynth
