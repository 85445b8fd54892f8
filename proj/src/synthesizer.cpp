#include "tabsynth/synthesizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace tabsynth {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Ctgan: return "ctgan";
        case Variant::MargCtgan: return "margctgan";
        case Variant::CtganRaw: return "ctgan-raw";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "ctgan") return Variant::Ctgan;
    if (s == "margctgan") return Variant::MargCtgan;
    if (s == "ctgan-raw") return Variant::CtganRaw;
    throw InputError("unknown variant '" + s + "' (expected ctgan, margctgan or ctgan-raw)");
}

// ---------------------------------------------------------------------------
// CondSampler

namespace {

std::size_t draw(const std::vector<double>& probs, Rng& rng) {
    double u = uniform01(rng);
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] <= 0.0) continue;
        acc += probs[k];
        last = k;
        if (u < acc) return k;
    }
    return last;
}

}  // namespace

CondSampler::CondSampler(const Table& train) {
    const auto& schema = train.schema();
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& c = schema.column(i);
        if (!c.is_categorical()) continue;
        schema_columns_.push_back(i);
        std::vector<std::size_t> counts(c.cardinality(), 0);
        std::vector<std::vector<std::size_t>> rows(c.cardinality());
        for (std::size_t r = 0; r < train.rows(); ++r) {
            auto k = static_cast<std::size_t>(train.category(r, i));
            ++counts[k];
            rows[k].push_back(r);
        }
        counts_.push_back(std::move(counts));
        rows_.push_back(std::move(rows));
    }
    finish();
}

void CondSampler::finish() {
    offsets_.clear();
    log_probs_.clear();
    width_ = 0;
    for (const auto& counts : counts_) {
        offsets_.push_back(width_);
        width_ += counts.size();
        std::vector<double> p(counts.size());
        double total = 0.0;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            p[k] = std::log1p(static_cast<double>(counts[k]));
            total += p[k];
        }
        if (total > 0.0)
            for (auto& v : p) v /= total;
        log_probs_.push_back(std::move(p));
    }
}

std::vector<double> CondSampler::frequencies(std::size_t j) const {
    const auto& c = counts_.at(j);
    double total = 0.0;
    for (auto v : c) total += static_cast<double>(v);
    std::vector<double> p(c.size(), 0.0);
    if (total > 0.0)
        for (std::size_t k = 0; k < c.size(); ++k) p[k] = static_cast<double>(c[k]) / total;
    return p;
}

CondSampler::Batch CondSampler::sample(std::size_t batch, Rng& rng) const {
    Batch b;
    b.cond = Matrix::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(width_));
    if (counts_.empty()) return b;
    for (std::size_t r = 0; r < batch; ++r) {
        auto j = uniform_index(rng, counts_.size());
        auto k = draw(log_probs_[j], rng);
        b.column.push_back(j);
        b.category.push_back(static_cast<std::int32_t>(k));
        b.cond(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(offsets_[j] + k)) = 1.0;
    }
    return b;
}

CondSampler::Batch CondSampler::sample_original(std::size_t batch, Rng& rng) const {
    Batch b;
    b.cond = Matrix::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(width_));
    if (counts_.empty()) return b;
    std::vector<std::vector<double>> freq;
    for (std::size_t j = 0; j < counts_.size(); ++j) freq.push_back(frequencies(j));
    for (std::size_t r = 0; r < batch; ++r) {
        auto j = uniform_index(rng, counts_.size());
        auto k = draw(freq[j], rng);
        b.column.push_back(j);
        b.category.push_back(static_cast<std::int32_t>(k));
        b.cond(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(offsets_[j] + k)) = 1.0;
    }
    return b;
}

CondSampler::Batch CondSampler::fixed(std::size_t batch, std::size_t column, std::int32_t category) const {
    if (column >= counts_.size() || category < 0 || static_cast<std::size_t>(category) >= counts_[column].size())
        throw InputError("condition out of range");
    Batch b;
    b.cond = Matrix::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(width_));
    b.column.assign(batch, column);
    b.category.assign(batch, category);
    b.cond.col(static_cast<Eigen::Index>(offsets_[column] + static_cast<std::size_t>(category))).setOnes();
    return b;
}

std::size_t CondSampler::sample_row(std::size_t column, std::int32_t& category, Rng& rng) const {
    if (rows_.empty()) throw InputError("condition sampler has no training rows attached");
    const auto& rows = rows_.at(column);
    auto k = static_cast<std::size_t>(category);
    while (rows[k].empty()) {
        k = draw(log_probs_[column], rng);
        category = static_cast<std::int32_t>(k);
    }
    return rows[k][uniform_index(rng, rows[k].size())];
}

nlohmann::json CondSampler::to_json() const {
    return {{"columns", schema_columns_}, {"counts", counts_}};
}

CondSampler CondSampler::from_json(const nlohmann::json& j) {
    CondSampler cs;
    cs.schema_columns_ = j.at("columns").get<std::vector<std::size_t>>();
    cs.counts_ = j.at("counts").get<std::vector<std::vector<std::size_t>>>();
    if (cs.schema_columns_.size() != cs.counts_.size()) throw InputError("inconsistent condition sampler");
    cs.finish();
    return cs;
}

// ---------------------------------------------------------------------------
// PCA

PcaTransform PcaTransform::identity(std::size_t width) {
    PcaTransform p;
    auto d = static_cast<Eigen::Index>(width);
    p.mean = RowVector::Zero(d);
    p.components = Matrix::Identity(d, d);
    p.eigenvalues = Vector::Ones(d);
    p.rank = width;
    return p;
}

Matrix PcaTransform::apply(const Matrix& x) const {
    if (x.cols() != components.rows()) throw InputError("projection width mismatch");
    return (x.rowwise() - mean) * components;
}

nlohmann::json PcaTransform::to_json() const {
    std::vector<double> mu(mean.data(), mean.data() + mean.size());
    std::vector<double> ev(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(components.size()));
    for (Eigen::Index r = 0; r < components.rows(); ++r)
        for (Eigen::Index c = 0; c < components.cols(); ++c) w.push_back(components(r, c));
    return {{"mean", mu}, {"eigenvalues", ev}, {"components", w}, {"rank", rank}};
}

PcaTransform PcaTransform::from_json(const nlohmann::json& j) {
    PcaTransform p;
    auto mu = j.at("mean").get<std::vector<double>>();
    auto ev = j.at("eigenvalues").get<std::vector<double>>();
    auto w = j.at("components").get<std::vector<double>>();
    auto d = static_cast<Eigen::Index>(mu.size());
    if (ev.size() != mu.size() || w.size() != mu.size() * mu.size()) throw InputError("inconsistent projection");
    p.mean = Eigen::Map<RowVector>(mu.data(), d);
    p.eigenvalues = Eigen::Map<Vector>(ev.data(), d);
    p.components.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) p.components(r, c) = w[static_cast<std::size_t>(r * d + c)];
    p.rank = j.at("rank").get<std::size_t>();
    return p;
}

PcaTransform fit_pca(const Matrix& encoded) {
    if (encoded.rows() < 2) throw InputError("fit_pca needs at least 2 rows");
    PcaTransform p;
    p.mean = encoded.colwise().mean();
    Matrix centered = encoded.rowwise() - p.mean;
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(encoded.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
    const auto d = cov.rows();
    // Eigen returns ascending order.
    p.eigenvalues.resize(d);
    p.components.resize(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        p.eigenvalues[k] = solver.eigenvalues()[d - 1 - k];
        Vector v = solver.eigenvectors().col(d - 1 - k);
        Eigen::Index big = 0;
        for (Eigen::Index i = 1; i < d; ++i)
            if (std::abs(v[i]) > std::abs(v[big])) big = i;
        if (v[big] < 0.0) v = -v;
        p.components.col(k) = v;
    }
    double top = d > 0 ? std::max(p.eigenvalues[0], 0.0) : 0.0;
    p.rank = 0;
    for (Eigen::Index k = 0; k < d; ++k)
        if (p.eigenvalues[k] > 1e-10 * top) ++p.rank;
    return p;
}

// ---------------------------------------------------------------------------
// Losses

Moments batch_moments(const Matrix& features) {
    if (features.rows() == 0) throw InputError("batch_moments: empty batch");
    Moments m;
    m.mean = features.colwise().mean();
    Matrix centered = features.rowwise() - m.mean;
    m.std = (centered.colwise().squaredNorm() / static_cast<double>(features.rows())).cwiseSqrt();
    return m;
}

MargLoss marg_loss(const Matrix& real, const Matrix& fake, const PcaTransform& f) {
    if (real.cols() != fake.cols()) throw InputError("marg_loss: real and fake widths differ");
    Matrix fr = f.apply(real);
    Matrix ff = f.apply(fake);
    auto mr = batch_moments(fr);
    auto mf = batch_moments(ff);
    RowVector dmean = mr.mean - mf.mean;
    RowVector dstd = mr.std - mf.std;
    MargLoss out;
    out.mean_term = dmean.norm();
    out.std_term = dstd.norm();
    out.value = out.mean_term + out.std_term;

    const auto B = static_cast<double>(fake.rows());
    Matrix dF = Matrix::Zero(ff.rows(), ff.cols());
    if (out.mean_term > 0.0) dF.rowwise() += -dmean / (out.mean_term * B);
    if (out.std_term > 0.0) {
        RowVector ds = -dstd / out.std_term;  // ∂L_std/∂std_fake
        Matrix centered = ff.rowwise() - mf.mean;
        for (Eigen::Index j = 0; j < ff.cols(); ++j) {
            if (mf.std[j] > 0.0) dF.col(j) += centered.col(j) * (ds[j] / (B * mf.std[j]));
        }
    }
    out.fake_gradient = dF * f.components.transpose();
    return out;
}

namespace {

const Span& chosen_span(const EncodedLayout& layout, const CondSampler& sampler, std::size_t j) {
    return layout.discrete_span_of(sampler.schema_column(j));
}

}  // namespace

double cond_loss(const Matrix& probabilities, const EncodedLayout& layout, const CondSampler& sampler,
                 const CondSampler::Batch& cond) {
    if (cond.column.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < cond.column.size(); ++r) {
        const auto& span = chosen_span(layout, sampler, cond.column[r]);
        double p = probabilities(static_cast<Eigen::Index>(r),
                                 static_cast<Eigen::Index>(span.offset + static_cast<std::size_t>(cond.category[r])));
        total += -std::log(std::max(p, 1e-300));
    }
    return total / static_cast<double>(cond.column.size());
}

CondLoss cond_loss_from_logits(const Matrix& logits, const EncodedLayout& layout, const CondSampler& sampler,
                               const CondSampler::Batch& cond) {
    CondLoss out;
    out.logit_gradient = Matrix::Zero(logits.rows(), logits.cols());
    if (cond.column.empty()) return out;
    const double B = static_cast<double>(cond.column.size());
    for (std::size_t r = 0; r < cond.column.size(); ++r) {
        const auto& span = chosen_span(layout, sampler, cond.column[r]);
        auto row = static_cast<Eigen::Index>(r);
        auto off = static_cast<Eigen::Index>(span.offset);
        auto w = static_cast<Eigen::Index>(span.width);
        RowVector z = logits.row(row).segment(off, w);
        double m = z.maxCoeff();
        RowVector e = (z.array() - m).exp().matrix();
        double s = e.sum();
        RowVector p = e / s;
        auto k = static_cast<Eigen::Index>(cond.category[r]);
        out.value += -(z[k] - m - std::log(s));
        p[k] -= 1.0;
        out.logit_gradient.row(row).segment(off, w) = p / B;
    }
    out.value /= B;
    return out;
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
    if (epochs < 1) throw InputError("epochs must be at least 1");
    if (batch_size < 2 || batch_size % 2 != 0) throw InputError("batch size must be even and at least 2");
    if (gp_lambda < 0.0) throw InputError("gradient penalty weight must be non-negative");
    if (critic_steps < 1) throw InputError("critic steps must be at least 1");
    if (latent_width < 1) throw InputError("latent width must be positive");
    if (!(tau > 0.0)) throw InputError("Gumbel temperature must be positive");
}

namespace {

nlohmann::json adam_json(const AdamConfig& a) {
    return {{"lr", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.epsilon}};
}

AdamConfig adam_from(const nlohmann::json& j, AdamConfig a) {
    a.learning_rate = j.value("lr", a.learning_rate);
    a.beta1 = j.value("beta1", a.beta1);
    a.beta2 = j.value("beta2", a.beta2);
    a.epsilon = j.value("eps", a.epsilon);
    return a;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
    return {{"variant", to_string(variant)},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"gp_lambda", gp_lambda},
            {"critic_steps", critic_steps},
            {"latent_width", latent_width},
            {"generator_widths", generator_widths},
            {"critic_widths", critic_widths},
            {"generator_adam", adam_json(generator_adam)},
            {"critic_adam", adam_json(critic_adam)},
            {"tau", tau},
            {"max_modes", max_modes},
            {"weight_floor", weight_floor},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.gp_lambda = j.value("gp_lambda", c.gp_lambda);
        c.critic_steps = j.value("critic_steps", c.critic_steps);
        c.latent_width = j.value("latent_width", c.latent_width);
        c.generator_widths = j.value("generator_widths", c.generator_widths);
        c.critic_widths = j.value("critic_widths", c.critic_widths);
        if (j.contains("generator_adam")) c.generator_adam = adam_from(j["generator_adam"], c.generator_adam);
        if (j.contains("critic_adam")) c.critic_adam = adam_from(j["critic_adam"], c.critic_adam);
        c.tau = j.value("tau", c.tau);
        c.max_modes = j.value("max_modes", c.max_modes);
        c.weight_floor = j.value("weight_floor", c.weight_floor);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed training config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<OutputHead> heads_for(const EncodedLayout& layout) {
    std::vector<OutputHead> heads;
    for (const auto& s : layout.spans())
        heads.push_back({s.kind == SpanKind::Alpha ? HeadKind::Tanh : HeadKind::GumbelSoftmax, s.offset, s.width});
    return heads;
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

struct Generated {
    ForwardCache cache;
    HeadOutput heads;
};

Generated run_generator(const Network& g, const Matrix& z, const Matrix& cond, double tau, Rng& rng, bool hard) {
    Generated out;
    out.cache = g.forward(hconcat(z, cond));
    out.heads = apply_heads(out.cache.output, g.spec().heads, tau, rng, hard);
    return out;
}

void require_finite(double v, const char* what, std::size_t epoch, std::size_t step) {
    if (!std::isfinite(v))
        throw NumericError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
}

}  // namespace

SynthModel train(const Table& train_table, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (train_table.empty()) throw InputError("cannot train on an empty table");

    SynthModel model;
    model.config = config;
    Rng rng(config.seed);

    TransformerOptions topt;
    topt.gmm.max_modes = config.max_modes;
    topt.gmm.weight_floor = config.weight_floor;
    topt.gmm.seed = derive_seed(config.seed, {0x67'6d'6dULL});
    model.transformer.fit(train_table, topt);
    const Matrix data = model.transformer.transform(train_table, rng);
    const auto& layout = model.transformer.layout();
    const auto width = static_cast<Eigen::Index>(layout.width());

    model.cond_sampler = CondSampler(train_table);
    const auto& cs = model.cond_sampler;

    if (config.variant == Variant::MargCtgan) {
        model.projection = options.projection_override ? *options.projection_override : fit_pca(data);
        if (train_table.rows() < layout.width()) {
            model.diagnostics.push_back(
                "rank-deficient projection: " + std::to_string(train_table.rows()) + " training rows < " +
                std::to_string(layout.width()) + " encoded features (rank " + std::to_string(model.projection->rank) +
                "); PCA-space moment matching degrades here, consider variant ctgan-raw");
        }
    } else if (config.variant == Variant::CtganRaw) {
        model.projection = options.projection_override ? *options.projection_override
                                                        : PcaTransform::identity(layout.width());
    }
    if (model.projection && model.projection->width() != layout.width())
        throw InputError("projection width does not match the encoded width");

    NetSpec gspec;
    gspec.input_width = config.latent_width + cs.width();
    for (auto w : config.generator_widths) {
        gspec.widths.push_back(w);
        gspec.activations.push_back(Activation::Relu);
    }
    gspec.widths.push_back(layout.width());
    gspec.activations.push_back(Activation::Identity);
    gspec.heads = heads_for(layout);

    NetSpec dspec;
    dspec.input_width = layout.width() + cs.width();
    for (auto w : config.critic_widths) {
        dspec.widths.push_back(w);
        dspec.activations.push_back(Activation::LeakyRelu);
    }
    dspec.widths.push_back(1);
    dspec.activations.push_back(Activation::Identity);

    model.generator = Network(gspec, rng);
    model.critic = Network(dspec, rng);
    Network& G = model.generator;
    Network& D = model.critic;
    AdamState g_opt = AdamState::for_network(G, config.generator_adam);
    AdamState d_opt = AdamState::for_network(D, config.critic_adam);

    const std::size_t B = config.batch_size;
    const auto Bi = static_cast<Eigen::Index>(B);
    const double invB = 1.0 / static_cast<double>(B);
    const std::size_t steps = std::max<std::size_t>(1, train_table.rows() / B);
    const auto latent = static_cast<Eigen::Index>(config.latent_width);

    Matrix real(Bi, width);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        EpochLoss acc;
        for (std::size_t step = 0; step < steps; ++step) {
            for (std::size_t c = 0; c < config.critic_steps; ++c) {
                Matrix z = standard_normal(rng, Bi, latent);
                auto cond = cs.sample(B, rng);
                for (std::size_t r = 0; r < B; ++r) {
                    std::size_t row = cs.column_count() > 0 ? cs.sample_row(cond.column[r], cond.category[r], rng)
                                                            : uniform_index(rng, train_table.rows());
                    real.row(static_cast<Eigen::Index>(r)) = data.row(static_cast<Eigen::Index>(row));
                }
                // sample_row may have redrawn categories; rebuild the one-hot accordingly.
                if (cs.column_count() > 0) {
                    cond.cond.setZero();
                    for (std::size_t r = 0; r < B; ++r)
                        cond.cond(static_cast<Eigen::Index>(r),
                                  static_cast<Eigen::Index>(cs.offset(cond.column[r]) +
                                                            static_cast<std::size_t>(cond.category[r]))) = 1.0;
                }
                auto fake = run_generator(G, z, cond.cond, config.tau, rng, false);
                Matrix real_in = hconcat(real, cond.cond);
                Matrix fake_in = hconcat(fake.heads.value, cond.cond);
                auto real_cache = D.forward(real_in);
                auto fake_cache = D.forward(fake_in);
                double w = real_cache.output.mean() - fake_cache.output.mean();
                auto gp = gradient_penalty(D, real_in, fake_in, rng, config.gp_lambda);
                Grads grads = D.backward(real_cache, Matrix::Constant(Bi, 1, -invB));
                grads += D.backward(fake_cache, Matrix::Constant(Bi, 1, invB));
                grads += gp.grads;
                double loss = -w + gp.value;
                require_finite(loss, "critic loss", epoch, step);
                adam_step(D, grads, d_opt);
                if (c + 1 == config.critic_steps) {
                    acc.critic += loss;
                    acc.wasserstein += w;
                    acc.penalty += gp.value;
                }
            }

            Matrix z = standard_normal(rng, Bi, latent);
            auto cond = cs.sample(B, rng);
            auto fake = run_generator(G, z, cond.cond, config.tau, rng, false);
            auto d_cache = D.forward(hconcat(fake.heads.value, cond.cond));
            double adversarial = -d_cache.output.mean();
            Matrix d_fake = D.backward(d_cache, Matrix::Constant(Bi, 1, -invB)).input.leftCols(width);

            double marg = 0.0;
            if (model.projection) {
                auto ml = marg_loss(real, fake.heads.value, *model.projection);
                marg = ml.value;
                d_fake += ml.fake_gradient;
            }
            auto cl = cond_loss_from_logits(fake.cache.output, layout, cs, cond);
            Matrix d_raw = heads_backward(fake.heads, G.spec().heads, config.tau, d_fake) + cl.logit_gradient;
            Grads g_grads = G.backward(fake.cache, d_raw);
            double g_loss = adversarial + cl.value + marg;
            require_finite(g_loss, "generator loss", epoch, step);
            adam_step(G, g_grads, g_opt);

            acc.adversarial += adversarial;
            acc.cond += cl.value;
            acc.marg += marg;
        }
        const double s = static_cast<double>(steps);
        acc.critic /= s;
        acc.wasserstein /= s;
        acc.penalty /= s;
        acc.adversarial /= s;
        acc.cond /= s;
        acc.marg /= s;
        if (!G.all_finite() || !D.all_finite())
            throw NumericError("non-finite network parameters after epoch " + std::to_string(epoch));
        model.trace.push_back(acc);
        if (options.on_epoch) options.on_epoch(epoch, acc);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Sampling

Matrix generate_encoded(const SynthModel& model, const CondSampler::Batch& cond, Rng& rng, bool hard) {
    auto n = cond.cond.rows();
    Matrix z = standard_normal(rng, n, static_cast<Eigen::Index>(model.config.latent_width));
    return run_generator(model.generator, z, cond.cond, model.config.tau, rng, hard).heads.value;
}

namespace {

template <typename CondFn>
Table sample_with(const SynthModel& model, std::size_t n, Rng& rng, CondFn make_cond) {
    if (n == 0) throw InputError("sample size must be positive");
    const std::size_t chunk = std::max<std::size_t>(model.config.batch_size, 1);
    Matrix encoded(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model.transformer.layout().width()));
    for (std::size_t start = 0; start < n; start += chunk) {
        std::size_t b = std::min(chunk, n - start);
        auto cond = make_cond(b);
        encoded.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(b)) =
            generate_encoded(model, cond, rng, true);
    }
    return model.transformer.inverse_transform(encoded);
}

}  // namespace

Table sample(const SynthModel& model, std::size_t n, Rng& rng) {
    return sample_with(model, n, rng, [&](std::size_t b) { return model.cond_sampler.sample_original(b, rng); });
}

Table sample_conditioned(const SynthModel& model, std::size_t n, std::size_t column, std::int32_t category,
                         Rng& rng) {
    const auto& cs = model.cond_sampler;
    std::optional<std::size_t> j;
    for (std::size_t k = 0; k < cs.column_count(); ++k)
        if (cs.schema_column(k) == column) j = k;
    if (!j) throw InputError("conditioning column is not categorical");
    return sample_with(model, n, rng, [&](std::size_t b) { return cs.fixed(b, *j, category); });
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kModelMagic[4] = {'T', 'S', 'Y', 'N'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> bytes) {
    put_u64(out, bytes.size());
    out.insert(out.end(), bytes.begin(), bytes.end());
}

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> d) : d_(d) {}
    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(d_[pos_++]) << (8 * i);
        return v;
    }
    std::span<const std::uint8_t> bytes() {
        auto n = uint(8);
        need(n);
        auto s = d_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto s = d_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == d_.size(); }

private:
    void need(std::size_t n) const {
        if (n > d_.size() - pos_) throw InputError("model file truncated");
    }
    std::span<const std::uint8_t> d_;
    std::size_t pos_ = 0;
};

nlohmann::json trace_json(const std::vector<EpochLoss>& trace) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : trace)
        arr.push_back({e.critic, e.wasserstein, e.penalty, e.adversarial, e.cond, e.marg});
    return arr;
}

std::vector<EpochLoss> trace_from(const nlohmann::json& arr) {
    std::vector<EpochLoss> out;
    for (const auto& e : arr) {
        auto v = e.get<std::vector<double>>();
        if (v.size() != 6) throw InputError("malformed loss trace");
        out.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> serialize(const SynthModel& model) {
    nlohmann::json header{{"config", model.config.to_json()},
                          {"transformer", model.transformer.to_json()},
                          {"cond_sampler", model.cond_sampler.to_json()},
                          {"trace", trace_json(model.trace)},
                          {"diagnostics", model.diagnostics}};
    if (model.projection) header["projection"] = model.projection->to_json();
    std::string text = header.dump();
    std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
    put_u32(out, kModelFormatVersion);
    put_bytes(out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    put_bytes(out, model.generator.serialize());
    put_bytes(out, model.critic.serialize());
    return out;
}

SynthModel deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    auto magic = in.raw(4);
    if (!std::equal(magic.begin(), magic.end(), std::begin(kModelMagic))) throw InputError("not a model file");
    auto version = static_cast<std::uint32_t>(in.uint(4));
    if (version != kModelFormatVersion)
        throw InputError("model format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kModelFormatVersion) + ")");
    auto text = in.bytes();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("corrupt model header: ") + e.what());
    }
    SynthModel m;
    try {
        m.config = TrainConfig::from_json(header.at("config"));
        m.transformer = DataTransformer::from_json(header.at("transformer"));
        m.cond_sampler = CondSampler::from_json(header.at("cond_sampler"));
        m.trace = trace_from(header.at("trace"));
        m.diagnostics = header.at("diagnostics").get<std::vector<std::string>>();
        if (header.contains("projection")) m.projection = PcaTransform::from_json(header["projection"]);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("corrupt model header: ") + e.what());
    }
    m.generator = Network::deserialize(in.bytes());
    m.critic = Network::deserialize(in.bytes());
    if (!in.done()) throw InputError("model file has trailing bytes");
    if (m.generator.output_width() != m.transformer.layout().width() ||
        m.generator.input_width() != m.config.latent_width + m.cond_sampler.width())
        throw InputError("model components are inconsistent");
    return m;
}

void save(const SynthModel& model, const std::filesystem::path& path) {
    auto bytes = serialize(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + path.string());
}

SynthModel load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace tabsynth
