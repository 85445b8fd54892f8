#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "tabsynth/synthesizer.hpp"

using namespace tabsynth;
using namespace tabsynth::testing;

namespace {

Table one_categorical(const std::vector<std::size_t>& counts) {
    std::vector<std::string> cats;
    for (std::size_t k = 0; k < counts.size(); ++k) cats.push_back("k" + std::to_string(k));
    Schema s({{"c", Kind::Categorical, cats}}, std::nullopt, Task::Classification);
    std::size_t n = 0;
    for (auto c : counts) n += c;
    IndexMatrix cat(static_cast<Eigen::Index>(n), 1);
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < counts.size(); ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) cat(r++, 0) = static_cast<std::int32_t>(k);
    return Table(s, Matrix(static_cast<Eigen::Index>(n), 0), cat);
}

Matrix covariance(const Matrix& x) {
    Matrix c = x.rowwise() - x.colwise().mean();
    return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

TrainConfig tiny_config(Variant v, std::size_t epochs = 3) {
    TrainConfig c;
    c.variant = v;
    c.epochs = epochs;
    c.batch_size = 50;
    c.latent_width = 8;
    c.generator_widths = {16, 16};
    c.critic_widths = {16, 16};
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("variant names") {
    for (auto v : {Variant::Ctgan, Variant::MargCtgan, Variant::CtganRaw}) CHECK(parse_variant(to_string(v)) == v);
    CHECK(to_string(Variant::CtganRaw) == "ctgan-raw");
    CHECK_THROWS_AS(parse_variant("tvae"), InputError);
}

TEST_CASE("pca whitening of white data") {
    Rng rng(1);
    Matrix x = standard_normal(rng, 10000, 4);
    PcaTransform p = fit_pca(x);
    Matrix cov = covariance(p.apply(x));
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 4; ++j)
            if (i != j) CHECK(std::abs(cov(i, j)) < 0.05);
    CHECK(p.width() == 4);
}

TEST_CASE("pca of perfectly correlated data has rank one") {
    Rng rng(2);
    Matrix x(200, 2);
    x.col(0) = standard_normal(rng, 200, 1);
    x.col(1) = x.col(0);
    PcaTransform p = fit_pca(x);
    CHECK(p.rank == 1);
    CHECK(p.eigenvalues[1] < 1e-10 * p.eigenvalues[0]);
    CHECK(std::abs(covariance(x)(0, 1) / covariance(x)(0, 0) - 1.0) < 1e-12);
}

TEST_CASE("pca is orthonormal and decorrelates encoded data") {
    Table t = toy_dataset(default_toy_spec(), 1000, 3);
    DataTransformer tr;
    tr.fit(t);
    Rng rng(4);
    Matrix enc = tr.transform(t, rng);
    PcaTransform p = fit_pca(enc);
    const auto d = static_cast<Eigen::Index>(tr.layout().width());
    CHECK(p.components.rows() == d);
    CHECK(p.components.cols() == d);
    CHECK((p.components.transpose() * p.components - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-8);
    Matrix cov = covariance(p.apply(enc));
    double diag = cov.diagonal().cwiseAbs().maxCoeff();
    Matrix off = cov;
    off.diagonal().setZero();
    CHECK(off.cwiseAbs().maxCoeff() < 1e-6 * diag);
    CHECK(p.apply(enc).cols() == d);

    PcaTransform back = PcaTransform::from_json(p.to_json());
    CHECK((back.apply(enc) - p.apply(enc)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("training-by-sampling probabilities") {
    CondSampler s(one_categorical({9999, 1}));
    double expected = std::log(2.0) / (std::log(2.0) + std::log(10000.0));
    CHECK(s.probabilities(0)[1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(s.probabilities(0)[1] == doctest::Approx(0.0700).epsilon(1e-3));

    CondSampler u(one_categorical({7, 7, 7}));
    for (double p : u.probabilities(0)) CHECK(p == doctest::Approx(1.0 / 3.0));

    CondSampler f(one_categorical({500, 300, 150, 50}));
    Rng rng(5);
    auto batch = f.sample(100000, rng);
    std::vector<double> freq(4, 0.0);
    for (auto c : batch.category) freq[static_cast<std::size_t>(c)] += 1.0 / 100000.0;
    double tv = 0.0;
    for (std::size_t k = 0; k < 4; ++k) tv += 0.5 * std::abs(freq[k] - f.probabilities(0)[k]);
    CHECK(tv < 0.01);
    for (Eigen::Index r = 0; r < 100; ++r) {
        CHECK(batch.cond.row(r).sum() == 1.0);
        CHECK(batch.cond(r, batch.category[static_cast<std::size_t>(r)]) == 1.0);
    }
}

TEST_CASE("real row selection matches the condition") {
    Table t = toy_dataset(default_toy_spec(), 300, 6);
    CondSampler s(t);
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        std::size_t j = uniform_index(rng, s.column_count());
        std::int32_t c = static_cast<std::int32_t>(uniform_index(rng, s.counts(j).size()));
        std::size_t row = s.sample_row(j, c, rng);
        CHECK(t.category(row, s.schema_column(j)) == c);
    }
    // A category absent from the subset is redrawn.
    CondSampler sparse(one_categorical({10, 0, 5}));
    std::int32_t missing = 1;
    std::size_t row = sparse.sample_row(0, missing, rng);
    CHECK(missing != 1);
    CHECK(row < 15);
}

TEST_CASE("cond loss") {
    Table t = one_categorical({4, 4, 4, 4});
    DataTransformer tr;
    tr.fit(t);
    CondSampler s(t);
    auto cond = s.fixed(3, 0, 2);
    Matrix exact = Matrix::Zero(3, 4);
    exact.col(2).setOnes();
    CHECK(cond_loss(exact, tr.layout(), s, cond) == 0.0);
    Matrix uniform = Matrix::Constant(3, 4, 0.25);
    CHECK(std::abs(cond_loss(uniform, tr.layout(), s, cond) - std::log(4.0)) < 1e-9);

    Rng rng(8);
    auto mixed = s.sample(6, rng);
    Matrix probs = softmax_rows(standard_normal(rng, 6, 4));
    double batch = cond_loss(probs, tr.layout(), s, mixed);
    double manual = 0.0;
    for (std::size_t r = 0; r < 6; ++r)
        manual -= std::log(probs(static_cast<Eigen::Index>(r), mixed.category[r]));
    CHECK(batch == doctest::Approx(manual / 6.0).epsilon(1e-14));

    Matrix logits = standard_normal(rng, 6, 4);
    auto cl = cond_loss_from_logits(logits, tr.layout(), s, mixed);
    CHECK(cl.value == doctest::Approx(cond_loss(softmax_rows(logits), tr.layout(), s, mixed)).epsilon(1e-12));
    auto loss = [&] { return cond_loss_from_logits(logits, tr.layout(), s, mixed).value; };
    CHECK(max_input_gap(logits, cl.logit_gradient, loss) < 1e-6);
}

TEST_CASE("batch moments") {
    Matrix c = Matrix::Constant(4, 2, 3.0);
    CHECK(batch_moments(c).std.cwiseAbs().maxCoeff() == 0.0);
    Matrix two(2, 1);
    two << 0, 2;
    auto m = batch_moments(two);
    CHECK(m.mean[0] == 1.0);
    CHECK(m.std[0] == 1.0);
    Rng rng(9);
    Matrix x = standard_normal(rng, 10, 3);
    auto a = batch_moments(x);
    auto b = batch_moments(x.array() + 2.5);
    CHECK((b.mean.array() - a.mean.array() - 2.5).abs().maxCoeff() < 1e-14);
    CHECK((b.std - a.std).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("marg loss closed forms") {
    Rng rng(10);
    const Eigen::Index d = 5;
    Matrix real = standard_normal(rng, 12, d);
    auto id = PcaTransform::identity(d);
    CHECK(marg_loss(real, real, id).value == 0.0);
    PcaTransform pca = fit_pca(standard_normal(rng, 50, d));
    CHECK(marg_loss(real, real, pca).value == 0.0);

    const double delta = 0.7;
    auto shifted = marg_loss(real, real.array() + delta, id);
    CHECK(std::abs(shifted.value - delta * std::sqrt(double(d))) < 1e-9);
    CHECK(std::abs(shifted.std_term) < 1e-12);

    // Flipping basis signs leaves the PCA-space loss unchanged.
    Matrix fake = standard_normal(rng, 12, d);
    PcaTransform flipped = pca;
    flipped.components.col(1) *= -1.0;
    flipped.components.col(3) *= -1.0;
    CHECK(marg_loss(real, fake, flipped).value == doctest::Approx(marg_loss(real, fake, pca).value).epsilon(1e-12));

    auto ml = marg_loss(real, fake, pca);
    auto loss = [&] { return marg_loss(real, fake, pca).value; };
    CHECK(max_input_gap(fake, ml.fake_gradient, loss) < 1e-5);
}

TEST_CASE("train config validation and json") {
    TrainConfig c;
    CHECK(c.epochs == 300);
    CHECK(c.batch_size == 500);
    CHECK(c.gp_lambda == 10.0);
    CHECK(c.latent_width == 128);
    CHECK(c.tau == 0.2);
    CHECK(c.generator_adam.learning_rate == 2e-4);
    CHECK(c.generator_adam.beta1 == 0.5);
    CHECK(c.generator_adam.beta2 == 0.9);
    TrainConfig odd = c;
    odd.batch_size = 7;
    CHECK_THROWS_AS(odd.validate(), InputError);
    TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("training is deterministic and variants behave") {
    Table t = toy_dataset(default_toy_spec(), 200, 11);
    SynthModel a = train(t, tiny_config(Variant::MargCtgan));
    SynthModel b = train(t, tiny_config(Variant::MargCtgan));
    CHECK(a.generator.serialize() == b.generator.serialize());
    CHECK(a.critic.serialize() == b.critic.serialize());
    REQUIRE(a.trace.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(a.trace[e].marg == b.trace[e].marg);
    CHECK(a.projection.has_value());
    CHECK(a.trace[0].marg > 0.0);

    SynthModel c = train(t, tiny_config(Variant::Ctgan));
    CHECK_FALSE(c.projection.has_value());
    for (const auto& e : c.trace) CHECK(e.marg == 0.0);

    SynthModel r = train(t, tiny_config(Variant::CtganRaw));
    REQUIRE(r.projection.has_value());
    CHECK(r.projection->components == Matrix::Identity(r.projection->components.rows(), r.projection->components.cols()));
}

TEST_CASE("rank deficiency diagnostic") {
    Table t = toy_dataset(default_toy_spec(), 10, 12);
    SynthModel m = train(t, tiny_config(Variant::MargCtgan, 1));
    REQUIRE(m.transformer.layout().width() > 10);
    REQUIRE(m.diagnostics.size() == 1);
    CHECK(m.diagnostics[0].find("ctgan-raw") != std::string::npos);
    CHECK(m.projection->width() == m.transformer.layout().width());
}

TEST_CASE("sampling contract") {
    Table t = toy_dataset(default_toy_spec(), 200, 13);
    SynthModel m = train(t, tiny_config(Variant::MargCtgan, 2));
    Rng rng(14);
    Table s = sample(m, 20000, rng);
    CHECK(s.rows() == 20000);
    CHECK(s.schema() == t.schema());
    for (std::size_t c = 0; c < s.schema().size(); ++c) {
        const auto& col = s.schema().column(c);
        if (col.is_categorical()) {
            for (auto code : s.column_codes(c)) {
                CHECK(code >= 0);
                CHECK(static_cast<std::size_t>(code) < col.cardinality());
            }
        } else {
            const auto& g = m.transformer.gmm(c);
            double lo = 1e300, hi = -1e300;
            for (auto k : g.active_indices()) {
                lo = std::min(lo, g.means[k] - 4 * g.stds[k]);
                hi = std::max(hi, g.means[k] + 4 * g.stds[k]);
            }
            Vector v = s.column_values(c);
            CHECK(v.minCoeff() >= lo - 1e-9);
            CHECK(v.maxCoeff() <= hi + 1e-9);
        }
    }
    Table cond = sample_conditioned(m, 50, 2, 1, rng);
    CHECK(cond.rows() == 50);
}

TEST_CASE("model file round trip and refusal") {
    Table t = toy_dataset(default_toy_spec(), 120, 15);
    SynthModel m = train(t, tiny_config(Variant::MargCtgan, 2));
    auto bytes = serialize(m);
    SynthModel back = deserialize(bytes);
    Rng r1(16), r2(16);
    Table a = sample(m, 300, r1), b = sample(back, 300, r2);
    CHECK(a.numerical() == b.numerical());
    CHECK(a.categorical() == b.categorical());
    CHECK(back.trace.size() == m.trace.size());

    auto path = std::filesystem::temp_directory_path() / "tabsynth_model_test.tsyn";
    save(m, path);
    SynthModel loaded = load(path);
    CHECK(loaded.generator == m.generator);
    std::filesystem::remove(path);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK_THROWS_AS(deserialize(truncated), InputError);
    auto bumped = bytes;
    bumped[4] = static_cast<std::uint8_t>(kModelFormatVersion + 1);
    try {
        deserialize(bumped);
        FAIL("version mismatch accepted");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}

TEST_CASE("non-finite training input is rejected") {
    Table t = toy_dataset(default_toy_spec(), 100, 17);
    TrainConfig c = tiny_config(Variant::MargCtgan, 1);
    c.generator_adam.learning_rate = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train(t, c), std::exception);
}
