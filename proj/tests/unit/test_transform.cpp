#include <doctest.h>

#include <cmath>

#include "tabsynth/transform.hpp"

using namespace tabsynth;

namespace {

std::vector<double> normal_draws(std::size_t n, double mean, double sd, Rng& rng) {
    std::normal_distribution<double> d(mean, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

void check_monotone(const GmmModel& g) {
    for (std::size_t i = 1; i < g.log_likelihood_trace.size(); ++i)
        CHECK(g.log_likelihood_trace[i] >= g.log_likelihood_trace[i - 1] - 1e-8);
}

GmmModel single_mode(double mean, double sd) {
    GmmModel g;
    g.weights = {1.0};
    g.means = {mean};
    g.stds = {sd};
    g.active = {true};
    return g;
}

}  // namespace

TEST_CASE("gmm on a single gaussian keeps one dominant mode") {
    Rng rng(1);
    auto v = normal_draws(5000, 0.0, 1.0, rng);
    GmmModel g = fit_gmm(v);
    REQUIRE(g.active_count() == 1);
    CHECK(g.weights[g.active_indices()[0]] >= 0.95);
    check_monotone(g);
}

TEST_CASE("gmm separates two narrow modes") {
    Rng rng(2);
    auto a = normal_draws(2500, -5.0, 0.1, rng);
    auto b = normal_draws(2500, 5.0, 0.1, rng);
    a.reserve(a.size() + b.size());
    for (double v : b) a.push_back(v);
    GmmModel g = fit_gmm(a);
    REQUIRE(g.active_count() == 2);
    std::vector<double> means;
    for (auto k : g.active_indices()) means.push_back(g.means[k]);
    std::sort(means.begin(), means.end());
    CHECK(std::abs(means[0] + 5.0) < 0.1);
    CHECK(std::abs(means[1] - 5.0) < 0.1);
    check_monotone(g);
}

TEST_CASE("gmm log-likelihood is monotone on awkward data") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        auto v = normal_draws(300, 0.0, 1.0, rng);
        for (auto& x : v) x = std::exp(x);  // skewed
        GmmOptions opt;
        opt.seed = seed;
        check_monotone(fit_gmm(v, opt));
    }
}

TEST_CASE("constant column is degenerate and encodes to zero") {
    std::vector<double> v(50, 3.5);
    GmmModel g = fit_gmm(v);
    CHECK(g.degenerate);
    CHECK(g.active_count() == 1);
    CHECK(g.stds[0] == kDegenerateStd);
    Rng rng(0);
    for (double x : v) CHECK(encode_numerical(g, x, rng).alpha == 0.0);
}

TEST_CASE("encode and decode numerical") {
    Rng rng(3);
    GmmModel g = single_mode(2.0, 0.5);
    CHECK(encode_numerical(g, 2.0, rng).alpha == 0.0);
    CHECK(encode_numerical(g, 2.0 + 4 * 0.5, rng).alpha == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(decode_numerical(g, 0.0, 0) == 2.0);
    for (double x : {1.3, 2.2, 3.9}) {
        auto code = encode_numerical(g, x, rng);
        CHECK(std::abs(decode_numerical(g, code.alpha, code.mode) - x) < 1e-9);
    }
    // Outliers clip to the ±4φ boundary.
    auto code = encode_numerical(g, 10.0, rng);
    CHECK(code.alpha == 1.0);
    CHECK(decode_numerical(g, code.alpha, code.mode) == doctest::Approx(2.0 + 4 * 0.5));
    GmmModel off = g;
    off.active = {false};
    CHECK_THROWS(decode_numerical(off, 0.0, 0));
}

TEST_CASE("mode selection samples the posterior") {
    GmmModel g;
    g.weights = {0.5, 0.5};
    g.means = {-5.0, 5.0};
    g.stds = {0.5, 0.5};
    g.active = {true, true};
    auto resp = g.responsibilities(5.0);
    CHECK(resp[1] > 0.99);
    Rng rng(4);
    int hits = 0;
    for (int i = 0; i < 1000; ++i) hits += encode_numerical(g, 5.0, rng).mode == 1;
    CHECK(hits >= 990);

    // Mid-point: the two posteriors are equal, so both modes appear.
    int left = 0;
    for (int i = 0; i < 2000; ++i) left += encode_numerical(g, 0.0, rng).mode == 0;
    CHECK(left > 900);
    CHECK(left < 1100);
}

TEST_CASE("layout width and one-hot validity") {
    Schema s({{"x", Kind::Numerical, {}}, {"c", Kind::Categorical, {"a", "b", "c"}}}, std::nullopt,
             Task::Classification);
    Rng rng(5);
    Matrix num(100, 1);
    IndexMatrix cat(100, 1);
    std::normal_distribution<double> nd(0, 1);
    for (int r = 0; r < 100; ++r) {
        num(r, 0) = nd(rng);
        cat(r, 0) = r % 3;
    }
    Table t(s, num, cat);
    DataTransformer tr;
    tr.fit(t);
    REQUIRE(tr.gmm(0).active_count() == 1);
    CHECK(tr.layout().width() == 5);
    Matrix enc = tr.transform(t, rng);
    for (const auto& span : tr.layout().discrete_spans()) {
        for (Eigen::Index r = 0; r < enc.rows(); ++r) {
            auto block = enc.row(r).segment(static_cast<Eigen::Index>(span.offset), static_cast<Eigen::Index>(span.width));
            CHECK(block.sum() == 1.0);
            CHECK(block.maxCoeff() == 1.0);
        }
    }
    for (const auto& span : tr.layout().spans())
        if (span.kind == SpanKind::Alpha)
            for (Eigen::Index r = 0; r < enc.rows(); ++r) {
                CHECK(enc(r, static_cast<Eigen::Index>(span.offset)) >= -1.0);
                CHECK(enc(r, static_cast<Eigen::Index>(span.offset)) <= 1.0);
            }
}

TEST_CASE("transform round trip") {
    Table t = toy_dataset(default_toy_spec(), 100, 6);
    DataTransformer tr;
    tr.fit(t);
    Rng rng(7);
    Matrix enc = tr.transform(t, rng);
    Table back = tr.inverse_transform(enc);
    CHECK(back.categorical() == t.categorical());
    // Values that were not clipped (|alpha| < 1) recover to 1e-6 relative error.
    std::size_t checked = 0;
    for (const auto& span : tr.layout().spans()) {
        if (span.kind != SpanKind::Alpha) continue;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            double alpha = enc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(span.offset));
            if (std::abs(alpha) >= 1.0) continue;
            double x = t.number(r, span.column), y = back.number(r, span.column);
            CHECK(std::abs(y - x) <= 1e-6 * std::abs(x) + 1e-12);
            ++checked;
        }
    }
    CHECK(checked > 100);

    // Serialization preserves the fitted encoders.
    DataTransformer copy = DataTransformer::from_json(tr.to_json());
    CHECK(copy.inverse_transform(enc).numerical() == back.numerical());
}

TEST_CASE("inverse transform decodes soft spans by argmax") {
    std::vector<double> v{0.2, 0.7, 0.1};
    CHECK(argmax(v) == 1);
    std::vector<double> tie{0.4, 0.4, 0.2};
    CHECK(argmax(tie) == 0);

    Schema s({{"c", Kind::Categorical, {"a", "b", "c"}}}, std::nullopt, Task::Classification);
    IndexMatrix cat(3, 1);
    cat << 0, 1, 2;
    DataTransformer tr;
    tr.fit(Table(s, Matrix(3, 0), cat));
    Matrix soft(2, 3);
    soft << 0.2, 0.7, 0.1, 0.4, 0.1, 0.4;
    Table back = tr.inverse_transform(soft);
    CHECK(back.category(0, 0) == 1);
    CHECK(back.category(1, 0) == 0);
}

TEST_CASE("numerical decode in inverse transform matches decode_numerical") {
    Table t = toy_dataset(default_toy_spec(), 300, 8);
    DataTransformer tr;
    tr.fit(t);
    Rng rng(9);
    Matrix enc = tr.transform(t, rng);
    Table back = tr.inverse_transform(enc);
    for (const auto& span : tr.layout().spans()) {
        if (span.kind != SpanKind::Alpha) continue;
        const auto& modes = tr.layout().discrete_span_of(span.column);
        auto active = tr.gmm(span.column).active_indices();
        for (std::size_t r = 0; r < t.rows(); ++r) {
            auto row = enc.row(static_cast<Eigen::Index>(r));
            std::size_t best = 0;
            for (std::size_t k = 1; k < modes.width; ++k)
                if (row(static_cast<Eigen::Index>(modes.offset + k)) > row(static_cast<Eigen::Index>(modes.offset + best)))
                    best = k;
            double expected = decode_numerical(tr.gmm(span.column), row(static_cast<Eigen::Index>(span.offset)), active[best]);
            CHECK(back.number(r, span.column) == expected);
        }
    }
}

TEST_CASE("min-max scaling") {
    std::vector<double> v{2, 4, 6};
    auto r = minmax_fit_apply(v);
    CHECK(r.scaled[0] == 0.0);
    CHECK(r.scaled[1] == 0.5);
    CHECK(r.scaled[2] == 1.0);
    CHECK(r.scaler.apply(8.0) == 1.5);
    std::vector<double> c{5, 5};
    auto rc = minmax_fit_apply(c);
    CHECK(rc.scaled[0] == 0.0);
    CHECK(rc.scaled[1] == 0.0);
}

TEST_CASE("label encoding") {
    std::vector<std::string> cats{"a", "b", "c"};
    std::vector<std::string> labels{"b", "a", "b", "c", "b"};
    auto codes = label_encode(labels, cats);
    CHECK(codes == std::vector<std::int32_t>{1, 0, 1, 2, 1});
    CHECK(label_decode(codes, cats) == labels);
    std::vector<std::string> bad{"z"};
    CHECK_THROWS_AS(label_encode(bad, cats), InputError);
}
