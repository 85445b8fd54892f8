#include <doctest.h>

#include "gradcheck.hpp"
#include "tabsynth/netcore.hpp"

using namespace tabsynth;
using namespace tabsynth::testing;

namespace {

const std::vector<std::vector<Activation>> kStacks{
    {Activation::LeakyRelu, Activation::LeakyRelu, Activation::Identity},
    {Activation::Tanh, Activation::Relu, Activation::Identity},
    {Activation::Tanh, Activation::Tanh, Activation::Identity},
    {Activation::LeakyRelu, Activation::Tanh, Activation::Identity},
};

double weighted_output(const Network& net, const Matrix& x, const Matrix& w) {
    return (net.forward(x).output.array() * w.array()).sum();
}

}  // namespace

TEST_CASE("forward pass matches dense algebra") {
    Rng rng(1);
    Network net = random_net(rng, 3, {4}, {Activation::Identity});
    Matrix x = standard_normal(rng, 5, 3);
    Matrix expected = (x * net.layers()[0].weight).rowwise() + net.layers()[0].bias;
    CHECK((net.forward(x).output - expected).cwiseAbs().maxCoeff() < 1e-12);

    for (auto& l : net.layers()) {
        l.weight.setZero();
        l.bias.setZero();
    }
    CHECK(net.forward(x).output.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batching is consistent") {
    Rng rng(2);
    Network net = random_net(rng, 4, {6, 5, 2}, kStacks[1]);
    Matrix x = standard_normal(rng, 7, 4);
    Matrix full = net.forward(x).output;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        CHECK((net.forward(x.row(r)).output - full.row(r)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(net.forward(Matrix::Zero(2, 3)), InputError);
}

TEST_CASE("parameter and input gradients match finite differences") {
    for (std::size_t t = 0; t < kStacks.size(); ++t) {
        CAPTURE(t);
        Rng rng(10 + t);
        Network net = random_net(rng, 3, {8, 6, 2}, kStacks[t]);
        Matrix x = standard_normal(rng, 4, 3);
        Matrix w = standard_normal(rng, 4, 2);
        Grads g = net.backward(net.forward(x), w);
        CHECK(max_parameter_gap(net, g, [&] { return weighted_output(net, x, w); }) < 1e-5);
        CHECK(max_input_gap(x, g.input, [&] { return weighted_output(net, x, w); }) < 1e-5);
    }
}

TEST_CASE("backward is linear in the output gradient") {
    Rng rng(3);
    Network net = random_net(rng, 3, {5, 2}, {Activation::Tanh, Activation::Identity});
    Matrix x = standard_normal(rng, 4, 3);
    auto cache = net.forward(x);
    Grads zero = net.backward(cache, Matrix::Zero(4, 2));
    CHECK(zero.weight[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(zero.input.cwiseAbs().maxCoeff() == 0.0);
    Matrix w = standard_normal(rng, 4, 2);
    Grads once = net.backward(cache, w);
    Grads twice = net.backward(cache, 2.0 * w);
    CHECK((twice.weight[1] - 2.0 * once.weight[1]).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((twice.bias[0] - 2.0 * once.bias[0]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("input gradient of a scalar net") {
    Rng rng(4);
    Network affine = random_net(rng, 3, {1}, {Activation::Identity});
    Matrix x = standard_normal(rng, 5, 3);
    Matrix g = affine.input_gradient(affine.forward(x));
    for (Eigen::Index r = 0; r < 5; ++r) CHECK((g.row(r) - affine.layers()[0].weight.col(0).transpose()).norm() < 1e-15);

    for (std::size_t t = 0; t < kStacks.size(); ++t) {
        Network net = random_net(rng, 3, {8, 6, 1}, kStacks[t]);
        Matrix xi = standard_normal(rng, 4, 3);
        Matrix analytic = net.input_gradient(net.forward(xi));
        CHECK(max_input_gap(xi, analytic, [&] { return net.forward(xi).output.sum(); }) < 1e-5);
    }

    // A dead ReLU unit contributes nothing.
    NetSpec spec{2, {1, 1}, {Activation::Relu, Activation::Identity}, {}};
    Network dead(spec, rng);
    dead.layers()[0].weight.setConstant(1.0);
    dead.layers()[0].bias.setConstant(-100.0);
    Matrix xd = Matrix::Ones(3, 2);
    CHECK(dead.input_gradient(dead.forward(xd)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient penalty of an affine critic has a closed form") {
    Rng rng(5);
    const double lambda = 10.0;
    Network critic = random_net(rng, 4, {1}, {Activation::Identity});
    Matrix real = standard_normal(rng, 6, 4), fake = standard_normal(rng, 6, 4);
    auto gp = gradient_penalty(critic, real, fake, rng, lambda);
    Vector w = critic.layers()[0].weight.col(0);
    double norm = w.norm();
    CHECK(gp.value == doctest::Approx(lambda * (norm - 1) * (norm - 1)).epsilon(1e-12));
    // ∂/∂w λ(‖w‖−1)² = 2λ(‖w‖−1)·w/‖w‖; the bias gets nothing.
    Vector expected = 2 * lambda * (norm - 1) * w / norm;
    CHECK((gp.grads.weight[0].col(0) - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(gp.grads.bias[0].cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index r = 0; r < gp.epsilon.size(); ++r) {
        CHECK(gp.epsilon[r] >= 0.0);
        CHECK(gp.epsilon[r] <= 1.0);
    }

    critic.layers()[0].weight.col(0) = w / norm;
    auto unit = gradient_penalty(critic, real, fake, rng, lambda);
    CHECK(unit.value == doctest::Approx(0.0).epsilon(1e-24));
    CHECK(unit.grads.weight[0].cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradient penalty parameter gradients match finite differences") {
    for (std::size_t t = 0; t < kStacks.size(); ++t) {
        CAPTURE(t);
        Rng rng(20 + t);
        Network critic = random_net(rng, 4, {8, 6, 1}, kStacks[t]);
        Matrix real = standard_normal(rng, 4, 4), fake = standard_normal(rng, 4, 4);
        Vector eps(4);
        for (Eigen::Index r = 0; r < 4; ++r) eps[r] = uniform01(rng);
        auto gp = gradient_penalty_at(critic, real, fake, eps, 10.0);
        double gap = max_parameter_gap(critic, gp.grads, [&] {
            return gradient_penalty_at(critic, real, fake, eps, 10.0).value;
        });
        CHECK(gap < 1e-4);
    }
}

TEST_CASE("gumbel softmax") {
    Rng rng(6);
    Matrix logits = standard_normal(rng, 5, 4);
    auto g = gumbel_softmax(logits, 0.2, rng, false);
    for (Eigen::Index r = 0; r < 5; ++r) {
        CHECK(std::abs(g.value.row(r).sum() - 1.0) < 1e-9);
        CHECK(g.value.row(r).minCoeff() >= 0.0);
    }
    auto hard = gumbel_softmax(logits, 0.2, rng, true);
    for (Eigen::Index r = 0; r < 5; ++r) {
        CHECK(hard.value.row(r).sum() == 1.0);
        CHECK(hard.value.row(r).maxCoeff() == 1.0);
        Eigen::Index k;
        hard.soft.row(r).maxCoeff(&k);
        CHECK(hard.value(r, k) == 1.0);
    }

    auto plain = gumbel_softmax_with_noise(logits, Matrix::Zero(5, 4), 1.0, false);
    CHECK((plain.value - softmax_rows(logits)).cwiseAbs().maxCoeff() < 1e-15);

    Matrix peaked(1, 3);
    peaked << 10, 0, 0;
    int sharp = 0;
    for (int i = 0; i < 10000; ++i) sharp += gumbel_softmax(peaked, 0.1, rng, false).value(0, 0) > 0.999;
    CHECK(sharp >= 9900);
}

TEST_CASE("gumbel and head backward match finite differences") {
    Rng rng(7);
    Matrix logits = standard_normal(rng, 3, 4);
    Matrix noise = standard_normal(rng, 3, 4);
    Matrix w = standard_normal(rng, 3, 4);
    const double tau = 0.5;
    auto loss = [&] { return (gumbel_softmax_with_noise(logits, noise, tau, false).soft.array() * w.array()).sum(); };
    auto g = gumbel_softmax_with_noise(logits, noise, tau, false);
    Matrix analytic = gumbel_softmax_backward(g.soft, tau, w);
    CHECK(max_input_gap(logits, analytic, loss) < 1e-5);

    std::vector<OutputHead> heads{{HeadKind::Tanh, 0, 1}, {HeadKind::GumbelSoftmax, 1, 3}, {HeadKind::Tanh, 4, 1}};
    Matrix raw = standard_normal(rng, 3, 5);
    Matrix hw = standard_normal(rng, 3, 5);
    auto head_loss = [&] {
        Rng fixed(99);
        return (apply_heads(raw, heads, tau, fixed, false).value.array() * hw.array()).sum();
    };
    Rng fixed(99);
    auto out = apply_heads(raw, heads, tau, fixed, false);
    CHECK(max_input_gap(raw, heads_backward(out, heads, tau, hw), head_loss) < 1e-5);
}

TEST_CASE("adam first step and determinism") {
    Rng rng(8);
    Network net = random_net(rng, 2, {3, 1}, {Activation::Tanh, Activation::Identity});
    Network before = net;
    AdamConfig cfg;
    AdamState state = AdamState::for_network(net, cfg);
    Grads g = net.zero_grads();
    g.weight[0] = standard_normal(rng, 2, 3);
    adam_step(net, g, state);
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) {
            double gi = g.weight[0](i, j);
            double expected = before.layers()[0].weight(i, j) - cfg.learning_rate * gi / (std::abs(gi) + cfg.epsilon);
            CHECK(net.layers()[0].weight(i, j) == doctest::Approx(expected).epsilon(1e-12));
        }
    CHECK(net.layers()[1].weight == before.layers()[1].weight);

    Network a = before, b = before;
    AdamState sa = AdamState::for_network(a, cfg), sb = AdamState::for_network(b, cfg);
    adam_step(a, g, sa);
    adam_step(b, g, sb);
    CHECK(a == b);
}

TEST_CASE("network blob round trip") {
    Rng rng(9);
    NetSpec spec{3, {4, 5}, {Activation::LeakyRelu, Activation::Identity}, {{HeadKind::Tanh, 0, 1}, {HeadKind::GumbelSoftmax, 1, 4}}};
    Network net(spec, rng);
    auto blob = net.serialize();
    Network back = Network::deserialize(blob);
    CHECK(back == net);
    blob.resize(blob.size() - 3);
    CHECK_THROWS_AS(Network::deserialize(blob), InputError);
    auto bad = net.serialize();
    bad[4] = 9;  // version field
    CHECK_THROWS_AS(Network::deserialize(bad), InputError);
}
