#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "tabsynth/netcore.hpp"

namespace tabsynth::testing {

inline double relative_gap(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Small random net with widths ≤ 8 and a scalar or vector output.
inline Network random_net(Rng& rng, std::size_t input, std::vector<std::size_t> widths,
                          std::vector<Activation> activations) {
    NetSpec spec;
    spec.input_width = input;
    spec.widths = std::move(widths);
    spec.activations = std::move(activations);
    Network net(spec, rng);
    // Larger weights keep pre-activations away from the flat tanh tails and exercise all layers.
    for (auto& l : net.layers()) {
        l.weight *= 1.5;
        l.bias *= 1.5;
    }
    return net;
}

/// Visits every scalar parameter of `net` as a mutable reference with its analytic gradient.
inline void for_each_parameter(Network& net, const Grads& g, const std::function<void(double&, double)>& fn) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto& layer = net.layers()[l];
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) fn(layer.weight(i, j), g.weight[l](i, j));
        for (Eigen::Index j = 0; j < layer.bias.size(); ++j) fn(layer.bias[j], g.bias[l][j]);
    }
}

/// Largest relative gap between analytic parameter gradients and central differences of `loss`.
inline double max_parameter_gap(Network& net, const Grads& analytic, const std::function<double()>& loss,
                                double h = 1e-5) {
    double worst = 0.0;
    for_each_parameter(net, analytic, [&](double& p, double a) {
        double keep = p;
        p = keep + h;
        double up = loss();
        p = keep - h;
        double down = loss();
        p = keep;
        worst = std::max(worst, relative_gap(a, (up - down) / (2 * h)));
    });
    return worst;
}

/// Largest relative gap between an analytic gradient matrix and central differences of `loss` in `x`.
inline double max_input_gap(Matrix& x, const Matrix& analytic, const std::function<double()>& loss, double h = 1e-5) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            double keep = x(i, j);
            x(i, j) = keep + h;
            double up = loss();
            x(i, j) = keep - h;
            double down = loss();
            x(i, j) = keep;
            worst = std::max(worst, relative_gap(analytic(i, j), (up - down) / (2 * h)));
        }
    return worst;
}

}  // namespace tabsynth::testing
