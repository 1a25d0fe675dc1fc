#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "kpig/common.hpp"

namespace kpig::lm {

/// Anything exposing a mutable flat parameter buffer.
template <typename M>
concept Trainable = requires(M& m) {
    { m.parameters() } -> std::convertible_to<std::span<double>>;
};

struct AdamConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 1.0;  ///< global L2 norm clip; <= 0 disables

    bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    bool operator==(const AdamState&) const = default;
};

/// One Adam(W) update. An all-zero gradient leaves both the parameters and
/// the optimizer state untouched. Non-finite losses or gradients abort.
template <Trainable M>
void train_step(M& model, double loss, std::span<const double> grad, AdamState& state) {
    std::span<double> params = model.parameters();
    if (!std::isfinite(loss)) {
        throw Error("train_step: non-finite loss " + std::to_string(loss));
    }
    if (grad.size() != params.size()) {
        throw ContractError("train_step: gradient size does not match parameter count");
    }
    double norm2 = 0.0;
    for (double g : grad) {
        if (!std::isfinite(g)) {
            throw Error("train_step: non-finite gradient");
        }
        norm2 += g * g;
    }
    if (norm2 == 0.0) {
        return;
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    const AdamConfig& c = state.config;
    const double norm = std::sqrt(norm2);
    const double clip = (c.grad_clip > 0.0 && norm > c.grad_clip) ? c.grad_clip / norm : 1.0;
    ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] * clip;
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * params[i]);
    }
}

struct SgdState {
    double lr = 1e-2;
};

/// Plain gradient descent: params -= lr * grad.
template <Trainable M>
void train_step(M& model, double loss, std::span<const double> grad, const SgdState& state) {
    std::span<double> params = model.parameters();
    if (!std::isfinite(loss)) {
        throw Error("train_step: non-finite loss " + std::to_string(loss));
    }
    if (grad.size() != params.size()) {
        throw ContractError("train_step: gradient size does not match parameter count");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= state.lr * grad[i];
    }
}

}  // namespace kpig::lm
