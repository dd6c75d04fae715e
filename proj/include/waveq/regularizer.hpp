#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "waveq/errors.hpp"
#include "waveq/quantizer.hpp"
#include "waveq/tensor.hpp"

namespace waveq {

enum class RegMode { learned_beta, preset_bits };
enum class Reduction { sum, mean };

/// Quantization step convention for the preset-bitwidth regularizer.
/// wrpn: step = 1/(2^q - 1); dorefa: step = 1/(2^q - 0.5).
enum class StepConvention { wrpn, dorefa };

struct RegularizerConfig {
    int variant = 1;  // k in the 2^(k beta) divisor
    RegMode mode = RegMode::learned_beta;
    QuantStyle style = QuantStyle::mid_tread;
    StepConvention convention = StepConvention::wrpn;
    std::optional<Reduction> reduction;  // unset: sum when learned, mean when preset

    Reduction effective_reduction() const {
        if (reduction) return *reduction;
        return mode == RegMode::learned_beta ? Reduction::sum : Reduction::mean;
    }

    void validate() const {
        if (variant < 0 || variant > 2) throw ConfigError("regularizer variant must be 0, 1 or 2, got " + std::to_string(variant));
    }

    friend bool operator==(const RegularizerConfig&, const RegularizerConfig&) = default;
};

/// Loss and gradients of a regularizer over a list of layers.
template <typename Scalar>
struct RegOutput {
    Scalar loss = 0;
    std::vector<Tensor<Scalar>> grad_w;
    std::vector<Scalar> dloss_dbeta;
};

template <typename Scalar>
struct LayerRegOutput {
    Scalar loss = 0;
    Tensor<Scalar> grad_w;
    Scalar dloss_dbeta = 0;
};

/// 2^beta through exp so the result is smooth in beta.
template <typename Scalar>
Scalar pow2(Scalar beta) {
    return std::exp(beta * std::numbers::ln2_v<Scalar>);
}

/// One weight's contribution sin^2(u) / 2^(k beta), u = pi (w (2^beta - 1) + phase),
/// and its partial derivatives:
///   d/dw    = pi (2^beta - 1) sin(2u) / 2^(k beta)
///   d/dbeta = [pi w 2^beta ln2 sin(2u) - k ln2 sin^2(u)] / 2^(k beta)
template <typename Scalar>
struct SinusoidTerms {
    Scalar value;
    Scalar d_w;
    Scalar d_beta;
};

template <typename Scalar>
SinusoidTerms<Scalar> sinusoid_terms(Scalar w, Scalar beta, int variant, Scalar phase = Scalar(0)) {
    constexpr Scalar pi = std::numbers::pi_v<Scalar>;
    constexpr Scalar ln2 = std::numbers::ln2_v<Scalar>;
    const Scalar p = pow2(beta);
    const Scalar norm = std::exp(-Scalar(variant) * beta * ln2);
    const Scalar u = pi * (w * (p - Scalar(1)) + phase);
    const Scalar s = std::sin(u);
    const Scalar s2u = std::sin(Scalar(2) * u);
    return {s * s * norm, pi * (p - Scalar(1)) * s2u * norm,
            (pi * w * p * ln2 * s2u - Scalar(variant) * ln2 * s * s) * norm};
}

/// (lambda/2) sum w^2 over all layers; gradient lambda w.
template <typename Scalar>
RegOutput<Scalar> weight_decay(std::span<const Tensor<Scalar>> weights, Scalar lambda) {
    if (lambda < Scalar(0)) throw ConfigError("weight decay strength must be non-negative");
    RegOutput<Scalar> out;
    for (const auto& w : weights) {
        out.loss += Scalar(0.5) * lambda * w.vector().squaredNorm();
        out.grad_w.emplace_back(w.shape(), lambda * w.vector());
        out.dloss_dbeta.push_back(Scalar(0));
    }
    return out;
}

/// Sinusoidal weight-quantization term of one layer with a learnable period:
/// lambda_w * reduce_j sin^2(pi w_j (2^beta - 1)) / 2^(k beta).
/// Mid-rise style shifts the argument by half a period so zero is a maximum.
template <typename Scalar>
LayerRegOutput<Scalar> waveq_term(const Tensor<Scalar>& weights, Scalar beta, Scalar lambda_w, const RegularizerConfig& config) {
    config.validate();
    if (!(beta >= Scalar(1))) throw DomainError("beta must be >= 1, got " + std::to_string(double(beta)));
    if (lambda_w < Scalar(0)) throw ConfigError("lambda_w must be non-negative");
    const Scalar phase = config.style == QuantStyle::mid_rise ? Scalar(0.5) : Scalar(0);
    const Scalar scale = config.effective_reduction() == Reduction::mean && weights.size() > 0
                             ? lambda_w / Scalar(weights.size())
                             : lambda_w;
    LayerRegOutput<Scalar> out;
    out.grad_w = Tensor<Scalar>(weights.shape());
    Scalar value = 0;
    Scalar dbeta = 0;
    for (Index j = 0; j < weights.size(); ++j) {
        const auto t = sinusoid_terms(weights[j], beta, config.variant, phase);
        value += t.value;
        dbeta += t.d_beta;
        out.grad_w[j] = scale * t.d_w;
    }
    out.loss = scale * value;
    out.dloss_dbeta = scale * dbeta;
    return out;
}

/// Quantization step of the preset-bitwidth regularizer.
inline double preset_step(int bits, StepConvention convention) {
    if (bits < 1) throw DomainError("preset bitwidth must be >= 1");
    const double levels = std::ldexp(1.0, bits);
    return convention == StepConvention::wrpn ? 1.0 / (levels - 1.0) : 1.0 / (levels - 0.5);
}

/// Offset that places the regularizer minima on the style's levels.
inline double preset_offset(double step, QuantStyle style) { return style == QuantStyle::mid_rise ? step / 2 : 0.0; }

/// Preset-bitwidth sinusoidal regularizer of one layer:
/// lambda_q * reduce_j sin^2(pi (w_j + offset) / step).
template <typename Scalar>
LayerRegOutput<Scalar> preset_sinreq(const Tensor<Scalar>& weights, Scalar step, Scalar offset, Scalar lambda_q,
                                     Reduction reduction = Reduction::mean) {
    if (!(step > Scalar(0))) throw ConfigError("quantization step must be positive");
    if (lambda_q < Scalar(0)) throw ConfigError("lambda_q must be non-negative");
    constexpr Scalar pi = std::numbers::pi_v<Scalar>;
    const Scalar scale =
        reduction == Reduction::mean && weights.size() > 0 ? lambda_q / Scalar(weights.size()) : lambda_q;
    LayerRegOutput<Scalar> out;
    out.grad_w = Tensor<Scalar>(weights.shape());
    Scalar value = 0;
    for (Index j = 0; j < weights.size(); ++j) {
        const Scalar u = pi * (weights[j] + offset) / step;
        const Scalar s = std::sin(u);
        value += s * s;
        out.grad_w[j] = scale * pi / step * std::sin(Scalar(2) * u);
    }
    out.loss = scale * value;
    return out;
}

/// Full learned-bitwidth regularizer over layers:
/// sum_i waveq_term(W_i, beta_i) + lambda_beta sum_i beta_i.
/// lambda_w holds either one global strength or one per layer.
template <typename Scalar>
RegOutput<Scalar> total_regularizer(std::span<const Tensor<Scalar>> layers, std::span<const Scalar> betas,
                                    std::span<const Scalar> lambda_w, Scalar lambda_beta, const RegularizerConfig& config) {
    if (layers.size() != betas.size())
        throw InputError("got " + std::to_string(betas.size()) + " betas for " + std::to_string(layers.size()) + " layers");
    if (lambda_w.size() != 1 && lambda_w.size() != layers.size())
        throw InputError("lambda_w must be global or per layer");
    if (lambda_beta < Scalar(0)) throw ConfigError("lambda_beta must be non-negative");
    RegOutput<Scalar> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Scalar lw = lambda_w.size() == 1 ? lambda_w[0] : lambda_w[i];
        auto term = waveq_term(layers[i], betas[i], lw, config);
        out.loss += term.loss + lambda_beta * betas[i];
        out.grad_w.push_back(std::move(term.grad_w));
        out.dloss_dbeta.push_back(term.dloss_dbeta + lambda_beta);
    }
    return out;
}

template <typename Scalar>
RegOutput<Scalar> total_regularizer(std::span<const Tensor<Scalar>> layers, std::span<const Scalar> betas, Scalar lambda_w,
                                    Scalar lambda_beta, const RegularizerConfig& config) {
    return total_regularizer(layers, betas, std::span<const Scalar>(&lambda_w, 1), lambda_beta, config);
}

}  // namespace waveq
