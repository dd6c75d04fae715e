#include "waveq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "waveq/errors.hpp"

namespace waveq {

LevelSet level_set(int bits, QuantStyle style) {
    if (bits < 1 || bits > 16) throw DomainError("bitwidth must be in [1, 16], got " + std::to_string(bits));
    const long k = (1L << bits) - 1;
    LevelSet set;
    set.bits = bits;
    set.style = style;
    if (style == QuantStyle::mid_tread) {
        set.bin_width = 1.0 / double(k);
        set.levels.reserve(std::size_t(2 * k + 1));
        for (long m = -k; m <= k; ++m) set.levels.push_back(double(m) / double(k));
    } else if (bits == 1) {
        set.bin_width = 2.0;
        set.levels = {-1.0, 1.0};
    } else {
        // (2m + 1) / (2k) for m = -k .. k - 1: half-bin shifted, symmetric, zero excluded.
        set.bin_width = 1.0 / double(k);
        set.levels.reserve(std::size_t(2 * k));
        for (long m = -k; m < k; ++m) set.levels.push_back(double(2 * m + 1) / double(2 * k));
    }
    return set;
}

std::vector<double> QuantizedLayer::scaled_levels() const {
    std::vector<double> out(levels.levels.size());
    std::transform(levels.levels.begin(), levels.levels.end(), out.begin(), [&](double l) { return scale * l; });
    return out;
}

QuantizedLayer quantized_layer(int bits, double scale, QuantStyle style) {
    if (!(scale > 0.0)) throw DomainError("quantization scale must be positive");
    return {bits, scale, level_set(bits, style)};
}

TensorD dorefa_quantize(const TensorD& weights, int bits) {
    if (bits < 2 || bits > 16) throw DomainError("DoReFa bitwidth must be in [2, 16], got " + std::to_string(bits));
    if (!weights.all_finite()) throw DomainError("DoReFa input contains non-finite values");
    TensorD out(weights.shape());
    const double max_tanh = weights.size() ? weights.vector().array().tanh().abs().maxCoeff() : 0.0;
    if (max_tanh == 0.0) return out;
    const long k = (1L << bits) - 1;
    for (Index i = 0; i < weights.size(); ++i) {
        const double x = std::tanh(weights[i]) / (2.0 * max_tanh) + 0.5;
        const long r = std::lround(double(k) * x);
        // 2 r / k - 1 written over a common denominator so it equals the level m / k bit for bit.
        out[i] = double(2 * r - k) / double(k);
    }
    return out;
}

TensorD wrpn_quantize(const TensorD& weights, int bits) {
    if (bits < 2 || bits > 17) throw DomainError("WRPN bitwidth must be in [2, 17], got " + std::to_string(bits));
    const long n = (1L << (bits - 1)) - 1;
    TensorD out(weights.shape());
    for (Index i = 0; i < weights.size(); ++i) {
        const double w = std::clamp(weights[i], -1.0, 1.0);
        out[i] = double(std::lround(double(n) * w)) / double(n);
    }
    return out;
}

std::size_t nearest_level(const std::vector<double>& sorted_levels, double w) {
    if (sorted_levels.empty()) throw Error("empty level set");
    auto hi = std::lower_bound(sorted_levels.begin(), sorted_levels.end(), w);
    if (hi == sorted_levels.begin()) return 0;
    if (hi == sorted_levels.end()) return sorted_levels.size() - 1;
    auto lo = std::prev(hi);
    return (w - *lo <= *hi - w) ? std::size_t(lo - sorted_levels.begin()) : std::size_t(hi - sorted_levels.begin());
}

SnapResult snap_and_error(const TensorD& weights, const LevelSet& levels, double scale) {
    if (!(scale > 0.0)) throw DomainError("snap scale must be positive");
    if (levels.levels.empty()) throw Error("cannot snap to an empty level set");
    std::vector<double> scaled(levels.levels.size());
    std::transform(levels.levels.begin(), levels.levels.end(), scaled.begin(), [&](double l) { return scale * l; });
    SnapResult r;
    r.snapped = TensorD(weights.shape());
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (Index i = 0; i < weights.size(); ++i) {
        const double q = scaled[nearest_level(scaled, weights[i])];
        r.snapped[i] = q;
        const double e = weights[i] - q;
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    if (weights.size()) {
        r.mean_abs_err = abs_sum / double(weights.size());
        r.mse = sq_sum / double(weights.size());
    }
    return r;
}

}  // namespace waveq
