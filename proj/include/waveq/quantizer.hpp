#pragma once

#include <vector>

#include "waveq/tensor.hpp"

namespace waveq {

/// mid_tread keeps 0 as a level; mid_rise shifts levels by half a bin so 0 is excluded.
enum class QuantStyle { mid_tread, mid_rise };

/// Sorted normalized quantization levels in [-1, 1] for a (bitwidth, style).
struct LevelSet {
    int bits = 0;
    QuantStyle style = QuantStyle::mid_tread;
    std::vector<double> levels;
    double bin_width = 0.0;  // spacing between adjacent levels
};

/// Levels of a b-bit quantizer (1 <= b <= 16).
///
/// mid_tread: m / (2^b - 1) for m = -(2^b - 1) .. 2^b - 1, i.e. 2k + 1 values
/// with k = 2^b - 1. mid_rise: the same grid shifted by half a bin, keeping the
/// symmetric points strictly inside (-1, 1); b = 1 is the binary set {-1, 1}.
LevelSet level_set(int bits, QuantStyle style);

/// A layer's level set scaled into [-c, c].
struct QuantizedLayer {
    int bits = 0;
    double scale = 1.0;
    LevelSet levels;

    std::vector<double> scaled_levels() const;
};

QuantizedLayer quantized_layer(int bits, double scale, QuantStyle style);

/// DoReFa weight quantizer: 2 q_b(tanh(w) / (2 max|tanh(W)|) + 1/2) - 1, with
/// q_b(x) = round((2^b - 1) x) / (2^b - 1). Outputs are exact members of the
/// mid-tread level set. An all-zero input yields all zeros.
TensorD dorefa_quantize(const TensorD& weights, int bits);

/// WRPN quantizer with one sign bit: clip to [-1, 1], then
/// round((2^(k-1) - 1) w) / (2^(k-1) - 1).
TensorD wrpn_quantize(const TensorD& weights, int bits);

struct SnapResult {
    TensorD snapped;
    double mean_abs_err = 0.0;
    double mse = 0.0;
};

/// Maps every weight to its nearest c-scaled level; exact ties go to the lower level.
SnapResult snap_and_error(const TensorD& weights, const LevelSet& levels, double scale);

/// Nearest-level index in a sorted level vector (ties to the lower level).
std::size_t nearest_level(const std::vector<double>& sorted_levels, double w);

}  // namespace waveq
