#pragma once

#include <cstddef>

namespace waveq {

/// Continuous per-layer period parameter; b = ceil(beta) is the bitwidth.
struct BetaParam {
    std::size_t layer = 0;
    double beta = 5.0;
    bool frozen = false;
    double beta_min = 1.0;
    double beta_max = 8.0;

    friend bool operator==(const BetaParam&, const BetaParam&) = default;
};

struct BitwidthMapping {
    int bits;      // ceil(beta)
    double alpha;  // bits / beta
    double scale;  // 2^alpha
};

/// b = ceil(beta), alpha = b / beta, c = 2^alpha. Throws DomainError for beta < 1.
BitwidthMapping bitwidth_from_beta(double beta);

/// Snap scale that puts a layer's b-bit levels exactly on the regularizer's
/// minima m / (2^beta - 1): c = (2^b - 1) / (2^beta - 1). Equals 1 at integer beta.
double period_matched_scale(double beta);

enum class RampShape { exponential, linear };

/// Three-phase regularization-strength profile over `total_iterations`.
///
/// Phase 1 (iter < t1 T) holds both strengths at their minima, phase 2 ramps
/// them to (lambda_w_max, lambda_beta_peak), phase 3 keeps lambda_w at its
/// maximum while lambda_beta decays to lambda_beta_final.
struct ScheduleConfig {
    long total_iterations = 1000;
    double t1 = 0.3;
    double t2 = 0.7;
    double lambda_w_min = 1e-7;
    double lambda_w_max = 1e-2;
    double lambda_beta_min = 1e-8;
    double lambda_beta_peak = 1e-4;
    double lambda_beta_final = 1e-10;
    RampShape shape = RampShape::exponential;

    void validate() const;

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct PhaseState {
    int phase = 1;
    double lambda_w = 0.0;
    double lambda_beta = 0.0;
};

PhaseState lambda_schedule(long iteration, const ScheduleConfig& config);

/// Gradient step on beta, clamped to [beta_min, beta_max]. Entering phase 3
/// freezes the parameter; frozen parameters never change again.
BetaParam beta_step(BetaParam param, double dR_dbeta, double lr_beta, int phase);

}  // namespace waveq
