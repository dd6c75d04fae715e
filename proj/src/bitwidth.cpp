#include "waveq/bitwidth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "waveq/errors.hpp"

namespace waveq {

BitwidthMapping bitwidth_from_beta(double beta) {
    if (!(beta >= 1.0)) throw DomainError("beta must be >= 1, got " + std::to_string(beta));
    const int bits = int(std::ceil(beta));
    const double alpha = double(bits) / beta;
    return {bits, alpha, std::exp2(alpha)};
}

double period_matched_scale(double beta) {
    const int bits = bitwidth_from_beta(beta).bits;
    return (std::ldexp(1.0, bits) - 1.0) / (std::exp2(beta) - 1.0);
}

namespace {

void check_endpoints(double a, double b, RampShape shape, const char* name) {
    if (a < 0.0 || b < 0.0) throw ConfigError(std::string(name) + " endpoints must be non-negative");
    if (shape == RampShape::exponential && (a == 0.0) != (b == 0.0))
        throw ConfigError(std::string(name) + ": exponential ramp needs both endpoints positive or both zero");
}

// Monotone interpolation from a (f = 0) to b (f = 1).
double ramp(double a, double b, double f, RampShape shape) {
    if (f <= 0.0) return a;
    if (f >= 1.0) return b;
    if (shape == RampShape::linear || a == 0.0) return a + (b - a) * f;
    return a * std::pow(b / a, f);
}

}  // namespace

void ScheduleConfig::validate() const {
    if (total_iterations <= 0) throw ConfigError("schedule total_iterations must be positive");
    if (!(0.0 < t1 && t1 < t2 && t2 < 1.0)) throw ConfigError("schedule needs 0 < t1 < t2 < 1");
    check_endpoints(lambda_w_min, lambda_w_max, shape, "lambda_w");
    check_endpoints(lambda_beta_min, lambda_beta_peak, shape, "lambda_beta ramp");
    check_endpoints(lambda_beta_peak, lambda_beta_final, shape, "lambda_beta decay");
    if (lambda_w_min > lambda_w_max) throw ConfigError("lambda_w_min exceeds lambda_w_max");
    if (lambda_beta_min > lambda_beta_peak || lambda_beta_final > lambda_beta_peak)
        throw ConfigError("lambda_beta_peak must bound lambda_beta_min and lambda_beta_final");
    if (lambda_beta_peak > 0.0 && !(lambda_beta_peak < lambda_w_max))
        throw ConfigError("lambda_beta_peak must be smaller than lambda_w_max");
}

PhaseState lambda_schedule(long iteration, const ScheduleConfig& config) {
    if (iteration < 0 || iteration > config.total_iterations)
        throw InputError("iteration " + std::to_string(iteration) + " outside [0, " +
                         std::to_string(config.total_iterations) + "]");
    const double total = double(config.total_iterations);
    const double start2 = config.t1 * total;
    const double start3 = config.t2 * total;
    const double it = double(iteration);
    if (it < start2) return {1, config.lambda_w_min, config.lambda_beta_min};
    if (it < start3) {
        const double f = (it - start2) / (start3 - start2);
        return {2, ramp(config.lambda_w_min, config.lambda_w_max, f, config.shape),
                ramp(config.lambda_beta_min, config.lambda_beta_peak, f, config.shape)};
    }
    const double g = (it - start3) / (total - start3);
    return {3, config.lambda_w_max, ramp(config.lambda_beta_peak, config.lambda_beta_final, g, config.shape)};
}

BetaParam beta_step(BetaParam param, double dR_dbeta, double lr_beta, int phase) {
    if (lr_beta < 0.0) throw ConfigError("lr_beta must be non-negative");
    if (param.frozen) return param;
    if (phase >= 3) {
        param.frozen = true;
        return param;
    }
    param.beta = std::clamp(param.beta - lr_beta * dR_dbeta, param.beta_min, param.beta_max);
    return param;
}

}  // namespace waveq
