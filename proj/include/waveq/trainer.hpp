#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "waveq/bitwidth.hpp"
#include "waveq/data.hpp"
#include "waveq/model.hpp"
#include "waveq/random.hpp"
#include "waveq/regularizer.hpp"

namespace waveq {

enum class TrainMode { from_scratch, finetune };

/// How a layer's snap scale c is chosen at evaluation time.
/// period_matched: c = (2^b - 1) / (2^beta - 1), so snap levels coincide with
/// the regularizer minima. alpha: c = 2^(b / beta) as returned by bitwidth_from_beta.
enum class SnapScaleRule { period_matched, alpha };

struct OptimizerConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double lr_beta = 1e-3;
    long batch_size = 32;
    double weight_decay = 0.0;  // optional L2 baseline, added to R

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct RunConfig {
    DatasetSpec dataset;
    std::vector<long> hidden = {32};
    double init_gain = 1.0;
    OptimizerConfig optimizer;
    RegularizerConfig regularizer;
    ScheduleConfig schedule;
    TrainMode mode = TrainMode::from_scratch;
    long pretrain_epochs = 0;     // finetune without init_checkpoint: float training first
    std::string init_checkpoint;  // finetune: start from this checkpoint's model
    std::vector<int> preset_bits; // preset mode: one value for all layers, or one per layer
    long epochs = 5;
    long iterations = 0;  // > 0 overrides epochs
    long log_interval = 50;
    std::string output_dir;  // empty: nothing is written
    std::uint64_t seed = 0;
    bool regularizer_enabled = true;
    double beta_init = 5.0;
    double beta_min = 1.0;
    double beta_max = 8.0;
    bool exempt_first_last = true;
    SnapScaleRule snap_scale = SnapScaleRule::period_matched;
    bool write_checkpoints = true;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Fills derived fields (schedule length from epochs, lambda_beta = 0 in
/// preset mode) and validates. `train_size` is the number of training rows.
RunConfig resolve_config(RunConfig config, Index train_size);

long batches_per_epoch(const RunConfig& config, Index train_size);

/// Layers that the sinusoidal regularizer acts on.
std::vector<bool> regularized_layers(const RunConfig& config, std::size_t depth);

/// Preset bitwidth of layer i (exempt layers read 8).
int preset_bits_for(const RunConfig& config, std::size_t layer, std::size_t depth);

struct TrainState {
    ModelD model;
    std::vector<BetaParam> betas;
    long iteration = 0;
    std::uint64_t seed = 0;
    Rng rng;
    std::vector<Index> order;  // sample permutation of the current epoch
    GradientSetD velocity;

    friend bool operator==(const TrainState& a, const TrainState& b) {
        return a.model == b.model && a.betas == b.betas && a.iteration == b.iteration && a.seed == b.seed &&
               a.rng == b.rng && a.order == b.order && flatten_gradients(a.velocity) == flatten_gradients(b.velocity);
    }
};

/// Fresh state: initialized (or given) model, betas at beta_init, zero momentum.
TrainState initial_state(const RunConfig& config, const Dataset& train, std::optional<ModelD> model = std::nullopt);

/// E = E0 + R; throws NumericError when either term is non-finite.
double compose_loss(double e0, double reg);

struct StepInfo {
    double e0 = 0.0;
    double reg = 0.0;
    PhaseState phase;
};

/// Regularizer value and gradients for the state's current weights and betas.
struct RegEvaluation {
    double loss = 0.0;
    std::vector<TensorD> grad_w;       // per model layer (zeros where not regularized)
    std::vector<double> dloss_dbeta;   // per model layer
};

RegEvaluation evaluate_regularizer(const TrainState& state, const RunConfig& config, const PhaseState& lambdas);

/// One SGD-with-momentum step on E0 + R over the next mini-batch, followed by
/// the beta update. Throws NumericError when E is non-finite or exceeds 1e6.
StepInfo train_step(TrainState& state, const Dataset& train, const RunConfig& config);

struct LayerQuantization {
    int bits = 0;
    double scale = 1.0;
    double mean_abs_err = 0.0;
};

struct QuantEval {
    double acc_float = 0.0;
    double acc_quant = 0.0;
    std::vector<LayerQuantization> layers;
};

/// The model with every weight snapped to its layer's scaled level set.
ModelD snap_model(const ModelD& model, const std::vector<BetaParam>& betas, QuantStyle style, SnapScaleRule rule,
                  std::vector<LayerQuantization>* layers = nullptr);

QuantEval evaluate_quantized(const ModelD& model, const std::vector<BetaParam>& betas, const Dataset& data,
                             QuantStyle style = QuantStyle::mid_tread, SnapScaleRule rule = SnapScaleRule::period_matched);

/// Fraction of the regularized weights within `tolerance * bin width` of
/// their nearest scaled level.
double near_level_fraction(const TrainState& state, const RunConfig& config, double tolerance);

struct RunHooks {
    /// Called at every epoch boundary (iteration 0, each full epoch, and the end).
    std::function<void(const TrainState&, long epoch)> on_epoch;
};

struct RunResult {
    TrainState state;
    RunConfig config;  // resolved
    std::vector<MetricsRow> metrics;
    QuantEval final_eval;
    std::vector<std::filesystem::path> checkpoints;
};

/// Float-only SGD of `model` for `epochs` epochs (the pre-training used by finetune runs).
ModelD pretrain(const RunConfig& config, const Dataset& train, long epochs);

/// Full run: optional pre-training, the regularized loop with metrics every
/// log_interval iterations, checkpoints at phase boundaries and at the end.
RunResult run_training(const RunConfig& config, const DatasetSplit& data, const RunHooks& hooks = {},
                       std::optional<TrainState> resume = std::nullopt);

RunResult run_training(const RunConfig& config, const RunHooks& hooks = {});

/// Checkpoint files are JSON; see README for the layout.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace waveq
