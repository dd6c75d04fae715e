#include "waveq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "waveq/errors.hpp"

namespace waveq {

using json = nlohmann::json;

namespace {

constexpr double kDivergenceThreshold = 1e6;

std::vector<Index> layer_widths(const RunConfig& config, Index input_dim, int classes) {
    std::vector<Index> widths{input_dim};
    for (long h : config.hidden) widths.push_back(Index(h));
    widths.push_back(classes);
    return widths;
}

bool strengths_all_zero(const PhaseState& lambdas, const RunConfig& config) {
    return lambdas.lambda_w == 0.0 && lambdas.lambda_beta == 0.0 && config.optimizer.weight_decay == 0.0;
}

// Loss and accuracy of a model on a whole split from one forward pass.
std::pair<double, double> loss_and_accuracy(const ModelD& model, const Dataset& data) {
    if (data.size() == 0) return {0.0, 0.0};
    const auto logits = forward(model, data.features).logits;
    const double l = softmax_cross_entropy<double>(logits.matrix(), data.labels, nullptr);
    const auto m = logits.matrix();
    Index correct = 0;
    for (Index i = 0; i < m.rows(); ++i) {
        Index arg;
        m.row(i).maxCoeff(&arg);
        if (arg == data.labels[std::size_t(i)]) ++correct;
    }
    return {l, double(correct) / double(m.rows())};
}

}  // namespace

long batches_per_epoch(const RunConfig& config, Index train_size) {
    if (config.optimizer.batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (train_size <= 0) throw InputError("training set is empty");
    return long((train_size + config.optimizer.batch_size - 1) / config.optimizer.batch_size);
}

RunConfig resolve_config(RunConfig config, Index train_size) {
    config.dataset.validate();
    for (long h : config.hidden)
        if (h <= 0) throw ConfigError("hidden layer widths must be positive");
    const auto& opt = config.optimizer;
    if (opt.lr < 0.0 || opt.lr_beta < 0.0) throw ConfigError("learning rates must be non-negative");
    if (opt.momentum < 0.0 || opt.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    if (opt.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (config.log_interval <= 0) throw ConfigError("log_interval must be positive");
    if (config.iterations < 0 || config.epochs < 0 || (config.iterations == 0 && config.epochs == 0))
        throw ConfigError("need a positive number of epochs or iterations");
    if (!(config.beta_min >= 1.0 && config.beta_min <= config.beta_init && config.beta_init <= config.beta_max))
        throw ConfigError("need 1 <= beta_min <= beta_init <= beta_max");
    if (config.pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be non-negative");
    config.regularizer.validate();

    const long bpe = batches_per_epoch(config, train_size);
    config.schedule.total_iterations = config.iterations > 0 ? config.iterations : config.epochs * bpe;

    if (config.regularizer.mode == RegMode::preset_bits) {
        if (config.preset_bits.empty()) throw ConfigError("preset mode needs preset_bits");
        for (int b : config.preset_bits)
            if (b < 1 || b > 16) throw ConfigError("preset bitwidths must lie in [1, 16]");
        config.schedule.lambda_beta_min = 0.0;
        config.schedule.lambda_beta_peak = 0.0;
        config.schedule.lambda_beta_final = 0.0;
    } else if (!config.preset_bits.empty()) {
        throw ConfigError("preset_bits is only valid with regularizer mode preset_bits");
    }
    config.schedule.validate();
    return config;
}

std::vector<bool> regularized_layers(const RunConfig& config, std::size_t depth) {
    std::vector<bool> on(depth, true);
    if (config.exempt_first_last && depth > 0) {
        on.front() = false;
        on.back() = false;
    }
    return on;
}

int preset_bits_for(const RunConfig& config, std::size_t layer, std::size_t depth) {
    if (!regularized_layers(config, depth)[layer]) return 8;
    if (config.preset_bits.size() == 1) return config.preset_bits[0];
    if (config.preset_bits.size() != depth)
        throw ConfigError("preset_bits needs 1 or " + std::to_string(depth) + " entries, got " +
                          std::to_string(config.preset_bits.size()));
    return config.preset_bits[layer];
}

TrainState initial_state(const RunConfig& config, const Dataset& train, std::optional<ModelD> model) {
    TrainState s;
    s.seed = config.seed;
    s.rng = Rng(config.seed);
    if (model) {
        s.model = std::move(*model);
        if (s.model.input_dim() != train.dimension() || s.model.class_count() != train.classes)
            throw DimensionError("initial model does not match the dataset's input width or class count");
    } else {
        s.model = init_mlp<double>(layer_widths(config, train.dimension(), train.classes), s.rng, config.init_gain);
    }
    const std::size_t depth = s.model.depth();
    const auto on = regularized_layers(config, depth);
    for (std::size_t i = 0; i < depth; ++i) {
        BetaParam p{i, config.beta_init, false, config.beta_min, config.beta_max};
        if (!on[i]) {
            p.beta = 8.0;
            p.beta_max = std::max(p.beta_max, 8.0);
            p.frozen = true;
        } else if (config.regularizer.mode == RegMode::preset_bits) {
            p.beta = preset_bits_for(config, i, depth);
            p.beta_min = std::min(p.beta_min, p.beta);
            p.beta_max = std::max(p.beta_max, p.beta);
            p.frozen = true;
        }
        s.betas.push_back(p);
    }
    s.order.resize(std::size_t(train.size()));
    std::iota(s.order.begin(), s.order.end(), Index{0});
    s.velocity = GradientSetD::zeros_like(s.model);
    return s;
}

double compose_loss(double e0, double reg) {
    if (!std::isfinite(e0) || !std::isfinite(reg))
        throw NumericError("non-finite loss term (E0 = " + format_real(e0) + ", R = " + format_real(reg) + ")");
    return e0 + reg;
}

RegEvaluation evaluate_regularizer(const TrainState& state, const RunConfig& config, const PhaseState& lambdas) {
    const std::size_t depth = state.model.depth();
    RegEvaluation out;
    out.dloss_dbeta.assign(depth, 0.0);
    for (const auto& l : state.model.layers()) out.grad_w.emplace_back(l.weights.shape());
    if (!config.regularizer_enabled || strengths_all_zero(lambdas, config)) return out;

    const auto on = regularized_layers(config, depth);
    if (config.regularizer.mode == RegMode::learned_beta) {
        std::vector<TensorD> weights;
        std::vector<double> betas;
        std::vector<std::size_t> index;
        for (std::size_t i = 0; i < depth; ++i) {
            if (!on[i]) continue;
            weights.push_back(state.model.layer(i).weights);
            betas.push_back(state.betas[i].beta);
            index.push_back(i);
        }
        auto r = total_regularizer<double>(weights, betas, lambdas.lambda_w, lambdas.lambda_beta, config.regularizer);
        out.loss += r.loss;
        for (std::size_t j = 0; j < index.size(); ++j) {
            out.grad_w[index[j]] = std::move(r.grad_w[j]);
            out.dloss_dbeta[index[j]] = r.dloss_dbeta[j];
        }
    } else {
        for (std::size_t i = 0; i < depth; ++i) {
            if (!on[i]) continue;
            const double step = preset_step(preset_bits_for(config, i, depth), config.regularizer.convention);
            auto r = preset_sinreq<double>(state.model.layer(i).weights, step, preset_offset(step, config.regularizer.style),
                                           lambdas.lambda_w, config.regularizer.effective_reduction());
            out.loss += r.loss;
            out.grad_w[i] = std::move(r.grad_w);
        }
    }
    if (config.optimizer.weight_decay > 0.0) {
        std::vector<TensorD> all;
        for (const auto& l : state.model.layers()) all.push_back(l.weights);
        const auto wd = weight_decay<double>(all, config.optimizer.weight_decay);
        out.loss += wd.loss;
        for (std::size_t i = 0; i < depth; ++i) out.grad_w[i].vector() += wd.grad_w[i].vector();
    }
    return out;
}

StepInfo train_step(TrainState& state, const Dataset& train, const RunConfig& config) {
    const long bpe = batches_per_epoch(config, train.size());
    const long pos = state.iteration % bpe;
    if (Index(state.order.size()) != train.size()) throw InputError("train state does not match the training set size");
    std::vector<Index> order = state.order;
    Rng rng = state.rng;
    if (pos == 0) shuffle(order, rng);
    const auto bs = std::size_t(config.optimizer.batch_size);
    const std::size_t begin = std::size_t(pos) * bs;
    const std::size_t count = std::min(bs, order.size() - begin);
    const Dataset batch = train.subset(std::span<const Index>(order).subspan(begin, count));

    StepInfo info;
    info.phase = lambda_schedule(state.iteration, config.schedule);
    auto [e0, grads] = loss_and_gradients(state.model, batch.features, batch.labels);
    const auto reg = evaluate_regularizer(state, config, info.phase);
    const double total = compose_loss(e0, reg.loss);
    if (total > kDivergenceThreshold)
        throw NumericError("training diverged at iteration " + std::to_string(state.iteration) + ": E = " + format_real(total));
    info.e0 = e0;
    info.reg = reg.loss;

    const double lr = config.optimizer.lr;
    const double mu = config.optimizer.momentum;
    for (std::size_t i = 0; i < state.model.depth(); ++i) {
        auto& layer = state.model.layer(i);
        auto& vw = state.velocity.weights[i].vector();
        auto& vb = state.velocity.bias[i].vector();
        vw = mu * vw + (grads.weights[i].vector() + reg.grad_w[i].vector());
        vb = mu * vb + grads.bias[i].vector();
        layer.weights.vector() -= lr * vw;
        layer.bias.vector() -= lr * vb;
    }
    // A disabled regularizer yields dR/dbeta = 0, so this only applies the phase-3 freeze.
    if (config.regularizer.mode == RegMode::learned_beta)
        for (std::size_t i = 0; i < state.betas.size(); ++i)
            state.betas[i] = beta_step(state.betas[i], reg.dloss_dbeta[i], config.optimizer.lr_beta, info.phase.phase);
    if (!state.model.all_finite()) throw NumericError("non-finite parameters after iteration " + std::to_string(state.iteration));

    state.order = std::move(order);
    state.rng = rng;
    ++state.iteration;
    return info;
}

ModelD snap_model(const ModelD& model, const std::vector<BetaParam>& betas, QuantStyle style, SnapScaleRule rule,
                  std::vector<LayerQuantization>* layers) {
    if (betas.size() != model.depth()) throw InputError("need one beta per layer");
    ModelD snapped = model;
    if (layers) layers->clear();
    for (std::size_t i = 0; i < model.depth(); ++i) {
        const auto m = bitwidth_from_beta(betas[i].beta);
        const double scale = rule == SnapScaleRule::alpha ? m.scale : period_matched_scale(betas[i].beta);
        auto r = snap_and_error(model.layer(i).weights, level_set(m.bits, style), scale);
        snapped.layer(i).weights = std::move(r.snapped);
        if (layers) layers->push_back({m.bits, scale, r.mean_abs_err});
    }
    return snapped;
}

QuantEval evaluate_quantized(const ModelD& model, const std::vector<BetaParam>& betas, const Dataset& data, QuantStyle style,
                             SnapScaleRule rule) {
    if (data.size() == 0) throw InputError("cannot evaluate on an empty dataset");
    QuantEval e;
    const ModelD snapped = snap_model(model, betas, style, rule, &e.layers);
    e.acc_float = loss_and_accuracy(model, data).second;
    e.acc_quant = loss_and_accuracy(snapped, data).second;
    return e;
}

double near_level_fraction(const TrainState& state, const RunConfig& config, double tolerance) {
    const auto on = regularized_layers(config, state.model.depth());
    Index near = 0;
    Index total = 0;
    for (std::size_t i = 0; i < state.model.depth(); ++i) {
        if (!on[i]) continue;
        const double beta = state.betas[i].beta;
        const auto m = bitwidth_from_beta(beta);
        const double scale = config.snap_scale == SnapScaleRule::alpha ? m.scale : period_matched_scale(beta);
        const auto levels = level_set(m.bits, config.regularizer.style);
        const auto r = snap_and_error(state.model.layer(i).weights, levels, scale);
        const double bound = tolerance * scale * levels.bin_width;
        const auto& w = state.model.layer(i).weights.vector();
        near += ((w - r.snapped.vector()).array().abs() <= bound).count();
        total += w.size();
    }
    return total ? double(near) / double(total) : 0.0;
}

ModelD pretrain(const RunConfig& config, const Dataset& train, long epochs) {
    RunConfig plain = config;
    plain.mode = TrainMode::from_scratch;
    plain.regularizer_enabled = false;
    plain.iterations = 0;
    plain.epochs = epochs;
    plain.init_checkpoint.clear();
    plain.pretrain_epochs = 0;
    plain = resolve_config(plain, train.size());
    TrainState s = initial_state(plain, train);
    while (s.iteration < plain.schedule.total_iterations) train_step(s, train, plain);
    return s.model;
}

namespace {

MetricsRow metrics_row(const TrainState& state, const RunConfig& config, const DatasetSplit& data) {
    MetricsRow row;
    row.iteration = state.iteration;
    const auto lambdas = lambda_schedule(state.iteration, config.schedule);
    row.lambda_w = lambdas.lambda_w;
    row.lambda_beta = lambdas.lambda_beta;
    row.reg = evaluate_regularizer(state, config, lambdas).loss;
    std::vector<LayerQuantization> layers;
    const ModelD snapped = snap_model(state.model, state.betas, config.regularizer.style, config.snap_scale, &layers);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        row.betas.push_back(state.betas[i].beta);
        row.bits.push_back(layers[i].bits);
        row.quant_err.push_back(layers[i].mean_abs_err);
    }
    std::tie(row.e0, row.train_acc_float) = loss_and_accuracy(state.model, data.train);
    row.train_acc_quant = loss_and_accuracy(snapped, data.train).second;
    if (data.test.size() > 0) {
        row.acc_float = loss_and_accuracy(state.model, data.test).second;
        row.acc_quant = loss_and_accuracy(snapped, data.test).second;
    }
    return row;
}

}  // namespace

RunResult run_training(const RunConfig& config, const DatasetSplit& data, const RunHooks& hooks,
                       std::optional<TrainState> resume) {
    RunResult result;
    result.config = resolve_config(config, data.train.size());
    const RunConfig& cfg = result.config;

    if (resume) {
        result.state = std::move(*resume);
    } else {
        std::optional<ModelD> start;
        if (cfg.mode == TrainMode::finetune && cfg.init_checkpoint.empty() && cfg.pretrain_epochs <= 0)
            throw ConfigError("finetune needs init_checkpoint or pretrain_epochs > 0");
        if (cfg.mode == TrainMode::finetune)
            start = cfg.init_checkpoint.empty() ? pretrain(cfg, data.train, cfg.pretrain_epochs)
                                                : load_checkpoint(cfg.init_checkpoint).model;
        result.state = initial_state(cfg, data.train, std::move(start));
    }
    TrainState& state = result.state;
    const long total = cfg.schedule.total_iterations;
    if (state.iteration > total) throw InputError("resume state is past the end of the schedule");

    const std::filesystem::path out = cfg.output_dir;
    std::optional<MetricsWriter> writer;
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        const auto metrics_path = out / "metrics.csv";
        if (resume && std::filesystem::exists(metrics_path)) {
            auto kept = read_metrics(metrics_path);
            std::erase_if(kept, [&](const MetricsRow& r) { return r.iteration >= state.iteration; });
            if (kept.empty()) {
                writer.emplace(metrics_path, state.model.depth(), false);
            } else {
                write_metrics(kept, metrics_path);
                writer.emplace(metrics_path, state.model.depth(), true);
            }
        } else {
            writer.emplace(metrics_path, state.model.depth(), false);
        }
    }
    auto checkpoint = [&](const std::string& name) {
        if (out.empty() || !cfg.write_checkpoints) return;
        const auto path = out / name;
        save_checkpoint(state, path);
        result.checkpoints.push_back(path);
    };

    const long bpe = batches_per_epoch(cfg, data.train.size());
    for (;;) {
        const long it = state.iteration;
        if (hooks.on_epoch && (it % bpe == 0 || it == total)) hooks.on_epoch(state, (it + bpe - 1) / bpe);
        if (it % cfg.log_interval == 0 || it == total) {
            result.metrics.push_back(metrics_row(state, cfg, data));
            if (writer) writer->write(result.metrics.back());
        }
        if (it > 0 && it < total) {
            const int phase = lambda_schedule(it, cfg.schedule).phase;
            if (phase != lambda_schedule(it - 1, cfg.schedule).phase) checkpoint("checkpoint_phase" + std::to_string(phase) + ".json");
        }
        if (it == total) break;
        try {
            train_step(state, data.train, cfg);
        } catch (const NumericError&) {
            checkpoint("checkpoint_diverged.json");
            throw;
        }
    }
    checkpoint("checkpoint_final.json");
    const Dataset& eval_set = data.test.size() > 0 ? data.test : data.train;
    result.final_eval = evaluate_quantized(state.model, state.betas, eval_set, cfg.regularizer.style, cfg.snap_scale);
    return result;
}

RunResult run_training(const RunConfig& config, const RunHooks& hooks) {
    return run_training(config, load_dataset(config.dataset), hooks);
}

namespace {

json tensor_values(const TensorD& t) { return json(std::vector<double>(t.data(), t.data() + t.size())); }

TensorD tensor_from(const json& values, Shape shape, const std::string& what) {
    const auto v = values.get<std::vector<double>>();
    if (Index(v.size()) != shape_size(shape)) throw FormatError("checkpoint " + what + " has " + std::to_string(v.size()) + " values, expected " + std::to_string(shape_size(shape)));
    return TensorD(std::move(shape), Eigen::Map<const Vector<double>>(v.data(), Index(v.size())));
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    json j;
    j["format"] = "waveq-checkpoint";
    j["version"] = 1;
    j["iteration"] = state.iteration;
    j["seed"] = state.seed;
    std::ostringstream rng;
    rng << state.rng;
    j["rng"] = rng.str();
    j["order"] = state.order;
    j["layers"] = json::array();
    j["velocity"] = json::array();
    for (std::size_t i = 0; i < state.model.depth(); ++i) {
        const auto& l = state.model.layer(i);
        j["layers"].push_back({{"inputs", l.inputs()},
                               {"outputs", l.outputs()},
                               {"activation", l.activation == Activation::relu ? "relu" : "identity"},
                               {"weights", tensor_values(l.weights)},
                               {"bias", tensor_values(l.bias)}});
        j["velocity"].push_back({{"weights", tensor_values(state.velocity.weights[i])}, {"bias", tensor_values(state.velocity.bias[i])}});
    }
    j["betas"] = json::array();
    for (const auto& b : state.betas)
        j["betas"].push_back({{"layer", b.layer}, {"beta", b.beta}, {"frozen", b.frozen}, {"beta_min", b.beta_min}, {"beta_max", b.beta_max}});
    std::ofstream f(path);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f << j.dump() << '\n';
    if (!f) throw IoError("write failed on checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    try {
        const json j = json::parse(f);
        if (j.at("format") != "waveq-checkpoint") throw FormatError(path.string() + ": not a checkpoint");
        if (j.at("version") != 1) throw FormatError(path.string() + ": unsupported checkpoint version " + j.at("version").dump());
        TrainState s;
        s.iteration = j.at("iteration").get<long>();
        s.seed = j.at("seed").get<std::uint64_t>();
        std::istringstream rng(j.at("rng").get<std::string>());
        rng >> s.rng;
        if (!rng) throw FormatError(path.string() + ": bad rng state");
        s.order = j.at("order").get<std::vector<Index>>();
        std::vector<DenseLayer<double>> layers;
        for (const auto& l : j.at("layers")) {
            const Index in = l.at("inputs");
            const Index out = l.at("outputs");
            DenseLayer<double> d;
            d.weights = tensor_from(l.at("weights"), {out, in}, "weights");
            d.bias = tensor_from(l.at("bias"), {out}, "bias");
            d.activation = l.at("activation") == "relu" ? Activation::relu : Activation::identity;
            layers.push_back(std::move(d));
        }
        s.model = ModelD(std::move(layers));
        const auto& vel = j.at("velocity");
        if (vel.size() != s.model.depth()) throw FormatError(path.string() + ": velocity does not match layers");
        s.velocity = GradientSetD::zeros_like(s.model);
        for (std::size_t i = 0; i < s.model.depth(); ++i) {
            s.velocity.weights[i] = tensor_from(vel[i].at("weights"), s.model.layer(i).weights.shape(), "velocity");
            s.velocity.bias[i] = tensor_from(vel[i].at("bias"), s.model.layer(i).bias.shape(), "velocity");
        }
        for (const auto& b : j.at("betas"))
            s.betas.push_back({b.at("layer").get<std::size_t>(), b.at("beta").get<double>(), b.at("frozen").get<bool>(),
                               b.at("beta_min").get<double>(), b.at("beta_max").get<double>()});
        if (s.betas.size() != s.model.depth()) throw FormatError(path.string() + ": betas do not match layers");
        return s;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    } catch (const DimensionError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace waveq
