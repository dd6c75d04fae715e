#include "waveq/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>
#include <numbers>
#include <optional>

#include <CLI11.hpp>

#include "waveq/analysis.hpp"
#include "waveq/config.hpp"
#include "waveq/errors.hpp"

namespace waveq::cli {

using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

// Config file plus overrides, with --seed and --out folded in.
json resolved_json(const Options& o) {
    json j = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
    if (!j.is_object()) throw ConfigError(o.config_path + ": top level must be an object");
    for (const auto& s : o.overrides) apply_override(j, s);
    if (o.seed) j["seed"] = *o.seed;
    if (!o.out_dir.empty()) j["output_dir"] = o.out_dir;
    if (!j.contains("output_dir") || j["output_dir"].get<std::string>().empty()) j["output_dir"] = "out";
    return j;
}

// Splits off the "analysis" section, which only the analysis subcommands read.
std::pair<RunConfig, json> split_config(json j) {
    json analysis = json::object();
    if (j.contains("analysis")) {
        analysis = j["analysis"];
        j.erase("analysis");
    }
    return {run_config_from_json(j), analysis};
}

void write_manifest(const std::filesystem::path& dir, const std::string& subcommand, std::uint64_t seed,
                    std::chrono::steady_clock::duration elapsed) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_json_file({{"subcommand", subcommand},
                     {"seed", seed},
                     {"waveq_version", kVersion},
                     {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                           std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__},
                     {"finished_at", stamp},
                     {"wall_time_seconds", std::chrono::duration<double>(elapsed).count()}},
                    dir / "manifest.json");
}

template <typename T>
T value_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

json run_summary(const RunResult& r) {
    json layers = json::array();
    for (std::size_t i = 0; i < r.final_eval.layers.size(); ++i)
        layers.push_back({{"beta", r.state.betas[i].beta},
                          {"bits", r.final_eval.layers[i].bits},
                          {"scale", r.final_eval.layers[i].scale},
                          {"mean_abs_err", r.final_eval.layers[i].mean_abs_err}});
    return {{"iterations", r.state.iteration},
            {"acc_float", r.final_eval.acc_float},
            {"acc_quant", r.final_eval.acc_quant},
            {"layers", layers}};
}

int cmd_train(const Options& o, TrainMode mode, std::ostream& out) {
    json j = resolved_json(o);
    j["mode"] = mode == TrainMode::finetune ? "finetune" : "from_scratch";
    auto [config, analysis] = split_config(j);
    const auto data = load_dataset(config.dataset);
    const auto resolved = resolve_config(config, data.train.size());
    const std::filesystem::path dir = resolved.output_dir;
    std::filesystem::create_directories(dir);
    write_json_file(to_json(resolved), dir / "config.json");

    const auto start = std::chrono::steady_clock::now();
    std::optional<DistributionTracker> tracker;
    RunHooks hooks;
    if (value_or(analysis, "track_distributions", false)) {
        DistributionSpec spec;
        spec.epochs = value_or(analysis, "epochs", std::vector<long>{});
        spec.bins = value_or(analysis, "bins", spec.bins);
        spec.tracked_per_layer = value_or(analysis, "tracked_per_layer", spec.tracked_per_layer);
        spec.seed = resolved.seed;
        tracker.emplace(spec, resolved);
        hooks = tracker->hooks();
    }
    const auto result = run_training(resolved, data, hooks);
    if (tracker) write_json_file(to_json(tracker->log()), dir / "distributions.json");
    const json summary = run_summary(result);
    write_json_file(summary, dir / "summary.json");
    write_manifest(dir, mode == TrainMode::finetune ? "finetune" : "train", resolved.seed, std::chrono::steady_clock::now() - start);
    out << summary.dump(2) << '\n';
    return 0;
}

int cmd_enumerate(const Options& o, std::ostream& out) {
    const json j = resolved_json(o);
    auto [config, analysis] = split_config(j);
    const auto data = load_dataset(config.dataset);
    const std::filesystem::path dir = config.output_dir;
    std::filesystem::create_directories(dir);
    write_json_file(j, dir / "config.json");
    const auto start = std::chrono::steady_clock::now();

    ParetoConfig pc;
    pc.choices = value_or(analysis, "choices", std::vector<std::vector<int>>{});
    pc.finetune_epochs = value_or(analysis, "finetune_epochs", pc.finetune_epochs);
    pc.cap = value_or(analysis, "cap", pc.cap);
    pc.threads = value_or(analysis, "threads", 0u);
    const long pretrain_epochs = value_or(analysis, "pretrain_epochs", std::max(1L, config.pretrain_epochs));
    const auto pretrained = pretrain(config, data.train, pretrain_epochs);
    if (pc.choices.empty()) pc.choices.assign(pretrained.depth(), {2, 3, 4});
    const auto pareto = pareto_enumerate(config, data, pretrained, pc);
    json report = to_json(pareto);

    if (value_or(analysis, "learned", true)) {
        RunConfig learned = config;
        learned.mode = TrainMode::finetune;
        learned.regularizer.mode = RegMode::learned_beta;
        learned.preset_bits.clear();
        learned.output_dir = (dir / "learned").string();
        learned = resolve_config(learned, data.train.size());
        const auto run = run_training(learned, data, {}, initial_state(learned, data.train, pretrained));
        std::vector<Index> weights;
        for (const auto& l : pretrained.layers()) weights.push_back(l.weights.size());
        ParetoPoint p;
        for (const auto& l : run.final_eval.layers) p.bits.push_back(l.bits);
        p.avg_bits = weighted_average_bits(p.bits, weights);
        p.accuracy = run.final_eval.acc_quant;
        report["learned"] = {{"bits", p.bits},
                             {"avg_bits", p.avg_bits},
                             {"accuracy", p.accuracy},
                             {"domination_margin", domination_margin(p, pareto.points)}};
    }
    write_json_file(report, dir / "pareto.json");
    write_manifest(dir, "enumerate", config.seed, std::chrono::steady_clock::now() - start);
    out << report.dump(2) << '\n';
    return 0;
}

Objective named_objective(const std::string& name) {
    if (name == "sin2pi")
        return [](const Point& x) {
            double s = 0.0;
            for (Index i = 0; i < x.size(); ++i) s += std::pow(std::sin(std::numbers::pi * x[i]), 2);
            return s;
        };
    if (name == "square") return [](const Point& x) { return x.squaredNorm(); };
    if (name == "constant") return [](const Point&) { return 1.0; };
    if (name == "double_well")
        return [](const Point& x) {
            double s = 0.0;
            for (Index i = 0; i < x.size(); ++i) s += std::pow(x[i] * x[i] - 1.0, 2);
            return s;
        };
    throw ConfigError("unknown objective \"" + name + "\" (sin2pi, square, constant, double_well)");
}

int cmd_theorem(const Options& o, std::ostream& out) {
    const json j = resolved_json(o);
    const json analysis = j.value("analysis", json::object());
    const std::filesystem::path dir = j["output_dir"].get<std::string>();
    std::filesystem::create_directories(dir);
    write_json_file(j, dir / "config.json");
    const auto start = std::chrono::steady_clock::now();
    std::vector<Interval> domain;
    for (const auto& iv : value_or(analysis, "domain", std::vector<std::vector<double>>{{-2.5, 2.5}})) {
        if (iv.size() != 2) throw ConfigError("domain intervals need [lo, hi]");
        domain.push_back({iv[0], iv[1]});
    }
    const auto deltas = value_or(analysis, "deltas", std::vector<double>{1e-1, 1e-2, 1e-3, 1e-4});
    const auto result = theorem_convergence_check(named_objective(value_or<std::string>(analysis, "e0", "sin2pi")),
                                                  named_objective(value_or<std::string>(analysis, "r", "square")), domain,
                                                  value_or(analysis, "grid_step", 1e-3), deltas,
                                                  value_or(analysis, "value_tolerance", 1e-12));
    const json report = to_json(result);
    write_json_file(report, dir / "theorem.json");
    write_manifest(dir, "theorem-check", value_or<std::uint64_t>(j, "seed", 0), std::chrono::steady_clock::now() - start);
    for (std::size_t i = 0; i < result.deltas.size(); ++i)
        out << "delta=" << format_real(result.deltas[i]) << " hausdorff=" << format_real(result.distances[i]) << '\n';
    return 0;
}

int cmd_grad_report(const Options& o, std::ostream& out) {
    const json j = resolved_json(o);
    const json analysis = j.value("analysis", json::object());
    const std::filesystem::path dir = j["output_dir"].get<std::string>();
    std::filesystem::create_directories(dir);
    write_json_file(j, dir / "config.json");
    const auto start = std::chrono::steady_clock::now();
    GradBoundConfig gc;
    gc.variants = value_or(analysis, "variants", gc.variants);
    const auto beta = value_or(analysis, "beta", std::vector<double>{gc.beta.lo, gc.beta.hi});
    const auto w = value_or(analysis, "w", std::vector<double>{gc.w.lo, gc.w.hi});
    if (beta.size() != 2 || w.size() != 2) throw ConfigError("beta and w ranges need [lo, hi]");
    gc.beta = {beta[0], beta[1]};
    gc.w = {w[0], w[1]};
    gc.beta_step = value_or(analysis, "beta_step", gc.beta_step);
    gc.w_step = value_or(analysis, "w_step", gc.w_step);
    const auto rep = gradient_bound_report(gc);
    write_json_file(to_json(rep), dir / "grad_report.json");
    write_csv(rep, dir / "grad_report.csv");
    write_manifest(dir, "grad-report", value_or<std::uint64_t>(j, "seed", 0), std::chrono::steady_clock::now() - start);
    for (std::size_t v = 0; v < rep.variants.size(); ++v) {
        out << "R" << rep.variants[v] << ":";
        for (std::size_t b = 0; b < rep.bins.size(); ++b) out << ' ' << format_real(rep.sup[v][b]);
        out << " | full " << format_real(rep.sup_full[v]) << '\n';
    }
    return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
    if (o.out_dir.empty()) throw ConfigError("report needs --out <run directory>");
    const std::filesystem::path dir = o.out_dir;
    const auto rows = read_metrics(dir / "metrics.csv");
    if (rows.empty()) throw FormatError((dir / "metrics.csv").string() + ": no rows");
    const auto& first = rows.front();
    const auto& last = rows.back();
    json report = {{"rows", rows.size()},
                   {"first_iteration", first.iteration},
                   {"last_iteration", last.iteration},
                   {"final", {{"E0", last.e0}, {"R", last.reg}, {"betas", last.betas}, {"bits", last.bits},
                              {"quant_err", last.quant_err}, {"acc_float", last.acc_float}, {"acc_quant", last.acc_quant}}},
                   {"initial_quant_err", first.quant_err}};
    write_json_file(report, dir / "report.json");
    out << report.dump(2) << '\n';
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sinusoidal quantization-regularization lab", "waveq"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON run configuration");
        sub->add_option("--out", o.out_dir, "output directory");
        sub->add_option("--set", o.overrides, "override a config key (dotted.key=value), repeatable");
        sub->add_option("--seed", o.seed, "run seed");
    };
    auto* train = app.add_subcommand("train", "train a model from scratch with the regularizer");
    auto* finetune = app.add_subcommand("finetune", "fine-tune a pretrained model with the regularizer");
    auto* enumerate = app.add_subcommand("enumerate", "Pareto enumeration of per-layer bitwidth assignments");
    auto* theorem = app.add_subcommand("theorem-check", "grid check of minimizer-set convergence");
    auto* grad = app.add_subcommand("grad-report", "sup |dR_k/dbeta| table for the normalization variants");
    auto* report = app.add_subcommand("report", "summarize the metrics of a finished run");
    for (auto* s : {train, finetune, enumerate, theorem, grad, report}) add_common(s);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(o, TrainMode::from_scratch, out);
        if (finetune->parsed()) return cmd_train(o, TrainMode::finetune, out);
        if (enumerate->parsed()) return cmd_enumerate(o, out);
        if (theorem->parsed()) return cmd_theorem(o, out);
        if (grad->parsed()) return cmd_grad_report(o, out);
        if (report->parsed()) return cmd_report(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace waveq::cli
