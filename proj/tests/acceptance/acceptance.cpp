// Acceptance checks. One line per criterion; exit status is nonzero when any
// selected criterion fails. Run with --criterion N for a single one.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "waveq/analysis.hpp"
#include "waveq/cli.hpp"
#include "waveq/config.hpp"
#include "waveq/quantizer.hpp"
#include "waveq/regularizer.hpp"
#include "waveq/trainer.hpp"

using namespace waveq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

// Accuracies are ratios of sample counts; this only absorbs their rounding.
constexpr double kCountSlack = 1e-12;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome gradient_fidelity() {
    std::mt19937_64 gen(20240601);
    std::uniform_real_distribution<double> wd(-1.0, 1.0), bd(1.0, 8.0), ld(1e-3, 1.0), lbd(0.0, 1e-2);
    std::uniform_int_distribution<int> kd(0, 2);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double w = wd(gen), beta = bd(gen), lw = ld(gen), lb = lbd(gen);
        RegularizerConfig cfg;
        cfg.variant = kd(gen);
        const std::vector<TensorD> layer = {TensorD({1}, {w})};
        const std::vector<double> betas = {beta};
        const auto r = total_regularizer<double>(layer, betas, lw, lb, cfg);

        const long double hw = 1e-7L * std::max(1.0L, std::abs((long double)w));
        const long double hb = 1e-7L * std::max(1.0L, std::abs((long double)beta));
        const auto fd_w = oracle::central_difference(
            [&](long double x) { return lw * oracle::sinusoid(x, beta, cfg.variant) + lb * (long double)beta; }, w, hw);
        const auto fd_b = oracle::central_difference(
            [&](long double b) { return lw * oracle::sinusoid(w, b, cfg.variant) + lb * b; }, beta, hb);
        worst = std::max({worst, oracle::relative_error(r.grad_w[0][0], double(fd_w)),
                          oracle::relative_error(r.dloss_dbeta[0], double(fd_b))});
    }
    return {worst < 1e-6, "max relative error " + fmt("%.3g", worst) + " over 1000 samples (< 1e-6)"};
}

Outcome zero_at_levels() {
    double worst = 0.0;
    long checked = 0;
    for (int b = 1; b <= 8; ++b)
        for (double level : level_set(b, QuantStyle::mid_tread).levels)
            for (int k = 0; k <= 2; ++k) {
                worst = std::max(worst, sinusoid_terms(level, double(b), k).value);
                ++checked;
            }
    return {worst <= 1e-12, "max loss " + fmt("%.3g", worst) + " at " + std::to_string(checked) + " (level, k) pairs (<= 1e-12)"};
}

Outcome gradient_boundedness() {
    const auto rep = gradient_bound_report(GradBoundConfig{});
    const double r0 = rep.sup_over(0, {7, 8}) / rep.sup_over(0, {3, 4});
    const double r2 = rep.sup_over(2, {7, 8}) / rep.sup_over(2, {1, 2});
    const bool c0 = r0 >= 10.0;
    const bool c1 = std::isfinite(rep.sup_full[1]);
    const bool c2 = r2 <= 0.01;
    std::string d = "R0 [7,8]/[3,4] = " + fmt("%.4g", r0) + (c0 ? " ok" : " FAIL") + " (>= 10); R1 sup = " +
                    fmt("%.4g", rep.sup_full[1]) + (c1 ? " ok" : " FAIL") + " (finite); R2 [7,8]/[1,2] = " +
                    fmt("%.6f", r2) + (c2 ? " ok" : " FAIL") + " (<= 0.01)";
    return {c0 && c1 && c2, d};
}

bool is_member(const std::vector<double>& levels, double v) { return std::binary_search(levels.begin(), levels.end(), v); }

Outcome quantizer_exactness() {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nd(0.0, 0.5);
    Eigen::VectorXd raw(10000);
    for (auto& v : raw) v = nd(gen);
    const TensorD w({10000}, raw);

    long dorefa_bad = 0, wrpn_bad = 0;
    for (int b = 2; b <= 8; ++b) {
        const auto levels = level_set(b, QuantStyle::mid_tread).levels;
        const auto q = dorefa_quantize(w, b);
        for (Index i = 0; i < q.size(); ++i) dorefa_bad += !is_member(levels, q[i]);
    }
    for (int b = 2; b <= 8; ++b) {
        const auto levels = level_set(b - 1, QuantStyle::mid_tread).levels;
        const auto q = wrpn_quantize(w, b);
        for (Index i = 0; i < q.size(); ++i) wrpn_bad += !is_member(levels, q[i]);
    }

    long mismatches = 0, compared = 0;
    std::uniform_real_distribution<double> sd(0.25, 2.0);
    for (int b = 1; b <= 8; ++b)
        for (QuantStyle style : {QuantStyle::mid_tread, QuantStyle::mid_rise}) {
            const auto ls = level_set(b, style);
            const double c = sd(gen);
            std::uniform_real_distribution<double> ud(-1.2 * c, 1.2 * c);
            Eigen::VectorXd x(10000);
            for (auto& v : x) v = ud(gen);
            const auto snapped = snap_and_error(TensorD({10000}, x), ls, c).snapped;
            for (Index i = 0; i < x.size(); ++i, ++compared)
                mismatches += snapped[i] != oracle::exhaustive_snap(ls.levels, c, x[i]);
        }
    const bool ok = dorefa_bad == 0 && wrpn_bad == 0 && mismatches == 0;
    return {ok, "non-members DoReFa " + std::to_string(dorefa_bad) + ", WRPN " + std::to_string(wrpn_bad) +
                    "; snap mismatches " + std::to_string(mismatches) + " of " + std::to_string(compared)};
}

// MNIST 784-64-10, float pre-training then a 5-epoch preset b=3 fine-tune.
// Mean reduction over ~50k weights divides each weight's pull by N, so the
// ramp ends at a larger lambda_w than the learned-mode default.
RunConfig mnist_config(const fs::path& out) {
    RunConfig c;
    c.dataset.kind = DatasetKind::idx_pair;
    c.dataset.images_path = WAVEQ_SOURCE_DIR "/data/mnist10k/images-idx3-ubyte.gz";
    c.dataset.labels_path = WAVEQ_SOURCE_DIR "/data/mnist10k/labels-idx1-ubyte.gz";
    c.hidden = {64};
    c.exempt_first_last = false;
    c.mode = TrainMode::finetune;
    c.pretrain_epochs = 5;
    c.epochs = 5;
    c.regularizer.mode = RegMode::preset_bits;
    c.preset_bits = {3};
    c.schedule.lambda_w_max = 5.0;
    c.output_dir = out.string();
    return c;
}

Outcome desk_qat() {
    const auto run = run_training(mnist_config(oracle::scratch("c5_quant")));
    auto base_cfg = mnist_config(oracle::scratch("c5_float"));
    base_cfg.regularizer_enabled = false;
    const auto base = run_training(base_cfg);

    const double near = near_level_fraction(run.state, run.config, 0.1);
    const double drop = 100.0 * (base.final_eval.acc_float - run.final_eval.acc_quant);
    const bool ok = near >= 0.9 && drop <= 2.0 + 100 * kCountSlack;
    return {ok, "within 10% of a bin " + fmt("%.4f", near) + " (>= 0.90); float " + fmt("%.4f", base.final_eval.acc_float) +
                    ", snapped " + fmt("%.4f", run.final_eval.acc_quant) + ", drop " + fmt("%.2f", drop) +
                    " pts (<= 2.0)"};
}

double average_bits(const RunResult& r) {
    std::vector<int> bits;
    std::vector<Index> counts;
    for (std::size_t i = 0; i < r.final_eval.layers.size(); ++i) {
        bits.push_back(r.final_eval.layers[i].bits);
        counts.push_back(r.state.model.layers()[i].weights.size());
    }
    return weighted_average_bits(bits, counts);
}

// Default blobs fixture, default net and schedule. With the default net's two
// layers, first/last exemption would leave nothing to learn, so it is off.
Outcome bitwidth_learning() {
    RunConfig learned;
    learned.exempt_first_last = false;
    learned.log_interval = 1;
    learned.output_dir = oracle::scratch("c6_learned").string();
    RunConfig preset = learned;
    preset.regularizer.mode = RegMode::preset_bits;
    preset.preset_bits = {4};
    preset.output_dir = oracle::scratch("c6_preset4").string();

    const auto lr = run_training(learned);
    const auto pr = run_training(preset);

    bool bits_ok = true;
    std::string bits;
    for (const auto& l : lr.final_eval.layers) {
        bits_ok &= l.bits >= 2 && l.bits <= 8;
        bits += (bits.empty() ? "" : ",") + std::to_string(l.bits);
    }
    const long T = lr.config.schedule.total_iterations;
    const long tail_start = T - T / 10;
    double drift = 0.0;
    const MetricsRow* anchor = nullptr;
    for (const auto& row : lr.metrics) {
        if (row.iteration < tail_start) continue;
        if (!anchor) anchor = &row;
        for (std::size_t i = 0; i < row.betas.size(); ++i) drift = std::max(drift, std::abs(row.betas[i] - anchor->betas[i]));
    }
    const double avg_l = average_bits(lr), avg_p = average_bits(pr);
    const double acc_l = lr.final_eval.acc_quant, acc_p = pr.final_eval.acc_quant;
    const bool drift_ok = anchor != nullptr && drift < 1e-3;
    const bool acc_ok = acc_l >= acc_p - 0.01 - kCountSlack;
    const bool avg_ok = avg_l <= avg_p;
    return {bits_ok && drift_ok && acc_ok && avg_ok,
            "bits [" + bits + "]" + (bits_ok ? " ok" : " FAIL") + " (in [2,8]); tail |dbeta| " + fmt("%.3g", drift) +
                (drift_ok ? " ok" : " FAIL") + " (< 1e-3); acc " + fmt("%.4f", acc_l) + " vs preset-4 " +
                fmt("%.4f", acc_p) + (acc_ok ? " ok" : " FAIL") + " (within 1 pt); avg bits " + fmt("%.3f", avg_l) +
                " vs " + fmt("%.3f", avg_p) + (avg_ok ? " ok" : " FAIL") + " (<=)"};
}

Outcome theorem_harness() {
    const Objective e0 = [](const Point& x) { return std::pow(std::sin(std::numbers::pi * x[0]), 2); };
    const Objective r = [](const Point& x) { return x.squaredNorm(); };
    const std::vector<Interval> domain = {{-2.5, 2.5}};
    const std::vector<double> deltas = {1e-1, 1e-2, 1e-3, 1e-4};
    const auto res = theorem_convergence_check(e0, r, domain, 1e-3, deltas);
    const bool mono = std::is_sorted(res.distances.rbegin(), res.distances.rend());
    const bool last = res.distances.back() <= 2e-3;
    std::string seq;
    for (double d : res.distances) seq += (seq.empty() ? "" : ", ") + fmt("%.3g", d);
    return {mono && last, "distances [" + seq + "]; last <= 2e-3 " + (last ? "ok" : "FAIL") + ", nonincreasing " +
                              (mono ? "ok" : "FAIL")};
}

Outcome pareto_analog() {
    const fs::path dir = oracle::scratch("c8_enumerate");
    const std::vector<std::string> args = {
        "enumerate", "--out", dir.string(),
        "--set", "dataset.kind=blobs", "--set", "dataset.n=5000", "--set", "dataset.separation=1.5",
        "--set", "hidden=[16]", "--set", "exempt_first_last=false", "--set", "epochs=5",
        "--set", "analysis.pretrain_epochs=10", "--set", "analysis.finetune_epochs=5",
        "--set", "analysis.choices=[[2,3,4],[2,3,4]]"};
    std::ostringstream out, err;
    if (const int code = cli::dispatch(args, out, err); code != 0) return {false, "enumerate exited " + std::to_string(code) + ": " + err.str()};
    const auto report = read_json_file(dir / "pareto.json");
    const auto n = report["points"].size();
    const double margin = report["learned"]["domination_margin"].get<double>();
    const bool ok = n == 9 && margin <= 0.005 + kCountSlack;
    return {ok, std::to_string(n) + " points (9); learned bits " + report["learned"]["bits"].dump() + ", margin " +
                    fmt("%.2f", 100 * margin) + " pts (<= 0.5)"};
}

Outcome determinism() {
    const auto a = oracle::scratch("c9_a"), b = oracle::scratch("c9_b");
    run_training(mnist_config(a));
    run_training(mnist_config(b));
    const auto ma = oracle::read_file(a / "metrics.csv"), mb = oracle::read_file(b / "metrics.csv");
    const bool ok = !ma.empty() && ma == mb;
    return {ok, "metrics.csv " + std::to_string(ma.size()) + " vs " + std::to_string(mb.size()) + " bytes, " +
                    (ma == mb ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int only = 0;
    app.add_option("--criterion", only, "run one criterion (1-9)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all = {
        {1, "gradient fidelity", 10, gradient_fidelity},
        {2, "zero at levels", 1, zero_at_levels},
        {3, "gradient boundedness", 30, gradient_boundedness},
        {4, "quantizer exactness", 5, quantizer_exactness},
        {5, "desk-scale QAT", 300, desk_qat},
        {6, "bitwidth learning", 300, bitwidth_learning},
        {7, "theorem harness", 10, theorem_harness},
        {8, "pareto analog", 900, pareto_analog},
        {9, "determinism", 600, determinism},  // two criterion-5 runs
    };
    bool all_pass = true;
    for (const auto& c : all) {
        if (only && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.limit_seconds;
        const bool pass = o.pass && in_time;
        all_pass &= pass;
        std::cout << "criterion " << c.id << " (" << c.name << "): " << (pass ? "PASS" : "FAIL") << "  " << o.detail
                  << "  [" << fmt("%.2f", secs) << " s, limit " << c.limit_seconds << " s" << (in_time ? "" : ", OVER")
                  << "]" << std::endl;
    }
    return all_pass ? 0 : 1;
}
