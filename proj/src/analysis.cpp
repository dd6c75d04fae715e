#include "waveq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <thread>

#include "waveq/errors.hpp"

namespace waveq {

using json = nlohmann::json;

double hausdorff(std::span<const Point> a, std::span<const Point> b) {
    if (a.empty() || b.empty()) throw InputError("Hausdorff distance needs two non-empty sets");
    auto directed = [](std::span<const Point> from, std::span<const Point> to) {
        double worst = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, (p - q).norm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

std::vector<Point> grid_points(std::span<const Interval> box, double step) {
    if (!(step > 0.0)) throw InputError("grid step must be positive");
    if (box.empty()) throw InputError("empty domain");
    std::vector<std::pair<long, long>> ranges;
    for (const auto& iv : box) {
        const long lo = long(std::ceil(iv.lo / step - 1e-9));
        const long hi = long(std::floor(iv.hi / step + 1e-9));
        if (hi < lo) throw InputError("empty domain interval");
        ranges.emplace_back(lo, hi);
    }
    std::vector<Point> pts;
    std::vector<long> k(box.size());
    for (std::size_t d = 0; d < box.size(); ++d) k[d] = ranges[d].first;
    for (;;) {
        Point p(Index(box.size()));
        for (std::size_t d = 0; d < box.size(); ++d) p[Index(d)] = double(k[d]) * step;
        pts.push_back(std::move(p));
        std::size_t d = box.size();
        while (d-- > 0) {
            if (++k[d] <= ranges[d].second) break;
            k[d] = ranges[d].first;
        }
        if (d == std::size_t(-1)) break;
    }
    return pts;
}

namespace {

std::vector<std::size_t> argmin_set(const std::vector<double>& values, const std::vector<std::size_t>& among, double tol) {
    double best = std::numeric_limits<double>::infinity();
    for (auto i : among) best = std::min(best, values[i]);
    std::vector<std::size_t> out;
    for (auto i : among)
        if (values[i] <= best + tol) out.push_back(i);
    return out;
}

}  // namespace

TheoremResult theorem_convergence_check(const Objective& e0, const Objective& r, std::span<const Interval> domain,
                                        double grid_step, std::span<const double> deltas, double value_tolerance) {
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0)) throw InputError("deltas must be positive");
        if (i > 0 && !(deltas[i] < deltas[i - 1])) throw InputError("deltas must be strictly decreasing");
    }
    const auto pts = grid_points(domain, grid_step);
    std::vector<double> ev(pts.size()), rv(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        ev[i] = e0(pts[i]);
        rv[i] = r(pts[i]);
    }
    std::vector<std::size_t> all(pts.size());
    std::iota(all.begin(), all.end(), std::size_t{0});

    TheoremResult out;
    for (auto i : argmin_set(rv, argmin_set(ev, all, value_tolerance), value_tolerance)) out.reference.push_back(pts[i]);
    for (double delta : deltas) {
        std::vector<double> total(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) total[i] = ev[i] + delta * rv[i];
        std::vector<Point> s;
        for (auto i : argmin_set(total, all, value_tolerance)) s.push_back(pts[i]);
        out.distances.push_back(hausdorff(s, out.reference));
        out.minimizers.push_back(std::move(s));
        out.deltas.push_back(delta);
    }
    return out;
}

namespace {

json points_json(const std::vector<Point>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    return a;
}

}  // namespace

json to_json(const TheoremResult& r) {
    json j;
    j["reference"] = points_json(r.reference);
    j["results"] = json::array();
    for (std::size_t i = 0; i < r.deltas.size(); ++i)
        j["results"].push_back({{"delta", r.deltas[i]}, {"hausdorff", r.distances[i]}, {"minimizers", points_json(r.minimizers[i])}});
    return j;
}

double weighted_average_bits(std::span<const int> bits, std::span<const Index> weights_per_layer) {
    if (bits.size() != weights_per_layer.size() || bits.empty())
        throw InputError("need one bitwidth per layer");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        num += double(bits[i]) * double(weights_per_layer[i]);
        den += double(weights_per_layer[i]);
    }
    return num / den;
}

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
    return a.accuracy >= b.accuracy && a.avg_bits <= b.avg_bits && (a.accuracy > b.accuracy || a.avg_bits < b.avg_bits);
}

std::vector<std::size_t> mark_frontier(std::vector<ParetoPoint>& points) {
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < points.size(); ++i) {
        points[i].dominated = std::any_of(points.begin(), points.end(), [&](const ParetoPoint& q) { return dominates(q, points[i]); });
        if (!points[i].dominated) frontier.push_back(i);
    }
    return frontier;
}

double domination_margin(const ParetoPoint& candidate, std::span<const ParetoPoint> points) {
    double margin = -std::numeric_limits<double>::infinity();
    for (const auto& p : points)
        if (p.avg_bits <= candidate.avg_bits) margin = std::max(margin, p.accuracy - candidate.accuracy);
    return margin;
}

std::vector<std::vector<int>> enumerate_assignments(const std::vector<std::vector<int>>& choices) {
    if (choices.empty()) throw InputError("no layers to enumerate");
    for (const auto& c : choices)
        if (c.empty()) throw InputError("every layer needs at least one bitwidth choice");
    std::vector<std::vector<int>> out{{}};
    for (const auto& layer : choices) {
        std::vector<std::vector<int>> next;
        for (const auto& prefix : out)
            for (int b : layer) {
                auto a = prefix;
                a.push_back(b);
                next.push_back(std::move(a));
            }
        out = std::move(next);
    }
    return out;
}

ParetoResult pareto_enumerate(const RunConfig& base, const DatasetSplit& data, const ModelD& pretrained,
                              const ParetoConfig& config) {
    std::size_t count = 1;
    for (const auto& c : config.choices) {
        if (c.empty()) throw InputError("every layer needs at least one bitwidth choice");
        count *= c.size();
        if (count > config.cap)
            break;
    }
    if (count > config.cap)
        throw ConfigError("enumeration of " + std::to_string(count) + "+ assignments exceeds the cap of " + std::to_string(config.cap));
    if (config.choices.size() != pretrained.depth()) throw InputError("need bit choices for every layer of the model");
    const auto assignments = enumerate_assignments(config.choices);

    std::vector<Index> weights_per_layer;
    for (const auto& l : pretrained.layers()) weights_per_layer.push_back(l.weights.size());

    auto run_one = [&](const std::vector<int>& bits) {
        RunConfig c = base;
        c.mode = TrainMode::finetune;
        c.regularizer.mode = RegMode::preset_bits;
        c.preset_bits = bits;
        c.epochs = config.finetune_epochs;
        c.iterations = 0;
        c.output_dir.clear();
        c.init_checkpoint.clear();
        c.pretrain_epochs = 0;
        c = resolve_config(c, data.train.size());
        c.log_interval = c.schedule.total_iterations;
        auto run = run_training(c, data, {}, initial_state(c, data.train, pretrained));
        ParetoPoint p;
        p.bits = bits;
        for (std::size_t i = 0; i < bits.size(); ++i) p.bits[i] = run.final_eval.layers[i].bits;
        p.avg_bits = weighted_average_bits(p.bits, weights_per_layer);
        p.accuracy = run.final_eval.acc_quant;
        return p;
    };

    ParetoResult result;
    result.points.resize(assignments.size());
    const unsigned workers = std::max(1u, config.threads ? config.threads : std::thread::hardware_concurrency());
    for (std::size_t start = 0; start < assignments.size(); start += workers) {
        std::vector<std::future<ParetoPoint>> batch;
        for (std::size_t i = start; i < std::min(assignments.size(), start + workers); ++i)
            batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, run_one, assignments[i]));
        for (std::size_t k = 0; k < batch.size(); ++k) result.points[start + k] = batch[k].get();
    }
    result.frontier = mark_frontier(result.points);
    return result;
}

json to_json(const ParetoResult& r) {
    json j;
    j["points"] = json::array();
    for (const auto& p : r.points)
        j["points"].push_back({{"bits", p.bits}, {"avg_bits", p.avg_bits}, {"accuracy", p.accuracy}, {"dominated", p.dominated}});
    j["frontier"] = r.frontier;
    return j;
}

double GradBoundReport::sup_over(int variant, Interval bin) const {
    const auto v = std::find(variants.begin(), variants.end(), variant);
    if (v == variants.end()) throw InputError("variant " + std::to_string(variant) + " not in report");
    for (std::size_t b = 0; b < bins.size(); ++b)
        if (bins[b].lo == bin.lo && bins[b].hi == bin.hi) return sup[std::size_t(v - variants.begin())][b];
    throw InputError("beta interval [" + format_real(bin.lo) + ", " + format_real(bin.hi) + "] not in report");
}

GradBoundReport gradient_bound_report(const GradBoundConfig& config) {
    for (int k : config.variants)
        if (k < 0 || k > 2) throw InputError("variant must be 0, 1 or 2");
    GradBoundReport rep;
    rep.variants = config.variants;
    rep.bins = config.bins;
    if (rep.bins.empty())
        for (double lo = config.beta.lo; lo < config.beta.hi - 1e-12; lo += 1.0) rep.bins.push_back({lo, std::min(lo + 1.0, config.beta.hi)});
    const Interval beta_box[] = {config.beta};
    const Interval w_box[] = {config.w};
    const auto betas = grid_points(beta_box, config.beta_step);
    const auto ws = grid_points(w_box, config.w_step);
    constexpr double eps = 1e-9;
    for (int k : rep.variants) {
        std::vector<double> per_bin(rep.bins.size(), 0.0);
        double full = 0.0;
        for (const auto& b : betas) {
            double sup_b = 0.0;
            for (const auto& w : ws) sup_b = std::max(sup_b, std::abs(sinusoid_terms(w[0], b[0], k).d_beta));
            full = std::max(full, sup_b);
            for (std::size_t i = 0; i < rep.bins.size(); ++i)
                if (b[0] >= rep.bins[i].lo - eps && b[0] <= rep.bins[i].hi + eps) per_bin[i] = std::max(per_bin[i], sup_b);
        }
        rep.sup.push_back(std::move(per_bin));
        rep.sup_full.push_back(full);
    }
    return rep;
}

json to_json(const GradBoundReport& r) {
    json j;
    j["variants"] = json::array();
    for (std::size_t v = 0; v < r.variants.size(); ++v) {
        json bins = json::array();
        for (std::size_t b = 0; b < r.bins.size(); ++b)
            bins.push_back({{"beta_lo", r.bins[b].lo}, {"beta_hi", r.bins[b].hi}, {"sup_abs_dR_dbeta", r.sup[v][b]}});
        j["variants"].push_back({{"k", r.variants[v]}, {"sup_full", r.sup_full[v]}, {"bins", bins}});
    }
    return j;
}

void write_csv(const GradBoundReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "variant,beta_lo,beta_hi,sup_abs_dR_dbeta\n";
    for (std::size_t v = 0; v < r.variants.size(); ++v) {
        for (std::size_t b = 0; b < r.bins.size(); ++b)
            out << r.variants[v] << ',' << format_real(r.bins[b].lo) << ',' << format_real(r.bins[b].hi) << ','
                << format_real(r.sup[v][b]) << '\n';
    }
    if (!out) throw IoError("write failed on " + path.string());
}

DistributionTracker::DistributionTracker(DistributionSpec spec, RunConfig config)
    : spec_(std::move(spec)), config_(std::move(config)) {
    if (spec_.bins <= 0) throw InputError("histogram needs at least one bin");
    if (spec_.tracked_per_layer < 0) throw InputError("tracked_per_layer must be non-negative");
}

void DistributionTracker::observe(const TrainState& state, long epoch) {
    if (!spec_.epochs.empty() && std::find(spec_.epochs.begin(), spec_.epochs.end(), epoch) == spec_.epochs.end()) return;
    if (!log_.epochs.empty() && log_.epochs.back() == epoch) return;
    const std::size_t depth = state.model.depth();
    if (log_.tracked.empty()) {
        Rng rng(spec_.seed);
        for (std::size_t i = 0; i < depth; ++i) {
            const Index n = state.model.layer(i).weights.size();
            std::vector<Index> idx(static_cast<std::size_t>(n));
            std::iota(idx.begin(), idx.end(), Index{0});
            const std::size_t take = std::min<std::size_t>(std::size_t(spec_.tracked_per_layer), idx.size());
            // Partial Fisher-Yates: the first `take` slots become a uniform sample.
            for (std::size_t k = 0; k < take; ++k) std::swap(idx[k], idx[k + std::size_t(uniform_index(rng, idx.size() - k))]);
            idx.resize(take);
            log_.tracked.push_back(idx);
            log_.trajectories.emplace_back(take);
            const auto m = bitwidth_from_beta(state.betas[i].beta);
            scales_.push_back(config_.snap_scale == SnapScaleRule::alpha ? m.scale : period_matched_scale(state.betas[i].beta));
        }
    }
    std::vector<LayerHistogram> record;
    for (std::size_t i = 0; i < depth; ++i) {
        const double c = scales_[i];
        LayerHistogram h;
        for (int e = 0; e <= spec_.bins; ++e) h.edges.push_back(-c + 2.0 * c * double(e) / double(spec_.bins));
        h.counts.assign(std::size_t(spec_.bins), 0);
        const auto& w = state.model.layer(i).weights;
        for (Index j = 0; j < w.size(); ++j) {
            const double f = (w[j] + c) / (2.0 * c) * double(spec_.bins);
            const long bin = std::clamp(long(std::floor(f)), 0L, long(spec_.bins) - 1);
            ++h.counts[std::size_t(bin)];
        }
        record.push_back(std::move(h));
        for (std::size_t t = 0; t < log_.tracked[i].size(); ++t) log_.trajectories[i][t].push_back(w[log_.tracked[i][t]]);
    }
    log_.histograms.push_back(std::move(record));
    log_.epochs.push_back(epoch);
    log_.near_level_fraction.push_back(near_level_fraction(state, config_, 0.1));
}

RunHooks DistributionTracker::hooks() {
    return {[this](const TrainState& s, long epoch) { observe(s, epoch); }};
}

json to_json(const DistributionLog& log) {
    json j;
    j["epochs"] = log.epochs;
    j["near_level_fraction"] = log.near_level_fraction;
    j["layers"] = json::array();
    for (std::size_t i = 0; i < log.tracked.size(); ++i) {
        json hist = json::array();
        for (const auto& rec : log.histograms) hist.push_back(rec[i].counts);
        j["layers"].push_back({{"edges", log.histograms.empty() ? json::array() : json(log.histograms.front()[i].edges)},
                               {"counts", hist},
                               {"tracked", log.tracked[i]},
                               {"trajectories", log.trajectories[i]}});
    }
    return j;
}

}  // namespace waveq
