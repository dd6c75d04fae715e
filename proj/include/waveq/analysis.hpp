#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "waveq/trainer.hpp"

namespace waveq {

using Point = Eigen::VectorXd;

/// Hausdorff distance between finite point sets under the Euclidean norm.
double hausdorff(std::span<const Point> a, std::span<const Point> b);

struct Interval {
    double lo;
    double hi;
};

using Objective = std::function<double(const Point&)>;

/// Grid points k * step inside the box; one interval per dimension.
std::vector<Point> grid_points(std::span<const Interval> box, double step);

struct TheoremResult {
    std::vector<double> deltas;
    std::vector<std::vector<Point>> minimizers;  // S_delta per delta
    std::vector<Point> reference;                // minimizers of R among the minimizers of E0
    std::vector<double> distances;               // Hausdorff(S_delta, reference)
};

/// Exhaustive grid check that the minimizer sets of E0 + delta R approach the
/// R-minimal minimizers of E0 as delta shrinks. Points within
/// `value_tolerance` of a grid minimum count as minimizers.
TheoremResult theorem_convergence_check(const Objective& e0, const Objective& r, std::span<const Interval> domain,
                                        double grid_step, std::span<const double> deltas, double value_tolerance = 1e-12);

nlohmann::json to_json(const TheoremResult& result);

struct ParetoPoint {
    std::vector<int> bits;
    double avg_bits = 0.0;
    double accuracy = 0.0;
    bool dominated = false;
};

/// Average bitwidth weighted by each layer's weight count.
double weighted_average_bits(std::span<const int> bits, std::span<const Index> weights_per_layer);

/// a dominates b: no worse in accuracy and average bitwidth, better in one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

/// Sets `dominated` on every point; returns frontier indices in input order.
std::vector<std::size_t> mark_frontier(std::vector<ParetoPoint>& points);

/// Largest accuracy advantage any point at equal-or-lower average bitwidth
/// holds over `candidate` (<= 0 when none is more accurate).
double domination_margin(const ParetoPoint& candidate, std::span<const ParetoPoint> points);

/// Cartesian product of per-layer choices in lexicographic order.
std::vector<std::vector<int>> enumerate_assignments(const std::vector<std::vector<int>>& choices);

struct ParetoConfig {
    std::vector<std::vector<int>> choices;  // one list per layer
    long finetune_epochs = 2;
    std::size_t cap = 256;
    unsigned threads = 0;  // 0: hardware concurrency
};

struct ParetoResult {
    std::vector<ParetoPoint> points;  // ordered by assignment
    std::vector<std::size_t> frontier;
};

/// Fine-tunes `pretrained` in preset mode for every assignment and evaluates
/// snapped test accuracy. Throws ConfigError when the count exceeds the cap.
ParetoResult pareto_enumerate(const RunConfig& base, const DatasetSplit& data, const ModelD& pretrained,
                              const ParetoConfig& config);

nlohmann::json to_json(const ParetoResult& result);

struct GradBoundConfig {
    std::vector<int> variants = {0, 1, 2};
    Interval beta = {1.0, 8.0};
    double beta_step = 0.05;
    Interval w = {-1.0, 1.0};
    double w_step = 0.01;
    std::vector<Interval> bins;  // empty: unit intervals covering beta
};

/// sup |dR_k/dbeta| of the per-weight sinusoidal term (lambda_w = 1) for each
/// variant, over each beta sub-interval and over the full grid.
struct GradBoundReport {
    std::vector<int> variants;
    std::vector<Interval> bins;
    std::vector<std::vector<double>> sup;  // [variant][bin]
    std::vector<double> sup_full;          // [variant]

    double sup_over(int variant, Interval bin) const;
};

GradBoundReport gradient_bound_report(const GradBoundConfig& config);

nlohmann::json to_json(const GradBoundReport& report);
void write_csv(const GradBoundReport& report, const std::filesystem::path& path);

struct DistributionSpec {
    std::vector<long> epochs;  // empty: every epoch boundary
    int bins = 64;
    int tracked_per_layer = 10;
    std::uint64_t seed = 0;
};

struct LayerHistogram {
    std::vector<double> edges;  // bins + 1 fixed edges over [-c, c]
    std::vector<long> counts;   // out-of-range weights land in the edge bins
};

struct DistributionLog {
    std::vector<long> epochs;
    std::vector<std::vector<LayerHistogram>> histograms;           // [record][layer]
    std::vector<std::vector<Index>> tracked;                       // [layer] weight indices
    std::vector<std::vector<std::vector<double>>> trajectories;    // [layer][tracked][record]
    std::vector<double> near_level_fraction;                       // [record], 10% of a bin width
};

/// Records weight histograms and sampled trajectories at chosen epochs.
/// Attach with hooks() to a run_training call.
class DistributionTracker {
public:
    DistributionTracker(DistributionSpec spec, RunConfig config);

    void observe(const TrainState& state, long epoch);
    RunHooks hooks();
    const DistributionLog& log() const { return log_; }

private:
    DistributionSpec spec_;
    RunConfig config_;
    DistributionLog log_;
    std::vector<double> scales_;
};

nlohmann::json to_json(const DistributionLog& log);

}  // namespace waveq
