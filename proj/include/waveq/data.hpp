#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "waveq/tensor.hpp"

namespace waveq {

/// Images [n x rows x cols] scaled to [0, 1] with their labels.
struct IdxData {
    TensorD images;
    std::vector<int> labels;
};

/// Reads an IDX image/label pair (gzip-compressed files are accepted).
/// Throws FormatError naming the byte offset on a bad magic, truncated
/// payload, or image/label count mismatch; IoError when a file cannot be opened.
IdxData load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes an IDX pair (uncompressed); pixels are rounded from [0, 1] to bytes.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, const IdxData& data);

/// Labelled feature matrix [n x d].
struct Dataset {
    TensorD features;
    std::vector<int> labels;
    int classes = 0;

    Index size() const { return Index(labels.size()); }
    Index dimension() const { return features.rank() == 2 ? features.dim(1) : 0; }

    /// Rows selected by index, in the given order.
    Dataset subset(std::span<const Index> rows) const;
};

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

enum class DatasetKind { idx_pair, blobs };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::blobs;
    // idx_pair
    std::string images_path;
    std::string labels_path;
    long limit = 0;  // 0 keeps every sample
    // blobs
    long n = 1000;
    int classes = 4;
    int dimension = 8;
    double separation = 3.0;
    double noise = 1.0;
    // both
    std::vector<double> split = {0.8, 0.2};  // train, test
    std::uint64_t seed = 0;

    void validate() const;

    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// Gaussian clusters: class centers drawn as separation * N(0, I), samples as
/// center + noise * N(0, I). Class of the i-th draw is i mod classes, so
/// counts differ by at most one; the pooled set is shuffled, then split.
DatasetSplit synth_blobs(const DatasetSpec& spec);

/// Loads or generates the dataset a spec describes.
DatasetSplit load_dataset(const DatasetSpec& spec);

/// One row of the training metrics CSV. Column order:
/// iteration, E0, R, lambda_w, lambda_beta, beta_<i>..., bits_<i>...,
/// qerr_<i>..., train_acc_float, train_acc_quant, acc_float, acc_quant.
struct MetricsRow {
    long iteration = 0;
    double e0 = 0.0;
    double reg = 0.0;
    double lambda_w = 0.0;
    double lambda_beta = 0.0;
    std::vector<double> betas;
    std::vector<int> bits;
    std::vector<double> quant_err;
    double train_acc_float = 0.0;
    double train_acc_quant = 0.0;
    double acc_float = 0.0;
    double acc_quant = 0.0;

    friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

std::string metrics_header(std::size_t layers);

/// Single-owner CSV writer. The header is written once, unless appending to a
/// file that already has content. Every row is flushed.
class MetricsWriter {
public:
    MetricsWriter(const std::filesystem::path& path, std::size_t layers, bool append = false);
    void write(const MetricsRow& row);

private:
    std::filesystem::path path_;
    std::size_t layers_;
    std::ofstream out_;
};

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path, bool append = false);

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// 17 significant digits: enough to round-trip any double.
std::string format_real(double v);

}  // namespace waveq
