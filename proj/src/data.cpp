#include "waveq/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "waveq/errors.hpp"
#include "waveq/random.hpp"

namespace waveq {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

// Whole-file read through zlib, which passes uncompressed files through unchanged.
std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::unique_ptr<gzFile_s, int (*)(gzFile)> f(gzopen(path.string().c_str(), "rb"), gzclose);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes;
    unsigned char buf[1 << 16];
    for (;;) {
        const int got = gzread(f.get(), buf, sizeof buf);
        if (got < 0) throw FormatError(path.string() + ": corrupt compressed stream");
        if (got == 0) break;
        bytes.insert(bytes.end(), buf, buf + got);
    }
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > b.size())
        throw FormatError(path.string() + ": truncated header at offset " + std::to_string(offset));
    return std::uint32_t(b[offset]) << 24 | std::uint32_t(b[offset + 1]) << 16 | std::uint32_t(b[offset + 2]) << 8 |
           std::uint32_t(b[offset + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(bytes, 4);
}

void check_payload(const std::vector<unsigned char>& b, std::size_t header, std::size_t expected,
                   const std::filesystem::path& path) {
    if (b.size() < header + expected)
        throw FormatError(path.string() + ": truncated payload at offset " + std::to_string(b.size()) + ", expected " +
                          std::to_string(header + expected) + " bytes");
    if (b.size() > header + expected)
        throw FormatError(path.string() + ": " + std::to_string(b.size() - header - expected) +
                          " trailing bytes at offset " + std::to_string(header + expected));
}

}  // namespace

IdxData load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    if (const auto magic = read_be32(img, 0, images_path); magic != kImageMagic) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "0x%08x", magic);
        throw FormatError(images_path.string() + ": bad image magic " + hex + " at offset 0");
    }
    const std::size_t n = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    check_payload(img, 16, n * rows * cols, images_path);

    if (const auto magic = read_be32(lab, 0, labels_path); magic != kLabelMagic) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "0x%08x", magic);
        throw FormatError(labels_path.string() + ": bad label magic " + hex + " at offset 0");
    }
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n_labels != n)
        throw FormatError(labels_path.string() + ": label count " + std::to_string(n_labels) + " at offset 4 != image count " +
                          std::to_string(n));
    check_payload(lab, 8, n, labels_path);

    IdxData out;
    out.images = TensorD({Index(n), Index(rows), Index(cols)});
    for (std::size_t i = 0; i < n * rows * cols; ++i) out.images[Index(i)] = double(img[16 + i]) / 255.0;
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.labels[i] = lab[8 + i];
    return out;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, const IdxData& data) {
    if (data.images.rank() != 3 || data.images.dim(0) != Index(data.labels.size()))
        throw DimensionError("write_idx needs images [n x rows x cols] matching the label count");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img) throw IoError("cannot write " + images_path.string());
    if (!lab) throw IoError("cannot write " + labels_path.string());
    put_be32(img, kImageMagic);
    for (Index d = 0; d < 3; ++d) put_be32(img, std::uint32_t(data.images.dim(d)));
    for (Index i = 0; i < data.images.size(); ++i)
        img.put(char(std::lround(std::clamp(data.images[i], 0.0, 1.0) * 255.0)));
    put_be32(lab, kLabelMagic);
    put_be32(lab, std::uint32_t(data.labels.size()));
    for (int l : data.labels) lab.put(char(l));
}

Dataset Dataset::subset(std::span<const Index> rows) const {
    Dataset out;
    out.classes = classes;
    out.features = TensorD({Index(rows.size()), dimension()});
    auto dst = out.features.matrix();
    const auto src = features.matrix();
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        dst.row(Index(i)) = src.row(rows[i]);
        out.labels.push_back(labels[std::size_t(rows[i])]);
    }
    return out;
}

void DatasetSpec::validate() const {
    if (split.size() != 2) throw ConfigError("dataset split must list train and test fractions");
    if (split[0] <= 0.0 || split[1] < 0.0 || std::abs(split[0] + split[1] - 1.0) > 1e-9)
        throw ConfigError("dataset split fractions must be non-negative and sum to 1");
    if (kind == DatasetKind::blobs) {
        if (classes < 2) throw ConfigError("blobs need at least 2 classes");
        if (dimension < 1) throw ConfigError("blobs dimension must be positive");
        if (n < classes) throw ConfigError("blobs need n >= classes");
        if (noise < 0.0 || separation < 0.0) throw ConfigError("blobs noise and separation must be non-negative");
    } else {
        if (images_path.empty() || labels_path.empty()) throw ConfigError("idx_pair dataset needs images_path and labels_path");
        if (limit < 0) throw ConfigError("dataset limit must be non-negative");
    }
}

namespace {

DatasetSplit split_shuffled(const Dataset& pooled, const std::vector<double>& split, Rng& rng) {
    std::vector<Index> order(std::size_t(pooled.size()));
    std::iota(order.begin(), order.end(), Index{0});
    shuffle(order, rng);
    const auto n_train = std::size_t(std::llround(split[0] * double(order.size())));
    std::span<const Index> all(order);
    return {pooled.subset(all.first(n_train)), pooled.subset(all.subspan(n_train))};
}

}  // namespace

DatasetSplit synth_blobs(const DatasetSpec& spec) {
    spec.validate();
    if (spec.kind != DatasetKind::blobs) throw ConfigError("synth_blobs needs a blobs spec");
    Rng rng(spec.seed);
    RowMatrix<double> centers(spec.classes, spec.dimension);
    for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = spec.separation * standard_normal(rng);
    Dataset pooled;
    pooled.classes = spec.classes;
    pooled.features = TensorD({Index(spec.n), Index(spec.dimension)});
    auto x = pooled.features.matrix();
    pooled.labels.resize(std::size_t(spec.n));
    for (long i = 0; i < spec.n; ++i) {
        const int c = int(i % spec.classes);
        pooled.labels[std::size_t(i)] = c;
        for (int d = 0; d < spec.dimension; ++d) x(i, d) = centers(c, d) + spec.noise * standard_normal(rng);
    }
    return split_shuffled(pooled, spec.split, rng);
}

DatasetSplit load_dataset(const DatasetSpec& spec) {
    spec.validate();
    if (spec.kind == DatasetKind::blobs) return synth_blobs(spec);
    auto idx = load_idx(spec.images_path, spec.labels_path);
    const Index total = idx.images.dim(0);
    const Index n = spec.limit > 0 ? std::min<Index>(spec.limit, total) : total;
    const Index width = idx.images.size() / std::max<Index>(total, 1);
    Dataset pooled;
    pooled.classes = 10;
    pooled.features = TensorD({n, width}, idx.images.vector().head(n * width));
    pooled.labels.assign(idx.labels.begin(), idx.labels.begin() + n);
    for (int l : pooled.labels)
        if (l < 0 || l >= pooled.classes) throw FormatError("label " + std::to_string(l) + " outside [0, 10)");
    Rng rng(spec.seed);
    return split_shuffled(pooled, spec.split, rng);
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_header(std::size_t layers) {
    std::string h = "iteration,E0,R,lambda_w,lambda_beta";
    for (const char* prefix : {"beta_", "bits_", "qerr_"})
        for (std::size_t i = 0; i < layers; ++i) h += "," + std::string(prefix) + std::to_string(i);
    return h + ",train_acc_float,train_acc_quant,acc_float,acc_quant";
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::size_t layers, bool append)
    : path_(path), layers_(layers) {
    const bool has_content = append && std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw IoError("cannot open metrics file " + path.string());
    if (!has_content) out_ << metrics_header(layers) << '\n' << std::flush;
}

void MetricsWriter::write(const MetricsRow& row) {
    if (row.betas.size() != layers_ || row.bits.size() != layers_ || row.quant_err.size() != layers_)
        throw InputError("metrics row has per-layer fields not matching " + std::to_string(layers_) + " layers");
    std::string line = std::to_string(row.iteration);
    for (double v : {row.e0, row.reg, row.lambda_w, row.lambda_beta}) line += "," + format_real(v);
    for (double b : row.betas) line += "," + format_real(b);
    for (int b : row.bits) line += "," + std::to_string(b);
    for (double e : row.quant_err) line += "," + format_real(e);
    for (double v : {row.train_acc_float, row.train_acc_quant, row.acc_float, row.acc_quant}) line += "," + format_real(v);
    out_ << line << '\n' << std::flush;
    if (!out_) throw IoError("write failed on " + path_.string());
}

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path, bool append) {
    const std::size_t layers = rows.empty() ? 0 : rows.front().betas.size();
    MetricsWriter w(path, layers, append);
    for (const auto& r : rows) w.write(r);
}

namespace {

// strtod accepts subnormals that std::stod rejects; the whole cell must parse.
double parse_real(const std::string& cell) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size() || std::isinf(v)) throw std::invalid_argument(cell);
    return v;
}

long parse_integer(const std::string& cell) {
    std::size_t used = 0;
    const long v = std::stol(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
}

}  // namespace

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
    const auto columns = std::size_t(std::count(line.begin(), line.end(), ',') + 1);
    if (columns < 9 || (columns - 9) % 3 != 0) throw FormatError(path.string() + ": unexpected header " + line);
    const std::size_t layers = (columns - 9) / 3;
    if (line != metrics_header(layers)) throw FormatError(path.string() + ": unexpected header " + line);
    std::vector<MetricsRow> rows;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() != columns)
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) + " fields");
        try {
            MetricsRow r;
            std::size_t at = 0;
            r.iteration = parse_integer(cells[at++]);
            r.e0 = parse_real(cells[at++]);
            r.reg = parse_real(cells[at++]);
            r.lambda_w = parse_real(cells[at++]);
            r.lambda_beta = parse_real(cells[at++]);
            for (std::size_t i = 0; i < layers; ++i) r.betas.push_back(parse_real(cells[at++]));
            for (std::size_t i = 0; i < layers; ++i) r.bits.push_back(int(parse_integer(cells[at++])));
            for (std::size_t i = 0; i < layers; ++i) r.quant_err.push_back(parse_real(cells[at++]));
            r.train_acc_float = parse_real(cells[at++]);
            r.train_acc_quant = parse_real(cells[at++]);
            r.acc_float = parse_real(cells[at++]);
            r.acc_quant = parse_real(cells[at++]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unparsable number");
        }
    }
    return rows;
}

}  // namespace waveq
