#include "waveq/config.hpp"

#include <fstream>
#include <set>

#include "waveq/errors.hpp"

namespace waveq {

using json = nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(QuantStyle, {{QuantStyle::mid_tread, "mid_tread"}, {QuantStyle::mid_rise, "mid_rise"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RegMode, {{RegMode::learned_beta, "learned_beta"}, {RegMode::preset_bits, "preset_bits"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Reduction, {{Reduction::sum, "sum"}, {Reduction::mean, "mean"}})
NLOHMANN_JSON_SERIALIZE_ENUM(StepConvention, {{StepConvention::wrpn, "wrpn"}, {StepConvention::dorefa, "dorefa"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RampShape, {{RampShape::exponential, "exponential"}, {RampShape::linear, "linear"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TrainMode, {{TrainMode::from_scratch, "from_scratch"}, {TrainMode::finetune, "finetune"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SnapScaleRule, {{SnapScaleRule::period_matched, "period_matched"}, {SnapScaleRule::alpha, "alpha"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DatasetKind, {{DatasetKind::idx_pair, "idx_pair"}, {DatasetKind::blobs, "blobs"}})

namespace {

// Reads optional fields from one JSON object and rejects keys nobody asked for.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& into) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            into = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    template <typename Enum>
    void get_enum(const char* key, Enum& into) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        const Enum parsed = v.get<Enum>();
        // nlohmann maps unknown strings to the first enumerator; detect that by round-tripping.
        if (json(parsed) != v) throw ConfigError(where_ + "." + key + ": unknown value " + v.dump());
        into = parsed;
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key \"" + k + "\"");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json dataset_json(const DatasetSpec& d) {
    return {{"kind", d.kind},       {"images_path", d.images_path}, {"labels_path", d.labels_path}, {"limit", d.limit},
            {"n", d.n},             {"classes", d.classes},         {"dimension", d.dimension},     {"separation", d.separation},
            {"noise", d.noise},     {"split", d.split},             {"seed", d.seed}};
}

}  // namespace

json to_json(const RunConfig& c) {
    json reg = {{"variant", c.regularizer.variant},
                {"mode", c.regularizer.mode},
                {"style", c.regularizer.style},
                {"convention", c.regularizer.convention}};
    reg["reduction"] = c.regularizer.reduction ? json(*c.regularizer.reduction) : json(nullptr);
    return {
        {"dataset", dataset_json(c.dataset)},
        {"hidden", c.hidden},
        {"init_gain", c.init_gain},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"momentum", c.optimizer.momentum},
          {"lr_beta", c.optimizer.lr_beta},
          {"batch_size", c.optimizer.batch_size},
          {"weight_decay", c.optimizer.weight_decay}}},
        {"regularizer", reg},
        {"schedule",
         {{"total_iterations", c.schedule.total_iterations},
          {"t1", c.schedule.t1},
          {"t2", c.schedule.t2},
          {"lambda_w_min", c.schedule.lambda_w_min},
          {"lambda_w_max", c.schedule.lambda_w_max},
          {"lambda_beta_min", c.schedule.lambda_beta_min},
          {"lambda_beta_peak", c.schedule.lambda_beta_peak},
          {"lambda_beta_final", c.schedule.lambda_beta_final},
          {"shape", c.schedule.shape}}},
        {"mode", c.mode},
        {"pretrain_epochs", c.pretrain_epochs},
        {"init_checkpoint", c.init_checkpoint},
        {"preset_bits", c.preset_bits},
        {"epochs", c.epochs},
        {"iterations", c.iterations},
        {"log_interval", c.log_interval},
        {"output_dir", c.output_dir},
        {"seed", c.seed},
        {"regularizer_enabled", c.regularizer_enabled},
        {"beta_init", c.beta_init},
        {"beta_min", c.beta_min},
        {"beta_max", c.beta_max},
        {"exempt_first_last", c.exempt_first_last},
        {"snap_scale", c.snap_scale},
        {"write_checkpoints", c.write_checkpoints},
    };
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Fields f(j, "config");
    if (const json* d = f.child("dataset")) {
        Fields g(*d, "dataset");
        g.get_enum("kind", c.dataset.kind);
        g.get("images_path", c.dataset.images_path);
        g.get("labels_path", c.dataset.labels_path);
        g.get("limit", c.dataset.limit);
        g.get("n", c.dataset.n);
        g.get("classes", c.dataset.classes);
        g.get("dimension", c.dataset.dimension);
        g.get("separation", c.dataset.separation);
        g.get("noise", c.dataset.noise);
        g.get("split", c.dataset.split);
        g.get("seed", c.dataset.seed);
        g.finish();
    }
    f.get("hidden", c.hidden);
    f.get("init_gain", c.init_gain);
    if (const json* o = f.child("optimizer")) {
        Fields g(*o, "optimizer");
        g.get("lr", c.optimizer.lr);
        g.get("momentum", c.optimizer.momentum);
        g.get("lr_beta", c.optimizer.lr_beta);
        g.get("batch_size", c.optimizer.batch_size);
        g.get("weight_decay", c.optimizer.weight_decay);
        g.finish();
    }
    if (const json* r = f.child("regularizer")) {
        Fields g(*r, "regularizer");
        g.get("variant", c.regularizer.variant);
        g.get_enum("mode", c.regularizer.mode);
        g.get_enum("style", c.regularizer.style);
        g.get_enum("convention", c.regularizer.convention);
        if (const json* red = g.child("reduction"); red && !red->is_null()) {
            Reduction v{};
            const json holder = {{"reduction", *red}};
            Fields wrap(holder, "regularizer");
            wrap.get_enum("reduction", v);
            c.regularizer.reduction = v;
        }
        g.finish();
    }
    if (const json* s = f.child("schedule")) {
        Fields g(*s, "schedule");
        g.get("total_iterations", c.schedule.total_iterations);
        g.get("t1", c.schedule.t1);
        g.get("t2", c.schedule.t2);
        g.get("lambda_w_min", c.schedule.lambda_w_min);
        g.get("lambda_w_max", c.schedule.lambda_w_max);
        g.get("lambda_beta_min", c.schedule.lambda_beta_min);
        g.get("lambda_beta_peak", c.schedule.lambda_beta_peak);
        g.get("lambda_beta_final", c.schedule.lambda_beta_final);
        g.get_enum("shape", c.schedule.shape);
        g.finish();
    }
    f.get_enum("mode", c.mode);
    f.get("pretrain_epochs", c.pretrain_epochs);
    f.get("init_checkpoint", c.init_checkpoint);
    f.get("preset_bits", c.preset_bits);
    f.get("epochs", c.epochs);
    f.get("iterations", c.iterations);
    f.get("log_interval", c.log_interval);
    f.get("output_dir", c.output_dir);
    f.get("seed", c.seed);
    f.get("regularizer_enabled", c.regularizer_enabled);
    f.get("beta_init", c.beta_init);
    f.get("beta_min", c.beta_min);
    f.get("beta_max", c.beta_max);
    f.get("exempt_first_last", c.exempt_first_last);
    f.get_enum("snap_scale", c.snap_scale);
    f.get("write_checkpoints", c.write_checkpoints);
    f.finish();
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + assignment + "\" is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    std::string pointer;
    for (char ch : key) pointer += ch == '.' ? '/' : ch;
    j[json::json_pointer("/" + pointer)] = value;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string() + ": invalid JSON");
    return j;
}

void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace waveq
