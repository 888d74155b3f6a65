#include "dynamite/pipeline.hpp"

#include "dynamite/evaluation.hpp"
#include "dynamite/hashing.hpp"
#include "dynamite/io.hpp"
#include "dynamite/metrics.hpp"
#include "dynamite/parallel.hpp"
#include "dynamite/router.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

namespace dynamite::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- config I/O

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    Section sub(const char* key) {
        seen_.insert(key);
        const auto it = doc_.find(key);
        return {it == doc_.end() ? empty() : *it, field(key)};
    }

    void read(const char* key, bool& out) { read_as(key, out, &json::is_boolean, "a boolean"); }
    void read(const char* key, double& out) { read_as(key, out, &json::is_number, "a number"); }
    void read(const char* key, std::string& out) { read_as(key, out, &json::is_string, "a string"); }
    void read(const char* key, std::vector<std::string>& out) { read_list(key, out, &json::is_string, "strings"); }
    void read(const char* key, std::vector<double>& out) { read_list(key, out, &json::is_number, "numbers"); }
    void read(const char* key, std::vector<int>& out) { read_list(key, out, &json::is_number_integer, "integers"); }

    template <typename T>
        requires std::is_integral_v<T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        const auto it = doc_.find(key);
        if (it == doc_.end()) return;
        const bool ok = std::is_signed_v<T> ? it->is_number_integer() : it->is_number_unsigned();
        if (!ok) throw ConfigError(field(key) + ": expected " + (std::is_signed_v<T> ? "an integer" : "a non-negative integer"));
        out = it->get<T>();
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key '" + key + "'");
        }
    }

    [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    [[nodiscard]] std::string where() const { return path_.empty() ? "config" : path_; }

private:
    static const json& empty() {
        static const json e = json::object();
        return e;
    }

    template <typename T>
    void read_as(const char* key, T& out, bool (json::*check)() const noexcept, const char* what) {
        seen_.insert(key);
        const auto it = doc_.find(key);
        if (it == doc_.end()) return;
        if (!((*it).*check)()) throw ConfigError(field(key) + ": expected " + what);
        out = it->get<T>();
    }

    template <typename T>
    void read_list(const char* key, std::vector<T>& out, bool (json::*check)() const noexcept, const char* what) {
        seen_.insert(key);
        const auto it = doc_.find(key);
        if (it == doc_.end()) return;
        if (!it->is_array()) throw ConfigError(field(key) + ": expected a list of " + what);
        std::vector<T> values;
        for (const auto& v : *it) {
            if (!(v.*check)()) throw ConfigError(field(key) + ": expected a list of " + what);
            values.push_back(v.get<T>());
        }
        out = std::move(values);
    }

    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

/// Runs `fn`, prefixing any ConfigError with the field path.
template <typename Fn>
void checked(const std::string& path, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void read_train(Section s, nn::TrainConfig& t) {
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("learning_rate", t.learning_rate);
    std::string opt = t.optimizer == nn::OptimizerKind::Adam ? "adam" : "sgd";
    s.read("optimizer", opt);
    if (opt == "adam") {
        t.optimizer = nn::OptimizerKind::Adam;
    } else if (opt == "sgd") {
        t.optimizer = nn::OptimizerKind::Sgd;
    } else {
        throw ConfigError(s.field("optimizer") + ": expected \"adam\" or \"sgd\"");
    }
    s.read("beta1", t.beta1);
    s.read("beta2", t.beta2);
    s.read("shuffle", t.shuffle);
    s.finish();
    checked(s.where(), [&] { t.validate(); });
}

json train_json(const nn::TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"optimizer", t.optimizer == nn::OptimizerKind::Adam ? "adam" : "sgd"},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"shuffle", t.shuffle}};
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
    PipelineConfig c;
    Section root(doc, "");
    root.read("seed", c.seed);

    {
        auto s = root.sub("data");
        s.read("source", c.data.source);
        std::string csv, schema;
        s.read("csv", csv);
        s.read("schema", schema);
        c.data.csv = resolve(base_dir, csv);
        c.data.schema = resolve(base_dir, schema);
        {
            auto y = s.sub("synth");
            y.read("n_samples", c.data.synth.n_samples);
            y.read("n_numeric", c.data.synth.n_numeric);
            y.read("n_categorical", c.data.synth.n_categorical);
            y.read("n_classes", c.data.synth.n_classes);
            y.read("class_separation", c.data.synth.class_separation);
            y.read("noise_scale", c.data.synth.noise_scale);
            y.finish();
        }
        {
            auto k = s.sub("clean");
            k.read("drop_constant", c.data.clean.drop_constant);
            k.read("drop_duplicates", c.data.clean.drop_duplicates);
            k.read("drop_columns", c.data.clean.drop_listed);
            k.finish();
        }
        s.read("test_fraction", c.data.test_fraction);
        s.read("stratified", c.data.stratified);
        s.finish();
    }
    {
        auto s = root.sub("model");
        s.read("hidden", c.model.hidden);
        read_train(s.sub("train"), c.model.train);
        s.finish();
    }
    {
        auto s = root.sub("attack");
        std::vector<std::string> kinds;
        for (auto k : c.attack.kinds) kinds.emplace_back(attacks::to_string(k));
        s.read("kinds", kinds);
        c.attack.kinds.clear();
        for (const auto& k : kinds) checked(s.field("kinds"), [&] { c.attack.kinds.push_back(attacks::parse_attack_kind(k)); });
        s.read("epsilons", c.attack.epsilons);
        s.read("train_epsilon", c.attack.train_epsilon);
        auto& p = c.attack.params;
        s.read("iterative_steps", p.iterative_steps);
        s.read("step_fraction", p.step_fraction);
        s.read("autopgd_steps", p.autopgd_steps);
        s.read("deepfool_max_iter", p.deepfool_max_iter);
        s.read("zoo_iters", p.zoo_iters);
        s.read("zoo_delta", p.zoo_delta);
        s.read("zoo_coords", p.zoo_coords);
        s.read("zoo_step_fraction", p.zoo_step_fraction);
        s.finish();
    }
    {
        auto s = root.sub("defense");
        auto& d = c.defense;
        s.read("at_epsilon", d.at_epsilon);
        s.read("at_steps", d.at_steps);
        s.read("at_step_fraction", d.at_step_fraction);
        s.read("trades_beta", d.trades_beta);
        s.read("mixup_alpha", d.mixup_alpha);
        s.read("free_replays", d.free_replays);
        s.read("augment_sigma", d.augment_sigma);
        s.read("distill_temperature", d.distill_temperature);
        s.read("rslad_variant", d.rslad_variant);
        s.read("squeeze_bits", d.squeeze_bits);
        s.read("noise_sigma", d.noise_sigma);
        read_train(s.sub("train"), d.train);
        s.finish();
        checked(s.field("rslad_variant"), [&] { d.rslad_inner_steps = defense::rslad_variant_steps(d.rslad_variant); });
    }
    {
        auto s = root.sub("selector");
        auto& g = c.selector.gbt;
        s.read("rounds", g.rounds);
        s.read("learning_rate", g.learning_rate);
        s.read("max_depth", g.max_depth);
        s.read("min_samples_leaf", g.min_samples_leaf);
        s.read("subsample", g.subsample);
        s.read("lambda", g.lambda);
        s.read("holdout_fraction", c.selector.holdout_fraction);
        s.finish();
    }
    {
        auto s = root.sub("eval");
        s.read("random_trials", c.eval.random_trials);
        s.read("timing_repeats", c.eval.timing_repeats);
        s.read("timing_samples", c.eval.timing_samples);
        s.finish();
    }
    {
        auto s = root.sub("output");
        std::string dir = c.out_dir.string();
        s.read("dir", dir);
        c.out_dir = dir;
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

void PipelineConfig::validate() const {
    if (data.source != "synthetic" && data.source != "csv") {
        throw ConfigError("data.source: expected \"synthetic\" or \"csv\"");
    }
    if (data.source == "csv" && (data.csv.empty() || data.schema.empty())) {
        throw ConfigError("data.csv: a csv source needs both data.csv and data.schema");
    }
    checked("data.synth", [&] {
        auto spec = data.synth;
        spec.seed = seed;
        spec.validate();
    });
    if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
        throw ConfigError("data.test_fraction: must lie strictly between 0 and 1");
    }
    if (model.hidden.empty()) throw ConfigError("model.hidden: at least one hidden layer required");
    for (int h : model.hidden) {
        if (h < 1) throw ConfigError("model.hidden: layer widths must be positive");
    }
    if (attack.kinds.empty()) throw ConfigError("attack.kinds: at least one attack required");
    if (std::set(attack.kinds.begin(), attack.kinds.end()).size() != attack.kinds.size()) {
        throw ConfigError("attack.kinds: duplicate attack");
    }
    if (attack.epsilons.empty()) throw ConfigError("attack.epsilons: at least one epsilon required");
    for (double e : attack.epsilons) {
        if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("attack.epsilons: values must be positive");
    }
    if (std::set(attack.epsilons.begin(), attack.epsilons.end()).size() != attack.epsilons.size()) {
        throw ConfigError("attack.epsilons: duplicate epsilon");
    }
    if (std::find(attack.epsilons.begin(), attack.epsilons.end(), attack.train_epsilon) == attack.epsilons.end()) {
        throw ConfigError("attack.train_epsilon: " + format_double(attack.train_epsilon) +
                          " is not one of attack.epsilons");
    }
    checked("attack", [&] { attack.params.validate(); });
    checked("defense", [&] { defense.validate(); });
    checked("selector", [&] { selector.gbt.validate(); });
    if (!(selector.holdout_fraction >= 0.0 && selector.holdout_fraction < 1.0)) {
        throw ConfigError("selector.holdout_fraction: must lie in [0, 1)");
    }
    if (eval.random_trials < 1) throw ConfigError("eval.random_trials: must be at least 1");
    if (eval.timing_repeats < 3) throw ConfigError("eval.timing_repeats: must be at least 3");
    if (eval.timing_samples < 1) throw ConfigError("eval.timing_samples: must be at least 1");
    if (out_dir.empty()) throw ConfigError("output.dir: must not be empty");
}

json PipelineConfig::to_json() const {
    std::vector<std::string> kinds;
    for (auto k : attack.kinds) kinds.emplace_back(attacks::to_string(k));
    const auto& p = attack.params;
    const auto& d = defense;
    const auto& g = selector.gbt;
    return {
        {"seed", seed},
        {"data",
         {{"source", data.source},
          {"csv", data.csv.string()},
          {"schema", data.schema.string()},
          {"synth",
           {{"n_samples", data.synth.n_samples},
            {"n_numeric", data.synth.n_numeric},
            {"n_categorical", data.synth.n_categorical},
            {"n_classes", data.synth.n_classes},
            {"class_separation", data.synth.class_separation},
            {"noise_scale", data.synth.noise_scale}}},
          {"clean",
           {{"drop_constant", data.clean.drop_constant},
            {"drop_duplicates", data.clean.drop_duplicates},
            {"drop_columns", data.clean.drop_listed}}},
          {"test_fraction", data.test_fraction},
          {"stratified", data.stratified}}},
        {"model", {{"hidden", model.hidden}, {"train", train_json(model.train)}}},
        {"attack",
         {{"kinds", kinds},
          {"epsilons", attack.epsilons},
          {"train_epsilon", attack.train_epsilon},
          {"iterative_steps", p.iterative_steps},
          {"step_fraction", p.step_fraction},
          {"autopgd_steps", p.autopgd_steps},
          {"deepfool_max_iter", p.deepfool_max_iter},
          {"zoo_iters", p.zoo_iters},
          {"zoo_delta", p.zoo_delta},
          {"zoo_coords", p.zoo_coords},
          {"zoo_step_fraction", p.zoo_step_fraction}}},
        {"defense",
         {{"at_epsilon", d.at_epsilon},
          {"at_steps", d.at_steps},
          {"at_step_fraction", d.at_step_fraction},
          {"trades_beta", d.trades_beta},
          {"mixup_alpha", d.mixup_alpha},
          {"free_replays", d.free_replays},
          {"augment_sigma", d.augment_sigma},
          {"distill_temperature", d.distill_temperature},
          {"rslad_variant", d.rslad_variant},
          {"squeeze_bits", d.squeeze_bits},
          {"noise_sigma", d.noise_sigma},
          {"train", train_json(d.train)}}},
        {"selector",
         {{"rounds", g.rounds},
          {"learning_rate", g.learning_rate},
          {"max_depth", g.max_depth},
          {"min_samples_leaf", g.min_samples_leaf},
          {"subsample", g.subsample},
          {"lambda", g.lambda},
          {"holdout_fraction", selector.holdout_fraction}}},
        {"eval",
         {{"random_trials", eval.random_trials},
          {"timing_repeats", eval.timing_repeats},
          {"timing_samples", eval.timing_samples}}},
        {"output", {{"dir", out_dir.string()}}},
    };
}

std::string PipelineConfig::hash() const {
    auto j = to_json();
    j.erase("output");
    return sha256_hex(j.dump());
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (const char* env = std::getenv("DYNAMITE_SEED"); env && *env) {
        Seed s = 0;
        const std::string_view text(env);
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), s);
        if (ec != std::errc{} || ptr != text.data() + text.size()) {
            throw ConfigError("DYNAMITE_SEED: expected a non-negative integer, got '" + std::string(text) + "'");
        }
        if (doc.is_object()) doc["seed"] = s;
    }
    return parse_config(doc, path.parent_path());
}

// ------------------------------------------------------------------- stages

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::Preprocess: return "preprocess";
        case Stage::TrainBaseline: return "train-baseline";
        case Stage::GenAttacks: return "gen-attacks";
        case Stage::TrainDefenses: return "train-defenses";
        case Stage::BuildRouter: return "build-router";
        case Stage::Evaluate: return "evaluate";
    }
    return "unknown";
}

Stage parse_stage(std::string_view text) {
    for (auto s : kAllStages) {
        if (to_string(s) == text) return s;
    }
    throw ConfigError("unknown stage '" + std::string(text) + "'");
}

std::vector<Stage> dependencies(Stage stage) {
    switch (stage) {
        case Stage::Preprocess: return {};
        case Stage::TrainBaseline: return {Stage::Preprocess};
        case Stage::GenAttacks: return {Stage::Preprocess, Stage::TrainBaseline};
        case Stage::TrainDefenses: return {Stage::Preprocess, Stage::TrainBaseline};
        case Stage::BuildRouter: return {Stage::GenAttacks, Stage::TrainDefenses};
        case Stage::Evaluate:
            return {Stage::Preprocess, Stage::TrainBaseline, Stage::GenAttacks, Stage::TrainDefenses,
                    Stage::BuildRouter};
    }
    return {};
}

json StageManifest::to_json() const {
    const auto pairs = [](const std::vector<std::pair<std::string, std::string>>& v) {
        json j = json::array();
        for (const auto& [path, hash] : v) j.push_back({{"path", path}, {"sha256", hash}});
        return j;
    };
    return {{"stage", std::string(pipeline::to_string(stage))},
            {"config_hash", config_hash},
            {"inputs", pairs(inputs)},
            {"outputs", pairs(outputs)},
            {"volatile_outputs", volatile_outputs},
            {"seeds", seeds},
            {"metrics", metrics},
            {"duration_s", duration_s}};
}

StageManifest StageManifest::from_json(const json& j) {
    const auto pairs = [](const json& a) {
        std::vector<std::pair<std::string, std::string>> v;
        for (const auto& e : a) v.emplace_back(e.at("path").get<std::string>(), e.at("sha256").get<std::string>());
        return v;
    };
    StageManifest m;
    m.stage = parse_stage(j.at("stage").get<std::string>());
    m.config_hash = j.at("config_hash").get<std::string>();
    m.inputs = pairs(j.at("inputs"));
    m.outputs = pairs(j.at("outputs"));
    m.volatile_outputs = j.at("volatile_outputs").get<std::vector<std::string>>();
    m.seeds = j.at("seeds");
    m.metrics = j.at("metrics");
    m.duration_s = j.at("duration_s").get<double>();
    return m;
}

fs::path manifest_path(const fs::path& out_dir, Stage stage) {
    return out_dir / "manifests" / (std::string(to_string(stage)) + ".json");
}

StageManifest verify_stage(const fs::path& out_dir, Stage stage, const std::string& config_hash) {
    const auto name = std::string(to_string(stage));
    const auto path = manifest_path(out_dir, stage);
    if (!fs::exists(path)) throw ArtifactError("stage " + name + " has not been run in " + out_dir.string() + "; run " + name + " first");
    StageManifest m;
    try {
        const auto bytes = io::read_file(path);
        m = StageManifest::from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
        throw ArtifactError("corrupt manifest " + path.string() + " (" + e.what() + "); rerun " + name);
    }
    if (m.config_hash != config_hash) {
        throw ArtifactError("stage " + name + " was run with a different configuration; rerun " + name);
    }
    for (const auto& [rel, hash] : m.outputs) {
        const auto file = out_dir / rel;
        if (!fs::exists(file)) throw ArtifactError("missing artifact " + file.string() + "; rerun " + name);
        if (sha256_file(file) != hash) throw ArtifactError("hash mismatch for " + file.string() + "; rerun " + name);
    }
    return m;
}

namespace {

struct Paths {
    fs::path out;

    [[nodiscard]] fs::path operator()(const std::string& rel) const { return out / rel; }
};

constexpr const char* kState = "preprocess/state.json";
constexpr const char* kTrain = "preprocess/train.bin";
constexpr const char* kTest = "preprocess/test.bin";
constexpr const char* kBaseline = "baseline/model.bin";
constexpr const char* kGridDir = "attacks";
constexpr const char* kMatrixCsv = "router/matrix.csv";
constexpr const char* kMatrixJson = "router/matrix.json";
constexpr const char* kLabels = "router/labels.csv";
constexpr const char* kSelector = "router/selector.bin";
constexpr const char* kHoldout = "router/holdout.json";
constexpr const char* kResults = "evaluate/results.json";
constexpr const char* kReportJson = "evaluate/report.json";
constexpr const char* kReportTxt = "evaluate/report.txt";
constexpr const char* kTiming = "evaluate/timing.json";

std::string defense_file(int id) {
    return "defenses/" + std::string(defense::to_string(defense::defense_from_id(id))) + ".bin";
}

void log(Stage stage, const std::string& message) {
    fmt::print(stderr, "[{}] {}\n", to_string(stage), message);
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    io::write_file(path, j.dump(2) + "\n");
}

std::string read_text(const fs::path& path) {
    const auto bytes = io::read_file(path);
    return {bytes.begin(), bytes.end()};
}

json read_json(const fs::path& path) {
    const auto bytes = io::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw ArtifactError(path.string() + ": " + e.what());
    }
}

/// Stage bodies fill `outputs` with paths relative to the output directory.
struct StageContext {
    const PipelineConfig& config;
    const RunOptions& options;
    Paths at;
    StageManifest& manifest;

    void output(const std::string& rel) {
        const auto full = at(rel);
        if (fs::is_directory(full)) {
            std::vector<std::string> files;
            for (const auto& e : fs::directory_iterator(full)) {
                if (e.is_regular_file()) files.push_back(rel + "/" + e.path().filename().string());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) manifest.outputs.emplace_back(f, sha256_file(at(f)));
        } else {
            manifest.outputs.emplace_back(rel, sha256_file(full));
        }
    }
};

Seed stage_seed(const PipelineConfig& c, std::string_view tag) { return derive_seed(c.seed, tag); }

void preprocess(StageContext& ctx) {
    const auto& c = ctx.config;
    data::RawTable raw;
    if (c.data.source == "csv") {
        raw = data::load_csv(c.data.csv, data::load_schema(c.data.schema));
    } else {
        auto spec = c.data.synth;
        spec.seed = c.seed;
        raw = data::synth_generate(spec);
    }
    const auto cleaned = data::clean(raw, c.data.clean);
    const auto vocabulary = data::fit_preprocessor(cleaned);
    const auto labels = data::encode_labels(vocabulary, cleaned);
    const Seed split_seed = stage_seed(c, "split");
    const auto idx = data::split_indices(labels, vocabulary.n_classes(), c.data.test_fraction, split_seed,
                                         c.data.stratified);
    const auto train_raw = cleaned.select_rows(idx.train);
    const auto test_raw = cleaned.select_rows(idx.test);
    const auto state = data::fit_preprocessor(train_raw);
    if (state.label_values != vocabulary.label_values) {
        throw ConfigError("data: a class is missing from the training split; enable data.stratified or add samples");
    }
    const auto train = data::apply_preprocessor(state, train_raw);
    auto test = data::apply_preprocessor(state, test_raw);
    state.clamp_bounds.clip_rows(test.features);

    fs::create_directories(ctx.at("preprocess"));
    io::write_file(ctx.at(kState), data::state_to_json(state));
    data::save_dataset(train, ctx.at(kTrain));
    data::save_dataset(test, ctx.at(kTest));
    ctx.output(kState);
    ctx.output(kTrain);
    ctx.output(kTest);
    ctx.manifest.seeds = {{"data", c.seed}, {"split", split_seed}};
    ctx.manifest.metrics = {{"train_samples", train.size()},
                            {"test_samples", test.size()},
                            {"features", train.dim()},
                            {"classes", train.n_classes},
                            {"dropped_columns", state.dropped_columns}};
    log(Stage::Preprocess, fmt::format("{} train / {} test samples, {} features, {} classes", train.size(),
                                       test.size(), train.dim(), train.n_classes));
}

std::vector<int> model_dims(const PipelineConfig& c, const data::Dataset& d) {
    std::vector<int> dims{static_cast<int>(d.dim())};
    dims.insert(dims.end(), c.model.hidden.begin(), c.model.hidden.end());
    dims.push_back(d.n_classes);
    return dims;
}

void train_baseline(StageContext& ctx) {
    const auto& c = ctx.config;
    const auto train = data::load_dataset(ctx.at(kTrain));
    const auto test = data::load_dataset(ctx.at(kTest));
    auto cfg = c.model.train;
    cfg.seed = stage_seed(c, "baseline");
    const Seed init = stage_seed(c, "baseline-init");
    const auto result = nn::train(nn::init_mlp(model_dims(c, train), init), train, cfg);
    fs::create_directories(ctx.at("baseline"));
    nn::save_model(result.model, ctx.at(kBaseline));
    ctx.output(kBaseline);
    const double f1 = metrics::macro_f1(nn::predict(result.model, test).labels, test.labels, test.n_classes);
    ctx.manifest.seeds = {{"init", init}, {"train", cfg.seed}};
    ctx.manifest.metrics = {{"clean_test_f1", f1}, {"final_loss", result.history.back()}};
    log(Stage::TrainBaseline, fmt::format("clean test macro-F1 {:.4f}", f1));
}

void gen_attacks(StageContext& ctx) {
    const auto& c = ctx.config;
    const auto test = data::load_dataset(ctx.at(kTest));
    const auto state = data::state_from_json(read_text(ctx.at(kState)));
    const auto model = nn::load_model(ctx.at(kBaseline));
    const Seed seed = stage_seed(c, "attacks");
    auto grid = attacks::generate_grid(model, test, c.attack.kinds, c.attack.epsilons, state.clamp_bounds,
                                       c.attack.params, seed, ctx.options.threads);
    grid.source_id = sha256_file(ctx.at(kTest));
    grid.model_fingerprint = sha256_file(ctx.at(kBaseline));
    fs::remove_all(ctx.at(kGridDir));
    attacks::save_grid(grid, ctx.at(kGridDir));
    ctx.output(kGridDir);
    json cells = json::object();
    for (const auto& cell : grid.cells) {
        cells[cell.id()] = metrics::macro_f1(nn::predict(model, cell.data).labels, cell.data.labels, cell.data.n_classes);
    }
    ctx.manifest.seeds = {{"attacks", seed}};
    ctx.manifest.metrics = {{"cells", grid.cells.size()}, {"no_defense_f1", cells}};
    log(Stage::GenAttacks, fmt::format("{} cells written", grid.cells.size()));
}

void train_defenses(StageContext& ctx) {
    const auto& c = ctx.config;
    const auto train = data::load_dataset(ctx.at(kTrain));
    const auto test = data::load_dataset(ctx.at(kTest));
    const auto state = data::state_from_json(read_text(ctx.at(kState)));
    const auto baseline = nn::load_model(ctx.at(kBaseline));
    auto cfg = c.defense;
    cfg.seed = stage_seed(c, "defenses");

    std::vector<defense::DefendedModel> models(defense::kDefenseCount);
    std::vector<double> seconds(defense::kDefenseCount);
    const auto one = [&](std::size_t i, const nn::MlpModel* teacher) {
        const auto start = std::chrono::steady_clock::now();
        models[i] = defense::train_defense(defense::defense_from_id(static_cast<int>(i)), cfg, train, baseline,
                                           state.clamp_bounds, teacher);
        seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log(Stage::TrainDefenses, fmt::format("{} trained in {:.1f}s", defense::display_name(models[i].kind), seconds[i]));
    };
    // RSLAD distils from the PGD-AT model, so that one goes first.
    one(static_cast<std::size_t>(defense::defense_id(defense::DefenseKind::PgdAT)), nullptr);
    const auto& teacher = models[static_cast<std::size_t>(defense::defense_id(defense::DefenseKind::PgdAT))].model;
    parallel_for(defense::kDefenseCount - 1, ctx.options.threads, [&](std::size_t k) { one(k + 1, &teacher); });

    fs::create_directories(ctx.at("defenses"));
    json clean = json::object();
    for (int i = 0; i < defense::kDefenseCount; ++i) {
        const auto& dm = models[static_cast<std::size_t>(i)];
        defense::save_defended(dm, ctx.at(defense_file(i)));
        ctx.output(defense_file(i));
        clean[std::string(defense::to_string(dm.kind))] =
            metrics::macro_f1(defense::defended_predict(dm, test).labels, test.labels, test.n_classes);
    }
    ctx.manifest.seeds = {{"defenses", cfg.seed}};
    ctx.manifest.metrics = {{"clean_test_f1", clean}};
}

std::vector<defense::DefendedModel> load_defenses(const Paths& at) {
    std::vector<defense::DefendedModel> out;
    for (int i = 0; i < defense::kDefenseCount; ++i) out.push_back(defense::load_defended(at(defense_file(i))));
    return out;
}

std::vector<const data::Dataset*> cell_data(const attacks::AdversarialGrid& grid, const std::vector<std::size_t>& idx) {
    std::vector<const data::Dataset*> out;
    for (auto i : idx) out.push_back(&grid.cells[i].data);
    return out;
}

std::vector<std::string> cell_ids(const attacks::AdversarialGrid& grid, const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(grid.cells[i].id());
    return out;
}

/// Trains on all but a seeded holdout slice of the labelled samples and
/// compares routed and best-static scores on the slice.
json holdout_check(const PipelineConfig& c, const router::PredictionTable& table,
                   const std::vector<const data::Dataset*>& cells, const router::PerformanceMatrix& matrix,
                   const router::SelectorTrainingSet& set, unsigned threads) {
    const auto m = set.labels.size();
    const auto n_hold = static_cast<std::size_t>(std::llround(c.selector.holdout_fraction * static_cast<double>(m)));
    if (n_hold == 0 || n_hold >= m) return json::object();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(stage_seed(c, "holdout"));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
    std::sort(held.begin(), held.end());
    std::sort(fit.begin(), fit.end());

    std::vector<std::size_t> offset(cells.size(), 0);
    for (std::size_t k = 1; k < cells.size(); ++k) offset[k] = offset[k - 1] + cells[k - 1]->size();

    Matrix fx(static_cast<Eigen::Index>(fit.size()), set.features.cols());
    std::vector<int> fy;
    for (std::size_t r = 0; r < fit.size(); ++r) {
        fx.row(static_cast<Eigen::Index>(r)) = set.features.row(static_cast<Eigen::Index>(fit[r]));
        fy.push_back(set.labels[fit[r]]);
    }
    auto gcfg = c.selector.gbt;
    gcfg.seed = stage_seed(c, "selector-holdout");
    const auto selector = gbt::train(fx, fy, static_cast<int>(table.size()), gcfg, threads);

    data::Dataset pooled;
    pooled.n_classes = cells.front()->n_classes;
    pooled.features.resize(static_cast<Eigen::Index>(held.size()), set.features.cols());
    std::vector<std::vector<int>> preds(table.size());
    for (std::size_t r = 0; r < held.size(); ++r) {
        const auto row = held[r];
        const auto cell = set.cell_of[row];
        const auto i = row - offset[cell];
        pooled.features.row(static_cast<Eigen::Index>(r)) = set.features.row(static_cast<Eigen::Index>(row));
        pooled.labels.push_back(cells[cell]->labels[i]);
        for (std::size_t d = 0; d < table.size(); ++d) preds[d].push_back(table[d][cell][i]);
    }
    const auto routed = eval::score_from_predictions(selector.predict_rows(pooled.features), preds, pooled);
    const auto best = matrix.best_row();
    const double best_static = metrics::macro_f1(preds[best], pooled.labels, pooled.n_classes);
    return {{"samples", held.size()}, {"routed_score", routed.score}, {"best_static_score", best_static},
            {"best_static_defense", best}};
}

void build_router(StageContext& ctx) {
    const auto& c = ctx.config;
    const auto grid = attacks::load_grid(ctx.at(kGridDir));
    const auto defenses = load_defenses(ctx.at);
    auto part = router::select_attack_train_cells(grid, c.attack.train_epsilon);
    if (part.test.empty()) {
        log(Stage::BuildRouter, "warning: the grid has no held-out cells; evaluation will reuse the attack-training cells");
    }
    const auto cells = cell_data(grid, part.train);
    const auto table = router::predict_cells(defenses, cells, ctx.options.threads);
    const auto matrix = router::build_performance_matrix(table, cells, cell_ids(grid, part.train));
    fs::create_directories(ctx.at("router"));
    router::save_matrix(matrix, grid, part.train, ctx.at(kMatrixCsv), ctx.at(kMatrixJson));

    const auto set = router::label_optimal(table, cells, matrix);
    std::string labels = "cell,sample,label,ties\n";
    std::vector<std::size_t> counts(defenses.size(), 0);
    for (std::size_t r = 0, i = 0; r < set.labels.size(); ++r, ++i) {
        if (r > 0 && set.cell_of[r] != set.cell_of[r - 1]) i = 0;
        std::string ties;
        for (int t : set.tie_meta[r]) ties += (ties.empty() ? "" : "|") + std::to_string(t);
        labels += fmt::format("{},{},{},{}\n", matrix.cell_ids[set.cell_of[r]], i, set.labels[r], ties);
        ++counts[static_cast<std::size_t>(set.labels[r])];
    }
    io::write_file(ctx.at(kLabels), labels);

    const auto holdout = holdout_check(c, table, cells, matrix, set, ctx.options.threads);
    write_json(ctx.at(kHoldout), holdout);

    auto gcfg = c.selector.gbt;
    gcfg.seed = stage_seed(c, "selector");
    const auto selector = gbt::train(set.features, set.labels, static_cast<int>(defenses.size()), gcfg,
                                     ctx.options.threads);
    gbt::save(selector, ctx.at(kSelector));
    const auto fitted = selector.predict_rows(set.features);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < fitted.size(); ++r) hits += fitted[r] == set.labels[r];

    for (const char* f : {kMatrixCsv, kMatrixJson, kLabels, kHoldout, kSelector}) ctx.output(f);
    json avg = json::array();
    for (std::size_t d = 0; d < defenses.size(); ++d) avg.push_back(matrix.row_average(d));
    ctx.manifest.seeds = {{"selector", gcfg.seed}, {"holdout", stage_seed(c, "holdout")}};
    ctx.manifest.metrics = {{"train_cells", part.train.size()},
                            {"test_cells", part.test.size()},
                            {"selector_samples", set.labels.size()},
                            {"label_counts", counts},
                            {"row_averages", avg},
                            {"selector_train_accuracy", static_cast<double>(hits) / static_cast<double>(fitted.size())},
                            {"holdout", holdout}};
    log(Stage::BuildRouter, fmt::format("{} train cells, {} selector samples", part.train.size(), set.labels.size()));
    if (holdout.contains("routed_score")) {
        log(Stage::BuildRouter, fmt::format("holdout routed {:.4f} vs best-static {:.4f}",
                                            holdout["routed_score"].get<double>(),
                                            holdout["best_static_score"].get<double>()));
    }
}

data::Dataset timing_slice(const std::vector<const data::Dataset*>& cells, std::size_t limit) {
    std::size_t total = 0;
    for (const auto* c : cells) total += c->size();
    const auto n = std::min(limit, total);
    data::Dataset d;
    d.n_classes = cells.front()->n_classes;
    d.features.resize(static_cast<Eigen::Index>(n), cells.front()->features.cols());
    std::vector<std::size_t> next(cells.size(), 0);
    for (std::size_t r = 0, k = 0; r < n; k = (k + 1) % cells.size()) {
        if (next[k] >= cells[k]->size()) continue;
        d.features.row(static_cast<Eigen::Index>(r++)) = cells[k]->features.row(static_cast<Eigen::Index>(next[k]));
        d.labels.push_back(cells[k]->labels[next[k]++]);
    }
    return d;
}

void write_report(const Paths& at, const eval::EvaluationResults& results, const std::optional<eval::Timing>& timing) {
    const auto report = eval::build_report(results);
    write_json(at(kReportJson), report);
    io::write_file(at(kReportTxt), eval::render_report(report, timing));
}

void evaluate(StageContext& ctx) {
    const auto& c = ctx.config;
    const auto test = data::load_dataset(ctx.at(kTest));
    const auto baseline = nn::load_model(ctx.at(kBaseline));
    const auto grid = attacks::load_grid(ctx.at(kGridDir));
    const auto defenses = load_defenses(ctx.at);
    const auto matrix = router::load_matrix(ctx.at(kMatrixCsv));
    const auto selector = gbt::load(ctx.at(kSelector));

    auto part = router::select_attack_train_cells(grid, c.attack.train_epsilon);
    if (part.test.empty()) {
        log(Stage::Evaluate, "warning: no held-out cells; scoring the attack-training cells instead");
        part.test = part.train;
    }
    const auto cells = cell_data(grid, part.test);
    const auto ids = cell_ids(grid, part.test);
    const auto table = router::predict_cells(defenses, cells, ctx.options.threads);

    std::vector<std::vector<double>> defense_f1(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) {
        for (const auto& d : table) {
            defense_f1[k].push_back(metrics::macro_f1(d[k], cells[k]->labels, cells[k]->n_classes));
        }
    }
    const Seed random_seed = stage_seed(c, "random");
    const auto no_def = eval::eval_no_defense(baseline, cells);
    const auto random = eval::eval_random(defense_f1, ids, c.eval.random_trials, random_seed);
    const auto oracle = eval::eval_oracle(defense_f1);
    const auto best = eval::eval_best_static(matrix, defense_f1);
    const auto dyn = eval::eval_dynamite(selector, table, cells);

    eval::EvaluationResults results;
    results.best_static = best.defense;
    results.clean_f1 = metrics::macro_f1(nn::predict(baseline, test).labels, test.labels, test.n_classes);
    results.random_trials = c.eval.random_trials;
    results.seed = c.seed;
    results.config_hash = c.hash();
    for (std::size_t k = 0; k < cells.size(); ++k) {
        const auto& g = grid.cells[part.test[k]];
        eval::CellResult r;
        r.id = ids[k];
        r.kind = g.kind;
        r.epsilon = g.epsilon;
        r.samples = cells[k]->size();
        r.no_defense = no_def[k];
        r.defense_f1 = defense_f1[k];
        r.dynamite = dyn[k];
        r.oracle = oracle[k];
        r.random = random[k];
        r.best_static = best.f1[k];
        results.cells.push_back(std::move(r));
    }
    write_json(ctx.at(kResults), eval::results_to_json(results));

    log(Stage::Evaluate, "timing on one thread");
    const auto timing = eval::measure_timing(selector, defenses, best.defense, timing_slice(cells, c.eval.timing_samples),
                                             c.eval.timing_repeats);
    write_json(ctx.at(kTiming), eval::timing_to_json(timing));
    write_report(ctx.at, results, timing);

    ctx.output(kResults);
    ctx.output(kReportJson);
    ctx.manifest.volatile_outputs = {kTiming, kReportTxt};
    ctx.manifest.seeds = {{"random", random_seed}};
    const auto report = read_json(ctx.at(kReportJson));
    ctx.manifest.metrics = {{"test_cell_average", report.at("test_cell_average")},
                            {"timing", eval::timing_to_json(timing)}};
    fmt::print(stderr, "\n{}\n", read_text(ctx.at(kReportTxt)));
    eval::check_invariants(results);
}

}  // namespace

StageManifest run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    StageManifest manifest;
    manifest.stage = stage;
    manifest.config_hash = config.hash();
    for (auto dep : dependencies(stage)) {
        const auto upstream = verify_stage(config.out_dir, dep, manifest.config_hash);
        manifest.inputs.insert(manifest.inputs.end(), upstream.outputs.begin(), upstream.outputs.end());
    }
    fs::create_directories(config.out_dir);
    // A stale manifest must not outlive a failed rerun.
    fs::remove(manifest_path(config.out_dir, stage));
    log(stage, "start");

    StageContext ctx{config, options, Paths{config.out_dir}, manifest};
    switch (stage) {
        case Stage::Preprocess: preprocess(ctx); break;
        case Stage::TrainBaseline: train_baseline(ctx); break;
        case Stage::GenAttacks: gen_attacks(ctx); break;
        case Stage::TrainDefenses: train_defenses(ctx); break;
        case Stage::BuildRouter: build_router(ctx); break;
        case Stage::Evaluate: evaluate(ctx); break;
    }
    manifest.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto j = manifest.to_json();
    write_json(manifest_path(config.out_dir, stage), j);
    std::ofstream ledger(config.out_dir / "ledger.jsonl", std::ios::app);
    ledger << j.dump() << '\n';
    if (!ledger) throw ArtifactError("cannot append to " + (config.out_dir / "ledger.jsonl").string());
    log(stage, fmt::format("done in {:.1f}s", manifest.duration_s));
    return manifest;
}

std::vector<StageManifest> run_all(const PipelineConfig& config, const RunOptions& options) {
    std::vector<StageManifest> out;
    for (auto s : kAllStages) out.push_back(run_stage(s, config, options));
    return out;
}

void render_report(const fs::path& out_dir) {
    const Paths at{out_dir};
    if (!fs::exists(at(kResults))) throw ArtifactError("no evaluation results in " + out_dir.string() + "; run evaluate first");
    const auto results = eval::results_from_json(read_json(at(kResults)));
    std::optional<eval::Timing> timing;
    if (fs::exists(at(kTiming))) timing = eval::timing_from_json(read_json(at(kTiming)));
    write_report(at, results, timing);
}

}  // namespace dynamite::pipeline
