#pragma once

// Stage-oriented orchestration: one JSON config drives preprocessing,
// baseline training, attack generation, defense training, router building
// and evaluation. Every stage leaves a content-hashed manifest behind and
// checks the manifests of the stages it reads from.

#include "dynamite/attacks.hpp"
#include "dynamite/defenses.hpp"
#include "dynamite/gbt.hpp"
#include "dynamite/mlp.hpp"
#include "dynamite/tabular.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dynamite::pipeline {

struct DataSection {
    std::string source = "synthetic";  // "synthetic" or "csv"
    std::filesystem::path csv;
    std::filesystem::path schema;
    data::SynthSpec synth;               // its seed is replaced by the master seed
    data::CleanSpec clean;
    double test_fraction = 0.3;
    bool stratified = true;
};

struct ModelSection {
    std::vector<int> hidden{128, 64};
    nn::TrainConfig train;
};

struct AttackSection {
    std::vector<attacks::AttackKind> kinds{attacks::kAllAttacks.begin(), attacks::kAllAttacks.end()};
    std::vector<double> epsilons{0.01, 0.1, 0.2, 0.3};
    double train_epsilon = 0.1;
    attacks::AttackParams params;
};

struct SelectorSection {
    gbt::GbtConfig gbt;
    double holdout_fraction = 0.2;
};

struct EvalSection {
    int random_trials = 100;
    int timing_repeats = 5;
    std::size_t timing_samples = 1000;
};

struct PipelineConfig {
    Seed seed = 7;
    DataSection data;
    ModelSection model;
    AttackSection attack;
    defense::DefenseConfig defense;
    SelectorSection selector;
    EvalSection eval;
    std::filesystem::path out_dir = "runs/synthetic";

    /// Normalized form with every default filled in.
    [[nodiscard]] nlohmann::json to_json() const;
    /// SHA-256 of the normalized form without the output directory.
    [[nodiscard]] std::string hash() const;
    void validate() const;
};

/// Fails closed: unknown keys and type errors raise ConfigError naming the
/// field path. Relative data paths resolve against `base_dir`.
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Reads the file, applies the DYNAMITE_SEED override, and validates.
PipelineConfig load_config(const std::filesystem::path& path);

enum class Stage { Preprocess, TrainBaseline, GenAttacks, TrainDefenses, BuildRouter, Evaluate };

inline constexpr std::array<Stage, 6> kAllStages{Stage::Preprocess,    Stage::TrainBaseline, Stage::GenAttacks,
                                                 Stage::TrainDefenses, Stage::BuildRouter,   Stage::Evaluate};

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);
std::vector<Stage> dependencies(Stage stage);

struct StageManifest {
    Stage stage = Stage::Preprocess;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
    std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
    std::vector<std::string> volatile_outputs;                 // timing-dependent, not hashed
    nlohmann::json seeds = nlohmann::json::object();
    nlohmann::json metrics = nlohmann::json::object();
    double duration_s = 0.0;

    [[nodiscard]] nlohmann::json to_json() const;
    static StageManifest from_json(const nlohmann::json& j);
};

std::filesystem::path manifest_path(const std::filesystem::path& out_dir, Stage stage);

/// Loads a stage manifest and re-hashes its outputs; throws ArtifactError
/// naming the stage to rerun on any mismatch or absence.
StageManifest verify_stage(const std::filesystem::path& out_dir, Stage stage, const std::string& config_hash);

struct RunOptions {
    unsigned threads = 1;
};

/// Runs one stage, writes its manifest and appends it to ledger.jsonl.
StageManifest run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options = {});

/// All stages in order; stops at the first failure.
std::vector<StageManifest> run_all(const PipelineConfig& config, const RunOptions& options = {});

/// Re-renders report.json and report.txt from stored evaluation artifacts.
void render_report(const std::filesystem::path& out_dir);

}  // namespace dynamite::pipeline
