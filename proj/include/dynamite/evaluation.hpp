#pragma once

// Scores the five methods (no defense, Dynamite routing, per-cell oracle,
// random defense, best static defense) on the held-out attack cells, times
// per-sample inference, and renders the comparison report.

#include "dynamite/attacks.hpp"
#include "dynamite/defenses.hpp"
#include "dynamite/gbt.hpp"
#include "dynamite/router.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace dynamite::eval {

/// Weighted score of a routed cell: each defense contributes the macro-F1 on
/// the samples assigned to it, weighted by its share of the cell.
struct ScoreBreakdown {
    std::vector<std::size_t> counts;   // per defense
    std::vector<double> performance;   // per defense; 0 for an empty partition
    std::size_t total = 0;
    double score = 0.0;

    [[nodiscard]] double recompute() const;
};

/// Predicts each partition with its defense.
ScoreBreakdown dynamite_score(std::span<const int> assignments, const std::vector<defense::DefendedModel>& defenses,
                              const data::Dataset& cell);

/// Same score from precomputed whole-cell predictions, predictions[defense][sample].
/// Equal to dynamite_score because every defended prediction is row-local.
ScoreBreakdown score_from_predictions(std::span<const int> assignments,
                                      const std::vector<std::vector<int>>& predictions, const data::Dataset& cell);

std::vector<double> eval_no_defense(const nn::MlpModel& baseline, const std::vector<const data::Dataset*>& cells);

/// Mean over `trials` of the F1 of a uniformly drawn defense, per cell.
/// `defense_f1[cell][defense]`; each cell draws from derive_seed(seed, cell_ids[cell]).
std::vector<double> eval_random(const std::vector<std::vector<double>>& defense_f1,
                                const std::vector<std::string>& cell_ids, int trials, Seed seed);

struct OracleChoice {
    int defense = 0;
    double f1 = 0.0;
};

/// Best defense per cell; ties go to the lowest id.
std::vector<OracleChoice> eval_oracle(const std::vector<std::vector<double>>& defense_f1);

struct StaticChoice {
    int defense = 0;
    std::vector<double> f1;
};

/// The matrix row with the highest average, applied unchanged to every cell.
StaticChoice eval_best_static(const router::PerformanceMatrix& matrix,
                              const std::vector<std::vector<double>>& defense_f1);

std::vector<ScoreBreakdown> eval_dynamite(const gbt::GbtModel& selector, const router::PredictionTable& predictions,
                                          const std::vector<const data::Dataset*>& cells);

struct Timing {
    double dynamite_ms = 0.0;
    double oracle_ms = 0.0;
    double best_static_ms = 0.0;
    int repeats = 0;
    std::size_t samples = 0;
};

/// Per-sample streaming inference on one thread; medians over `repeats`.
Timing measure_timing(const gbt::GbtModel& selector, const std::vector<defense::DefendedModel>& defenses,
                      int best_static, const data::Dataset& cell, int repeats);

struct CellResult {
    std::string id;
    attacks::AttackKind kind = attacks::AttackKind::FGSM;
    double epsilon = 0.0;
    std::size_t samples = 0;
    double no_defense = 0.0;
    std::vector<double> defense_f1;
    ScoreBreakdown dynamite;
    OracleChoice oracle;
    double random = 0.0;
    double best_static = 0.0;
};

struct EvaluationResults {
    std::vector<CellResult> cells;
    int best_static = 0;
    double clean_f1 = 0.0;
    int random_trials = 0;
    Seed seed = 0;
    std::string config_hash;
};

/// Throws InvariantError on oracle dominance, score re-summation, or the
/// dynamite-versus-random floor failing.
void check_invariants(const EvaluationResults& results);

nlohmann::json results_to_json(const EvaluationResults& results);
EvaluationResults results_from_json(const nlohmann::json& j);
nlohmann::json timing_to_json(const Timing& timing);
Timing timing_from_json(const nlohmann::json& j);

/// Per-attack table with averages and improvement rates. Pure function of
/// `results`, so regenerating it from the same artifacts is bit-identical.
nlohmann::json build_report(const EvaluationResults& results);

/// Plain-text tables; the timing table is appended when available.
std::string render_report(const nlohmann::json& report, const std::optional<Timing>& timing);

}  // namespace dynamite::eval
