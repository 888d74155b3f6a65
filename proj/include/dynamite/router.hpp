#pragma once

// Turns defense performance on the attack-training cells into per-sample
// labels, and trains the boosted selector that routes samples to defenses.
// Defense indices below are positions in the `defenses` vector; the pipeline
// stores the nine defenses in DefenseKind order so positions equal kind ids.

#include "dynamite/attacks.hpp"
#include "dynamite/defenses.hpp"
#include "dynamite/gbt.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dynamite::router {

struct CellPartition {
    std::vector<std::size_t> train;  // indices into grid.cells
    std::vector<std::size_t> test;
};

/// Cells at `train_epsilon` go to training, together with DeepFool cells whose
/// overshoot is `train_epsilon` or one of its neighbours in the sorted epsilon
/// list; everything else is held out for testing.
CellPartition select_attack_train_cells(const attacks::AdversarialGrid& grid, double train_epsilon);

/// predictions[defense][cell][sample].
using PredictionTable = std::vector<std::vector<std::vector<int>>>;

PredictionTable predict_cells(const std::vector<defense::DefendedModel>& defenses,
                              const std::vector<const data::Dataset*>& cells, unsigned threads = 1);

struct PerformanceMatrix {
    std::vector<std::string> cell_ids;
    std::vector<std::size_t> cell_sizes;
    Matrix f1;  // defenses x cells

    [[nodiscard]] double row_average(std::size_t defense) const;
    /// Highest row average; ties (within 1e-12) go to the lowest index.
    [[nodiscard]] std::size_t best_row() const;
    void validate() const;
};

PerformanceMatrix build_performance_matrix(const PredictionTable& predictions,
                                           const std::vector<const data::Dataset*>& cells,
                                           const std::vector<std::string>& cell_ids);

struct SelectorTrainingSet {
    Matrix features;
    std::vector<int> labels;
    /// Defenses sharing the top rule-1 status (all correct ones, or all of
    /// them when none is correct), in ascending order.
    std::vector<std::vector<int>> tie_meta;
    std::vector<std::size_t> cell_of;  // position in the `cells` argument
};

/// Per sample: prefer defenses that classify it correctly, then the higher
/// matrix row average, then the lower index.
SelectorTrainingSet label_optimal(const PredictionTable& predictions, const std::vector<const data::Dataset*>& cells,
                                  const PerformanceMatrix& matrix);

void save_matrix(const PerformanceMatrix& matrix, const attacks::AdversarialGrid& grid,
                 const std::vector<std::size_t>& cell_indices, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path);
PerformanceMatrix load_matrix(const std::filesystem::path& csv_path);

}  // namespace dynamite::router
