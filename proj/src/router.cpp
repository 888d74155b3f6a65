#include "dynamite/router.hpp"

#include "dynamite/io.hpp"
#include "dynamite/metrics.hpp"
#include "dynamite/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dynamite::router {

using nlohmann::json;

namespace {

constexpr double kTieTolerance = 1e-12;

}  // namespace

CellPartition select_attack_train_cells(const attacks::AdversarialGrid& grid, double train_epsilon) {
    std::set<double> eps_set;
    for (const auto& c : grid.cells) eps_set.insert(c.epsilon);
    const std::vector<double> eps(eps_set.begin(), eps_set.end());
    const auto at = std::find(eps.begin(), eps.end(), train_epsilon);
    if (at == eps.end()) {
        throw ConfigError("train_epsilon " + format_double(train_epsilon) + " is not in the attack grid");
    }
    std::set<double> deepfool_eps{train_epsilon};
    if (at != eps.begin()) deepfool_eps.insert(*(at - 1));
    if (at + 1 != eps.end()) deepfool_eps.insert(*(at + 1));

    CellPartition part;
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const auto& c = grid.cells[i];
        const bool train = c.kind == attacks::AttackKind::DeepFool ? deepfool_eps.count(c.epsilon) > 0
                                                                   : c.epsilon == train_epsilon;
        (train ? part.train : part.test).push_back(i);
    }
    return part;
}

PredictionTable predict_cells(const std::vector<defense::DefendedModel>& defenses,
                              const std::vector<const data::Dataset*>& cells, unsigned threads) {
    PredictionTable table(defenses.size(), std::vector<std::vector<int>>(cells.size()));
    parallel_for(defenses.size() * cells.size(), threads, [&](std::size_t k) {
        const auto d = k / cells.size();
        const auto c = k % cells.size();
        table[d][c] = defense::defended_predict(defenses[d], *cells[c]).labels;
    });
    return table;
}

double PerformanceMatrix::row_average(std::size_t defense) const {
    return f1.row(static_cast<Eigen::Index>(defense)).mean();
}

std::size_t PerformanceMatrix::best_row() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < static_cast<std::size_t>(f1.rows()); ++i) {
        if (row_average(i) > row_average(best) + kTieTolerance) best = i;
    }
    return best;
}

void PerformanceMatrix::validate() const {
    if (f1.rows() < 1 || f1.cols() < 1) throw Error("performance matrix is empty");
    if (static_cast<std::size_t>(f1.cols()) != cell_ids.size() || cell_ids.size() != cell_sizes.size()) {
        throw Error("performance matrix: column metadata does not match");
    }
    if (!f1.allFinite() || f1.minCoeff() < 0.0 || f1.maxCoeff() > 1.0) {
        throw Error("performance matrix: entries must lie in [0, 1]");
    }
}

PerformanceMatrix build_performance_matrix(const PredictionTable& predictions,
                                           const std::vector<const data::Dataset*>& cells,
                                           const std::vector<std::string>& cell_ids) {
    if (predictions.empty() || cells.empty()) throw Error("build_performance_matrix: need defenses and cells");
    if (cell_ids.size() != cells.size()) throw Error("build_performance_matrix: one id per cell required");
    PerformanceMatrix m;
    m.cell_ids = cell_ids;
    m.f1.resize(static_cast<Eigen::Index>(predictions.size()), static_cast<Eigen::Index>(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
        m.cell_sizes.push_back(cells[c]->size());
        for (std::size_t d = 0; d < predictions.size(); ++d) {
            m.f1(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) =
                metrics::macro_f1(predictions[d][c], cells[c]->labels, cells[c]->n_classes);
        }
    }
    m.validate();
    return m;
}

SelectorTrainingSet label_optimal(const PredictionTable& predictions, const std::vector<const data::Dataset*>& cells,
                                  const PerformanceMatrix& matrix) {
    matrix.validate();
    const auto n_def = predictions.size();
    if (static_cast<std::size_t>(matrix.f1.rows()) != n_def) throw Error("label_optimal: matrix has wrong row count");
    std::vector<double> avg(n_def);
    for (std::size_t d = 0; d < n_def; ++d) avg[d] = matrix.row_average(d);

    std::size_t total = 0;
    for (const auto* c : cells) total += c->size();
    SelectorTrainingSet set;
    set.features.resize(static_cast<Eigen::Index>(total), cells.empty() ? 0 : cells[0]->features.cols());
    set.labels.reserve(total);
    set.tie_meta.reserve(total);
    set.cell_of.reserve(total);

    Eigen::Index row = 0;
    std::vector<int> correct;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = *cells[c];
        for (std::size_t i = 0; i < cell.size(); ++i) {
            correct.clear();
            for (std::size_t d = 0; d < n_def; ++d) {
                if (predictions[d][c][i] == cell.labels[i]) correct.push_back(static_cast<int>(d));
            }
            if (correct.empty()) {
                for (std::size_t d = 0; d < n_def; ++d) correct.push_back(static_cast<int>(d));
            }
            int best = correct.front();
            for (int d : correct) {
                if (avg[static_cast<std::size_t>(d)] > avg[static_cast<std::size_t>(best)] + kTieTolerance) best = d;
            }
            set.features.row(row++) = cell.features.row(static_cast<Eigen::Index>(i));
            set.labels.push_back(best);
            set.tie_meta.push_back(correct);
            set.cell_of.push_back(c);
        }
    }
    return set;
}

void save_matrix(const PerformanceMatrix& matrix, const attacks::AdversarialGrid& grid,
                 const std::vector<std::size_t>& cell_indices, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path) {
    matrix.validate();
    std::string csv = "defense";
    for (const auto& id : matrix.cell_ids) csv += "," + id;
    csv += '\n';
    for (Eigen::Index d = 0; d < matrix.f1.rows(); ++d) {
        csv += std::to_string(d);
        for (Eigen::Index c = 0; c < matrix.f1.cols(); ++c) csv += "," + format_double(matrix.f1(d, c));
        csv += '\n';
    }
    io::write_file(csv_path, csv);

    json cells = json::array();
    for (std::size_t k = 0; k < cell_indices.size(); ++k) {
        const auto& cell = grid.cells.at(cell_indices[k]);
        cells.push_back({{"id", cell.id()},
                         {"kind", std::string(attacks::to_string(cell.kind))},
                         {"epsilon", cell.epsilon},
                         {"seed", cell.seed},
                         {"samples", matrix.cell_sizes.at(k)}});
    }
    json rows = json::array();
    for (Eigen::Index d = 0; d < matrix.f1.rows(); ++d) {
        rows.push_back({{"id", d},
                        {"name", d < defense::kDefenseCount
                                     ? std::string(defense::to_string(defense::defense_from_id(static_cast<int>(d))))
                                     : std::string("defense") + std::to_string(d)},
                        {"row_average", matrix.row_average(static_cast<std::size_t>(d))}});
    }
    const json sidecar{{"source_id", grid.source_id},
                       {"model_fingerprint", grid.model_fingerprint},
                       {"cells", cells},
                       {"defenses", rows}};
    io::write_file(json_path, sidecar.dump(2) + "\n");
}

PerformanceMatrix load_matrix(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ArtifactError("cannot open " + csv_path.string());
    PerformanceMatrix m;
    std::string line;
    std::getline(in, line);
    std::stringstream header(line);
    std::string field;
    std::getline(header, field, ',');
    if (field != "defense") throw ArtifactError(csv_path.string() + ": malformed header");
    while (std::getline(header, field, ',')) m.cell_ids.push_back(field);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::getline(ss, field, ',');
        std::vector<double> row;
        while (std::getline(ss, field, ',')) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc{} || ptr != field.data() + field.size()) {
                throw ArtifactError(csv_path.string() + ": bad number '" + field + "'");
            }
            row.push_back(v);
        }
        if (row.size() != m.cell_ids.size()) throw ArtifactError(csv_path.string() + ": ragged row");
        rows.push_back(std::move(row));
    }
    m.f1.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.cell_ids.size()));
    for (std::size_t d = 0; d < rows.size(); ++d) {
        for (std::size_t c = 0; c < rows[d].size(); ++c) {
            m.f1(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) = rows[d][c];
        }
    }
    m.cell_sizes.assign(m.cell_ids.size(), 0);
    try {
        m.validate();
    } catch (const Error& e) {
        throw ArtifactError(csv_path.string() + ": " + e.what());
    }
    return m;
}

}  // namespace dynamite::router
