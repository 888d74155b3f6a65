#pragma once

// Ingestion, cleaning, standardization, one-hot encoding, splitting and
// synthesis of tabular intrusion-detection data.

#include "dynamite/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dynamite::data {

enum class ColumnKind { Numeric, Categorical, Label };

std::string_view to_string(ColumnKind kind);
ColumnKind parse_column_kind(std::string_view text);

struct ColumnSpec {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
};

using Schema = std::vector<ColumnSpec>;

/// Reads `{"columns": [{"name": ..., "kind": "numeric|categorical|label"}, ...]}`.
Schema load_schema(const std::filesystem::path& path);

/// One column of a RawTable. Numeric columns fill `numbers`, the other kinds
/// fill `text`.
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::vector<double> numbers;
    std::vector<std::string> text;

    [[nodiscard]] std::size_t size() const {
        return kind == ColumnKind::Numeric ? numbers.size() : text.size();
    }
};

struct RawTable {
    std::vector<Column> columns;
    std::size_t n_rows = 0;

    [[nodiscard]] const Column* find(std::string_view name) const;
    [[nodiscard]] const Column& label_column() const;

    /// Checks one value per column per row and exactly one label column.
    void validate() const;

    /// Rows picked by index, in the given order.
    [[nodiscard]] RawTable select_rows(const std::vector<std::size_t>& rows) const;
};

/// Parses a comma-separated file whose header must list exactly the schema's
/// column names, in order.
RawTable load_csv(const std::filesystem::path& path, const Schema& schema);

struct CleanSpec {
    bool drop_constant = true;
    bool drop_duplicates = false;
    std::vector<std::string> drop_listed;
};

RawTable clean(const RawTable& table, const CleanSpec& spec);

/// Output features produced by one retained input column.
struct FeatureBlock {
    std::string column;
    ColumnKind kind = ColumnKind::Numeric;
    double mean = 0.0;  // numeric only
    double std = 1.0;   // numeric only; population convention
    std::vector<std::string> categories;  // categorical only; index = one-hot slot

    [[nodiscard]] std::size_t width() const {
        return kind == ColumnKind::Numeric ? 1 : categories.size();
    }
};

struct PreprocessState {
    std::vector<std::string> dropped_columns;
    std::vector<FeatureBlock> blocks;
    std::string label_column;
    std::vector<std::string> label_values;  // index = class id
    Bounds clamp_bounds;

    [[nodiscard]] std::size_t dim() const;
    [[nodiscard]] int n_classes() const { return static_cast<int>(label_values.size()); }
    [[nodiscard]] std::vector<std::string> feature_names() const;
};

std::string state_to_json(const PreprocessState& state);
PreprocessState state_from_json(std::string_view json);

struct Dataset {
    Matrix features;
    std::vector<int> labels;
    int n_classes = 0;
    std::vector<std::string> feature_names;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

    /// No NaN/inf entries, labels in range, consistent shapes.
    void validate() const;

    [[nodiscard]] Dataset subset(const std::vector<std::size_t>& rows) const;
    [[nodiscard]] std::vector<std::size_t> class_counts() const;
};

PreprocessState fit_preprocessor(const RawTable& table);
Dataset apply_preprocessor(const PreprocessState& state, const RawTable& table);

/// Per-feature min/max of a dataset.
Bounds feature_bounds(const Dataset& data);

/// Label ids of a raw table under the given label vocabulary.
std::vector<int> encode_labels(const PreprocessState& state, const RawTable& table);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

SplitIndices split_indices(const std::vector<int>& labels, int n_classes, double test_fraction,
                           Seed seed, bool stratified);

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, Seed seed,
                                  bool stratified);

/// Bit-exact binary round trip for features and labels.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct SynthSpec {
    std::size_t n_samples = 4000;
    std::size_t n_numeric = 10;
    std::size_t n_categorical = 2;
    int n_classes = 2;
    double class_separation = 3.0;
    double noise_scale = 1.0;
    Seed seed = 7;

    void validate() const;
};

/// Class-conditional Gaussian numeric columns plus class-skewed categorical
/// columns; the label column is named "label".
RawTable synth_generate(const SynthSpec& spec);

/// Schema matching the columns synth_generate emits.
Schema synth_schema(const SynthSpec& spec);

}  // namespace dynamite::data
