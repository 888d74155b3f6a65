#include "dynamite/tabular.hpp"

#include "dynamite/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace dynamite::data {

using nlohmann::json;

namespace {

constexpr std::string_view kDatasetMagic = "DYDATA";
constexpr std::uint32_t kDatasetVersion = 1;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

// Comma-separated fields with optional double-quoting ("" escapes a quote).
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                current.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(trim(current));
    return fields;
}

std::optional<double> parse_number(std::string_view text) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || !std::isfinite(value)) return std::nullopt;
    return value;
}

// Integer-looking label sets sort numerically, anything else lexicographically.
std::vector<std::string> ordered_label_values(const std::vector<std::string>& raw) {
    std::vector<std::string> values(raw.begin(), raw.end());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const bool all_integers = std::all_of(values.begin(), values.end(), [](const auto& v) {
        long long x = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        return ec == std::errc{} && ptr == v.data() + v.size();
    });
    if (all_integers) {
        std::sort(values.begin(), values.end(), [](const auto& a, const auto& b) {
            return std::stoll(a) < std::stoll(b);
        });
    }
    return values;
}

std::string row_key(const RawTable& table, std::size_t row) {
    std::string key;
    for (const auto& col : table.columns) {
        if (col.kind == ColumnKind::Numeric) {
            const double v = col.numbers[row];
            key.append(reinterpret_cast<const char*>(&v), sizeof(v));
        } else {
            key.append(col.text[row]);
            key.push_back('\0');
        }
    }
    return key;
}

}  // namespace

std::string_view to_string(ColumnKind kind) {
    switch (kind) {
        case ColumnKind::Numeric: return "numeric";
        case ColumnKind::Categorical: return "categorical";
        case ColumnKind::Label: return "label";
    }
    return "unknown";
}

ColumnKind parse_column_kind(std::string_view text) {
    if (text == "numeric") return ColumnKind::Numeric;
    if (text == "categorical") return ColumnKind::Categorical;
    if (text == "label") return ColumnKind::Label;
    throw ConfigError("unknown column kind '" + std::string(text) + "'");
}

Schema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("schema " + path.string() + ": " + e.what());
    }
    Schema schema;
    for (const auto& entry : doc.at("columns")) {
        schema.push_back({entry.at("name").get<std::string>(),
                          parse_column_kind(entry.at("kind").get<std::string>())});
    }
    const auto labels = std::count_if(schema.begin(), schema.end(),
                                      [](const auto& c) { return c.kind == ColumnKind::Label; });
    if (labels != 1) throw ConfigError("schema must declare exactly one label column");
    return schema;
}

const Column* RawTable::find(std::string_view name) const {
    for (const auto& col : columns) {
        if (col.name == name) return &col;
    }
    return nullptr;
}

const Column& RawTable::label_column() const {
    for (const auto& col : columns) {
        if (col.kind == ColumnKind::Label) return col;
    }
    throw Error("table has no label column");
}

void RawTable::validate() const {
    std::size_t labels = 0;
    for (const auto& col : columns) {
        if (col.size() != n_rows) {
            throw Error("column '" + col.name + "' has " + std::to_string(col.size()) +
                        " values, expected " + std::to_string(n_rows));
        }
        if (col.kind == ColumnKind::Label) ++labels;
    }
    if (labels != 1) throw Error("table must have exactly one label column");
}

RawTable RawTable::select_rows(const std::vector<std::size_t>& rows) const {
    RawTable out;
    out.n_rows = rows.size();
    for (const auto& col : columns) {
        Column c{col.name, col.kind, {}, {}};
        if (col.kind == ColumnKind::Numeric) {
            c.numbers.reserve(rows.size());
            for (auto r : rows) c.numbers.push_back(col.numbers.at(r));
        } else {
            c.text.reserve(rows.size());
            for (auto r : rows) c.text.push_back(col.text.at(r));
        }
        out.columns.push_back(std::move(c));
    }
    return out;
}

RawTable load_csv(const std::filesystem::path& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open CSV " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(path.string() + ": missing header row");
    const auto header = split_csv_line(line);
    if (header.size() != schema.size()) {
        throw Error(path.string() + ": header has " + std::to_string(header.size()) +
                    " columns, schema declares " + std::to_string(schema.size()));
    }
    RawTable table;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (header[j] != schema[j].name) {
            throw Error(path.string() + ": header column " + std::to_string(j + 1) + " is '" +
                        header[j] + "', schema expects '" + schema[j].name + "'");
        }
        table.columns.push_back({schema[j].name, schema[j].kind, {}, {}});
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != schema.size()) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(schema.size()) + " cells, found " +
                        std::to_string(fields.size()));
        }
        for (std::size_t j = 0; j < fields.size(); ++j) {
            auto& col = table.columns[j];
            if (fields[j].empty()) {
                throw Error(path.string() + ":" + std::to_string(line_no) + ": empty cell in column '" +
                            col.name + "'");
            }
            if (col.kind == ColumnKind::Numeric) {
                const auto value = parse_number(fields[j]);
                if (!value) {
                    throw Error(path.string() + ":" + std::to_string(line_no) + ": column '" +
                                col.name + "' cell '" + fields[j] + "' is not a number");
                }
                col.numbers.push_back(*value);
            } else {
                col.text.push_back(fields[j]);
            }
        }
        ++table.n_rows;
    }
    table.validate();
    return table;
}

RawTable clean(const RawTable& table, const CleanSpec& spec) {
    table.validate();
    const std::unordered_set<std::string> listed(spec.drop_listed.begin(), spec.drop_listed.end());
    for (const auto& name : spec.drop_listed) {
        const auto* col = table.find(name);
        if (!col) throw ConfigError("clean: cannot drop unknown column '" + name + "'");
        if (col->kind == ColumnKind::Label) {
            throw ConfigError("clean: refusing to drop label column '" + name + "'");
        }
    }

    RawTable out;
    out.n_rows = table.n_rows;
    for (const auto& col : table.columns) {
        if (listed.count(col.name)) continue;
        if (spec.drop_constant && col.kind != ColumnKind::Label && table.n_rows > 0) {
            const bool constant =
                col.kind == ColumnKind::Numeric
                    ? std::all_of(col.numbers.begin(), col.numbers.end(),
                                  [&](double v) { return v == col.numbers.front(); })
                    : std::all_of(col.text.begin(), col.text.end(),
                                  [&](const auto& v) { return v == col.text.front(); });
            if (constant) continue;
        }
        out.columns.push_back(col);
    }

    if (spec.drop_duplicates) {
        std::unordered_set<std::string> seen;
        std::vector<std::size_t> keep;
        for (std::size_t r = 0; r < out.n_rows; ++r) {
            if (seen.insert(row_key(out, r)).second) keep.push_back(r);
        }
        if (keep.size() != out.n_rows) out = out.select_rows(keep);
    }
    return out;
}

std::size_t PreprocessState::dim() const {
    std::size_t d = 0;
    for (const auto& b : blocks) d += b.width();
    return d;
}

std::vector<std::string> PreprocessState::feature_names() const {
    std::vector<std::string> names;
    for (const auto& b : blocks) {
        if (b.kind == ColumnKind::Numeric) {
            names.push_back(b.column);
        } else {
            for (const auto& cat : b.categories) names.push_back(b.column + "=" + cat);
        }
    }
    return names;
}

std::string state_to_json(const PreprocessState& state) {
    json doc;
    doc["dropped_columns"] = state.dropped_columns;
    doc["label_column"] = state.label_column;
    doc["label_values"] = state.label_values;
    json blocks = json::array();
    for (const auto& b : state.blocks) {
        json jb{{"column", b.column}, {"kind", std::string(to_string(b.kind))}};
        if (b.kind == ColumnKind::Numeric) {
            jb["mean"] = b.mean;
            jb["std"] = b.std;
        } else {
            jb["categories"] = b.categories;
        }
        blocks.push_back(std::move(jb));
    }
    doc["blocks"] = std::move(blocks);
    doc["clamp_lo"] = std::vector<double>(state.clamp_bounds.lo.begin(), state.clamp_bounds.lo.end());
    doc["clamp_hi"] = std::vector<double>(state.clamp_bounds.hi.begin(), state.clamp_bounds.hi.end());
    return doc.dump(2);
}

PreprocessState state_from_json(std::string_view text) {
    PreprocessState state;
    try {
        const auto doc = json::parse(text);
        state.dropped_columns = doc.at("dropped_columns").get<std::vector<std::string>>();
        state.label_column = doc.at("label_column").get<std::string>();
        state.label_values = doc.at("label_values").get<std::vector<std::string>>();
        for (const auto& jb : doc.at("blocks")) {
            FeatureBlock b;
            b.column = jb.at("column").get<std::string>();
            b.kind = parse_column_kind(jb.at("kind").get<std::string>());
            if (b.kind == ColumnKind::Numeric) {
                b.mean = jb.at("mean").get<double>();
                b.std = jb.at("std").get<double>();
            } else {
                b.categories = jb.at("categories").get<std::vector<std::string>>();
            }
            state.blocks.push_back(std::move(b));
        }
        const auto lo = doc.at("clamp_lo").get<std::vector<double>>();
        const auto hi = doc.at("clamp_hi").get<std::vector<double>>();
        state.clamp_bounds.lo = Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
        state.clamp_bounds.hi = Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("preprocess state: ") + e.what());
    }
    if (static_cast<std::size_t>(state.clamp_bounds.dim()) != state.dim()) {
        throw ArtifactError("preprocess state: clamp bounds do not match feature count");
    }
    return state;
}

void Dataset::validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw Error("dataset: " + std::to_string(features.rows()) + " feature rows but " +
                    std::to_string(labels.size()) + " labels");
    }
    if (!feature_names.empty() && feature_names.size() != dim()) {
        throw Error("dataset: feature name count does not match dimension");
    }
    if (!features.allFinite()) throw Error("dataset: non-finite feature value");
    for (int y : labels) {
        if (y < 0 || y >= n_classes) {
            throw Error("dataset: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(n_classes) + ")");
        }
    }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.n_classes = n_classes;
    out.feature_names = feature_names;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
        out.labels.push_back(labels.at(rows[i]));
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

PreprocessState fit_preprocessor(const RawTable& table) {
    table.validate();
    if (table.n_rows == 0) throw Error("fit_preprocessor: empty table");
    PreprocessState state;
    const auto n = static_cast<double>(table.n_rows);
    for (const auto& col : table.columns) {
        switch (col.kind) {
            case ColumnKind::Label:
                state.label_column = col.name;
                state.label_values = ordered_label_values(col.text);
                break;
            case ColumnKind::Numeric: {
                const double mean = std::accumulate(col.numbers.begin(), col.numbers.end(), 0.0) / n;
                double ss = 0.0;
                for (double v : col.numbers) ss += (v - mean) * (v - mean);
                const double sd = std::sqrt(ss / n);
                if (!(sd > 0.0)) {
                    state.dropped_columns.push_back(col.name);
                    break;
                }
                state.blocks.push_back({col.name, ColumnKind::Numeric, mean, sd, {}});
                break;
            }
            case ColumnKind::Categorical: {
                FeatureBlock block{col.name, ColumnKind::Categorical, 0.0, 1.0, {}};
                std::unordered_set<std::string> seen;
                for (const auto& v : col.text) {
                    if (seen.insert(v).second) block.categories.push_back(v);
                }
                state.blocks.push_back(std::move(block));
                break;
            }
        }
    }
    // Provisional unbounded box so apply_preprocessor can run on the fit table.
    const auto d = static_cast<Eigen::Index>(state.dim());
    state.clamp_bounds.lo = Vector::Constant(d, -std::numeric_limits<double>::infinity());
    state.clamp_bounds.hi = Vector::Constant(d, std::numeric_limits<double>::infinity());
    state.clamp_bounds = feature_bounds(apply_preprocessor(state, table));
    return state;
}

std::vector<int> encode_labels(const PreprocessState& state, const RawTable& table) {
    const auto* col = table.find(state.label_column);
    if (!col || col->kind != ColumnKind::Label) {
        throw Error("label column '" + state.label_column + "' missing from table");
    }
    std::unordered_map<std::string, int> ids;
    for (std::size_t k = 0; k < state.label_values.size(); ++k) {
        ids.emplace(state.label_values[k], static_cast<int>(k));
    }
    std::vector<int> labels;
    labels.reserve(table.n_rows);
    for (const auto& v : col->text) {
        auto it = ids.find(v);
        if (it == ids.end()) throw Error("label value '" + v + "' was not seen at fit time");
        labels.push_back(it->second);
    }
    return labels;
}

Dataset apply_preprocessor(const PreprocessState& state, const RawTable& table) {
    table.validate();
    Dataset out;
    out.n_classes = state.n_classes();
    out.feature_names = state.feature_names();
    out.labels = encode_labels(state, table);
    out.features = Matrix::Zero(static_cast<Eigen::Index>(table.n_rows),
                                static_cast<Eigen::Index>(state.dim()));
    Eigen::Index offset = 0;
    for (const auto& block : state.blocks) {
        const auto* col = table.find(block.column);
        if (!col) throw Error("apply_preprocessor: column '" + block.column + "' missing from table");
        if (col->kind != block.kind) {
            throw Error("apply_preprocessor: column '" + block.column + "' has kind " +
                        std::string(to_string(col->kind)) + ", expected " +
                        std::string(to_string(block.kind)));
        }
        if (block.kind == ColumnKind::Numeric) {
            for (std::size_t r = 0; r < table.n_rows; ++r) {
                out.features(static_cast<Eigen::Index>(r), offset) =
                    (col->numbers[r] - block.mean) / block.std;
            }
        } else {
            std::unordered_map<std::string, Eigen::Index> slot;
            for (std::size_t k = 0; k < block.categories.size(); ++k) {
                slot.emplace(block.categories[k], static_cast<Eigen::Index>(k));
            }
            for (std::size_t r = 0; r < table.n_rows; ++r) {
                // Unseen categories encode as an all-zero block.
                if (auto it = slot.find(col->text[r]); it != slot.end()) {
                    out.features(static_cast<Eigen::Index>(r), offset + it->second) = 1.0;
                }
            }
        }
        offset += static_cast<Eigen::Index>(block.width());
    }
    out.validate();
    return out;
}

Bounds feature_bounds(const Dataset& data) {
    if (data.size() == 0) throw Error("feature_bounds: empty dataset");
    return {data.features.colwise().minCoeff().transpose(),
            data.features.colwise().maxCoeff().transpose()};
}

SplitIndices split_indices(const std::vector<int>& labels, int n_classes, double test_fraction,
                           Seed seed, bool stratified) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("split: test_fraction must lie in (0, 1)");
    }
    SplitIndices out;
    auto take = [&](std::vector<std::size_t> pool, Seed s) {
        std::mt19937_64 rng(s);
        std::shuffle(pool.begin(), pool.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(pool.size())));
        out.test.insert(out.test.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_test));
        out.train.insert(out.train.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_test), pool.end());
    };
    if (stratified) {
        std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);
        }
        for (int c = 0; c < n_classes; ++c) {
            const auto& members = by_class[static_cast<std::size_t>(c)];
            if (members.size() == 1) {
                throw Error("split: class " + std::to_string(c) +
                            " has a single sample; cannot stratify");
            }
            take(members, derive_seed(seed, static_cast<std::uint64_t>(c)));
        }
    } else {
        std::vector<std::size_t> all(labels.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        take(std::move(all), seed);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, Seed seed,
                                  bool stratified) {
    const auto idx = split_indices(data.labels, data.n_classes, test_fraction, seed, stratified);
    return {data.subset(idx.train), data.subset(idx.test)};
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    data.validate();
    io::BinaryWriter w(kDatasetMagic, kDatasetVersion);
    w.put(static_cast<std::uint64_t>(data.size()));
    w.put(static_cast<std::uint64_t>(data.dim()));
    w.put(static_cast<std::int32_t>(data.n_classes));
    w.put(static_cast<std::uint64_t>(data.feature_names.size()));
    for (const auto& name : data.feature_names) w.put_string(name);
    w.put_doubles(data.features.data(), static_cast<std::size_t>(data.features.size()));
    for (int y : data.labels) w.put(static_cast<std::int32_t>(y));
    w.save(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
    auto r = io::BinaryReader::open(path, kDatasetMagic, kDatasetVersion);
    Dataset data;
    const auto n = r.get<std::uint64_t>();
    const auto d = r.get<std::uint64_t>();
    data.n_classes = r.get<std::int32_t>();
    const auto names = r.get<std::uint64_t>();
    if (names > d) throw ArtifactError(path.string() + ": corrupt feature-name count");
    for (std::uint64_t k = 0; k < names; ++k) data.feature_names.push_back(r.get_string());
    if (n * d > (std::uint64_t{1} << 34)) throw ArtifactError(path.string() + ": corrupt shape");
    data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    r.get_doubles(data.features.data(), static_cast<std::size_t>(n * d));
    data.labels.resize(n);
    for (auto& y : data.labels) y = r.get<std::int32_t>();
    r.expect_end();
    data.validate();
    return data;
}

void SynthSpec::validate() const {
    if (n_classes < 2) throw ConfigError("synth: n_classes must be >= 2");
    if (n_numeric < 2) throw ConfigError("synth: n_numeric must be >= 2");
    if (n_samples == 0) throw ConfigError("synth: n_samples must be positive");
    if (!(class_separation >= 0.0)) throw ConfigError("synth: class_separation must be >= 0");
    if (!(noise_scale > 0.0)) throw ConfigError("synth: noise_scale must be > 0");
}

Schema synth_schema(const SynthSpec& spec) {
    Schema schema;
    for (std::size_t j = 0; j < spec.n_numeric; ++j) {
        schema.push_back({"num_" + std::to_string(j), ColumnKind::Numeric});
    }
    for (std::size_t j = 0; j < spec.n_categorical; ++j) {
        schema.push_back({"cat_" + std::to_string(j), ColumnKind::Categorical});
    }
    schema.push_back({"label", ColumnKind::Label});
    return schema;
}

RawTable synth_generate(const SynthSpec& spec) {
    spec.validate();
    constexpr std::size_t kLevels = 4;
    std::mt19937_64 rng(derive_seed(spec.seed, "synth"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Unit direction along which class means are spaced `class_separation` apart,
    // plus per-column raw units so standardization has work to do.
    Vector direction(static_cast<Eigen::Index>(spec.n_numeric));
    std::vector<double> scale(spec.n_numeric), offset(spec.n_numeric);
    for (std::size_t j = 0; j < spec.n_numeric; ++j) {
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        direction(static_cast<Eigen::Index>(j)) = sign * (0.5 + unit(rng));
        scale[j] = std::pow(10.0, 3.0 * unit(rng));
        offset[j] = 100.0 * unit(rng) * scale[j];
    }
    direction.normalize();
    const double skew = std::min(0.5, 0.1 * spec.class_separation);

    const auto schema = synth_schema(spec);
    RawTable table;
    table.n_rows = spec.n_samples;
    for (const auto& c : schema) table.columns.push_back({c.name, c.kind, {}, {}});
    for (auto& col : table.columns) {
        if (col.kind == ColumnKind::Numeric) col.numbers.reserve(spec.n_samples);
        else col.text.reserve(spec.n_samples);
    }

    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const int cls = static_cast<int>(i % static_cast<std::size_t>(spec.n_classes));
        for (std::size_t j = 0; j < spec.n_numeric; ++j) {
            const double centre = cls * spec.class_separation * direction(static_cast<Eigen::Index>(j));
            const double value = centre + spec.noise_scale * gauss(rng);
            table.columns[j].numbers.push_back(offset[j] + scale[j] * value);
        }
        for (std::size_t j = 0; j < spec.n_categorical; ++j) {
            std::size_t level;
            if (unit(rng) < skew) {
                level = (static_cast<std::size_t>(cls) + j) % kLevels;
            } else {
                level = static_cast<std::size_t>(unit(rng) * kLevels) % kLevels;
            }
            table.columns[spec.n_numeric + j].text.push_back("c" + std::to_string(j) + "_v" +
                                                             std::to_string(level));
        }
        table.columns.back().text.push_back(std::to_string(cls));
    }
    // Shuffle rows so classes are not interleaved by construction.
    std::vector<std::size_t> order(spec.n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return table.select_rows(order);
}

}  // namespace dynamite::data
