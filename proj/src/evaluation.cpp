#include "dynamite/evaluation.hpp"

#include "dynamite/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace dynamite::eval {

using nlohmann::json;

namespace {

void check_assignments(std::span<const int> assignments, std::size_t n_defenses, const data::Dataset& cell) {
    if (cell.size() == 0) throw Error("dynamite_score: empty cell");
    if (assignments.size() != cell.size()) throw Error("dynamite_score: one assignment per sample required");
    for (int a : assignments) {
        if (a < 0 || static_cast<std::size_t>(a) >= n_defenses) {
            throw Error("dynamite_score: assignment " + std::to_string(a) + " is not a valid defense");
        }
    }
}

double finish(ScoreBreakdown& b) {
    b.score = b.recompute();
    return b.score;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string defense_name(int id) {
    return std::string(defense::display_name(defense::defense_from_id(id)));
}

}  // namespace

double ScoreBreakdown::recompute() const {
    if (total == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > 0) s += static_cast<double>(counts[i]) / static_cast<double>(total) * performance[i];
    }
    return s;
}

ScoreBreakdown dynamite_score(std::span<const int> assignments, const std::vector<defense::DefendedModel>& defenses,
                              const data::Dataset& cell) {
    check_assignments(assignments, defenses.size(), cell);
    ScoreBreakdown b;
    b.counts.assign(defenses.size(), 0);
    b.performance.assign(defenses.size(), 0.0);
    b.total = cell.size();
    std::vector<std::vector<std::size_t>> parts(defenses.size());
    for (std::size_t i = 0; i < assignments.size(); ++i) parts[static_cast<std::size_t>(assignments[i])].push_back(i);
    for (std::size_t d = 0; d < defenses.size(); ++d) {
        if (parts[d].empty()) continue;
        const auto sub = cell.subset(parts[d]);
        b.counts[d] = parts[d].size();
        b.performance[d] = metrics::macro_f1(defense::defended_predict(defenses[d], sub).labels, sub.labels,
                                             cell.n_classes);
    }
    finish(b);
    return b;
}

ScoreBreakdown score_from_predictions(std::span<const int> assignments,
                                      const std::vector<std::vector<int>>& predictions, const data::Dataset& cell) {
    check_assignments(assignments, predictions.size(), cell);
    ScoreBreakdown b;
    b.counts.assign(predictions.size(), 0);
    b.performance.assign(predictions.size(), 0.0);
    b.total = cell.size();
    std::vector<std::vector<int>> pred(predictions.size()), truth(predictions.size());
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const auto d = static_cast<std::size_t>(assignments[i]);
        pred[d].push_back(predictions[d].at(i));
        truth[d].push_back(cell.labels[i]);
    }
    for (std::size_t d = 0; d < predictions.size(); ++d) {
        if (pred[d].empty()) continue;
        b.counts[d] = pred[d].size();
        b.performance[d] = metrics::macro_f1(pred[d], truth[d], cell.n_classes);
    }
    finish(b);
    return b;
}

std::vector<double> eval_no_defense(const nn::MlpModel& baseline, const std::vector<const data::Dataset*>& cells) {
    std::vector<double> out;
    out.reserve(cells.size());
    for (const auto* c : cells) out.push_back(metrics::macro_f1(nn::predict(baseline, *c).labels, c->labels, c->n_classes));
    return out;
}

std::vector<double> eval_random(const std::vector<std::vector<double>>& defense_f1,
                                const std::vector<std::string>& cell_ids, int trials, Seed seed) {
    if (trials < 1) throw ConfigError("eval.random_trials must be at least 1");
    if (cell_ids.size() != defense_f1.size()) throw Error("eval_random: one id per cell required");
    std::vector<double> out;
    out.reserve(defense_f1.size());
    for (std::size_t c = 0; c < defense_f1.size(); ++c) {
        const auto& f1 = defense_f1[c];
        if (f1.empty()) throw Error("eval_random: no defenses");
        std::mt19937_64 rng(derive_seed(seed, cell_ids[c]));
        std::uniform_int_distribution<std::size_t> pick(0, f1.size() - 1);
        double sum = 0.0;
        for (int t = 0; t < trials; ++t) sum += f1[pick(rng)];
        out.push_back(sum / trials);
    }
    return out;
}

std::vector<OracleChoice> eval_oracle(const std::vector<std::vector<double>>& defense_f1) {
    std::vector<OracleChoice> out;
    out.reserve(defense_f1.size());
    for (const auto& f1 : defense_f1) {
        if (f1.empty()) throw Error("eval_oracle: no defenses");
        const auto best = std::max_element(f1.begin(), f1.end());  // first maximum
        out.push_back({static_cast<int>(best - f1.begin()), *best});
    }
    return out;
}

StaticChoice eval_best_static(const router::PerformanceMatrix& matrix,
                              const std::vector<std::vector<double>>& defense_f1) {
    StaticChoice s;
    s.defense = static_cast<int>(matrix.best_row());
    for (const auto& f1 : defense_f1) s.f1.push_back(f1.at(static_cast<std::size_t>(s.defense)));
    return s;
}

std::vector<ScoreBreakdown> eval_dynamite(const gbt::GbtModel& selector, const router::PredictionTable& predictions,
                                          const std::vector<const data::Dataset*>& cells) {
    std::vector<ScoreBreakdown> out;
    out.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto assignments = selector.predict_rows(cells[c]->features);
        std::vector<std::vector<int>> per_defense;
        per_defense.reserve(predictions.size());
        for (const auto& d : predictions) per_defense.push_back(d[c]);
        out.push_back(score_from_predictions(assignments, per_defense, *cells[c]));
    }
    return out;
}

Timing measure_timing(const gbt::GbtModel& selector, const std::vector<defense::DefendedModel>& defenses,
                      int best_static, const data::Dataset& cell, int repeats) {
    if (repeats < 3) throw ConfigError("eval.timing_repeats must be at least 3");
    if (cell.size() == 0) throw Error("measure_timing: empty cell");
    using clock = std::chrono::steady_clock;
    const auto n = cell.size();
    std::vector<Matrix> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = cell.features.row(static_cast<Eigen::Index>(i));

    // The sink keeps the optimizer from discarding the predictions.
    long sink = 0;
    const auto per_sample_ms = [&](const auto& body) {
        const auto start = clock::now();
        for (std::size_t i = 0; i < n; ++i) sink += body(rows[i]);
        const std::chrono::duration<double, std::milli> elapsed = clock::now() - start;
        return elapsed.count() / static_cast<double>(n);
    };
    const auto routed = [&](const Matrix& x) {
        const int d = selector.predict(x.data());
        return defense::defended_predict(defenses[static_cast<std::size_t>(d)], x).labels[0];
    };
    const auto oracle = [&](const Matrix& x) {
        int label = 0;
        double confidence = -1.0;
        for (const auto& dm : defenses) {
            const auto p = defense::defended_predict(dm, x);
            const double top = p.probs.row(0).maxCoeff();
            if (top > confidence) {
                confidence = top;
                label = p.labels[0];
            }
        }
        return label;
    };
    const auto fixed = [&](const Matrix& x) {
        return defense::defended_predict(defenses[static_cast<std::size_t>(best_static)], x).labels[0];
    };

    std::vector<double> dyn, ora, sta;
    for (int r = 0; r < repeats; ++r) {
        dyn.push_back(per_sample_ms(routed));
        ora.push_back(per_sample_ms(oracle));
        sta.push_back(per_sample_ms(fixed));
    }
    if (sink == std::numeric_limits<long>::min()) throw Error("unreachable");
    return {median(dyn), median(ora), median(sta), repeats, n};
}

void check_invariants(const EvaluationResults& results) {
    double dyn = 0.0, rnd = 0.0;
    for (const auto& c : results.cells) {
        const double best = *std::max_element(c.defense_f1.begin(), c.defense_f1.end());
        if (c.oracle.f1 != best || c.oracle.f1 < c.best_static) {
            throw InvariantError("oracle dominance violated on cell " + c.id);
        }
        std::size_t counted = 0;
        for (auto k : c.dynamite.counts) counted += k;
        if (counted != c.dynamite.total || c.dynamite.total != c.samples) {
            throw InvariantError("score partition does not cover cell " + c.id);
        }
        if (std::abs(c.dynamite.recompute() - c.dynamite.score) > 1e-12) {
            throw InvariantError("weighted score does not re-sum on cell " + c.id);
        }
        dyn += c.dynamite.score;
        rnd += c.random;
    }
    const auto n = static_cast<double>(results.cells.size());
    if (n > 0 && dyn / n < rnd / n - 0.02) {
        throw InvariantError(fmt::format("dynamite average {:.4f} is more than 0.02 below random {:.4f}", dyn / n,
                                         rnd / n));
    }
}

json results_to_json(const EvaluationResults& results) {
    json cells = json::array();
    for (const auto& c : results.cells) {
        cells.push_back({{"id", c.id},
                         {"attack", std::string(attacks::to_string(c.kind))},
                         {"epsilon", c.epsilon},
                         {"samples", c.samples},
                         {"no_defense", c.no_defense},
                         {"defense_f1", c.defense_f1},
                         {"dynamite",
                          {{"counts", c.dynamite.counts},
                           {"performance", c.dynamite.performance},
                           {"total", c.dynamite.total},
                           {"score", c.dynamite.score}}},
                         {"oracle", {{"defense", c.oracle.defense}, {"f1", c.oracle.f1}}},
                         {"random", c.random},
                         {"best_static", c.best_static}});
    }
    return {{"cells", cells},
            {"best_static", results.best_static},
            {"clean_f1", results.clean_f1},
            {"random_trials", results.random_trials},
            {"seed", results.seed},
            {"config_hash", results.config_hash}};
}

EvaluationResults results_from_json(const json& j) {
    try {
        EvaluationResults r;
        r.best_static = j.at("best_static").get<int>();
        r.clean_f1 = j.at("clean_f1").get<double>();
        r.random_trials = j.at("random_trials").get<int>();
        r.seed = j.at("seed").get<Seed>();
        r.config_hash = j.at("config_hash").get<std::string>();
        for (const auto& jc : j.at("cells")) {
            CellResult c;
            c.id = jc.at("id").get<std::string>();
            c.kind = attacks::parse_attack_kind(jc.at("attack").get<std::string>());
            c.epsilon = jc.at("epsilon").get<double>();
            c.samples = jc.at("samples").get<std::size_t>();
            c.no_defense = jc.at("no_defense").get<double>();
            c.defense_f1 = jc.at("defense_f1").get<std::vector<double>>();
            const auto& jd = jc.at("dynamite");
            c.dynamite.counts = jd.at("counts").get<std::vector<std::size_t>>();
            c.dynamite.performance = jd.at("performance").get<std::vector<double>>();
            c.dynamite.total = jd.at("total").get<std::size_t>();
            c.dynamite.score = jd.at("score").get<double>();
            c.oracle.defense = jc.at("oracle").at("defense").get<int>();
            c.oracle.f1 = jc.at("oracle").at("f1").get<double>();
            c.random = jc.at("random").get<double>();
            c.best_static = jc.at("best_static").get<double>();
            r.cells.push_back(std::move(c));
        }
        return r;
    } catch (const json::exception& e) {
        throw ArtifactError(std::string("evaluation results: ") + e.what());
    }
}

json timing_to_json(const Timing& t) {
    return {{"dynamite_ms", t.dynamite_ms},
            {"oracle_ms", t.oracle_ms},
            {"best_static_ms", t.best_static_ms},
            {"repeats", t.repeats},
            {"samples", t.samples}};
}

Timing timing_from_json(const json& j) {
    try {
        return {j.at("dynamite_ms").get<double>(), j.at("oracle_ms").get<double>(),
                j.at("best_static_ms").get<double>(), j.at("repeats").get<int>(), j.at("samples").get<std::size_t>()};
    } catch (const json::exception& e) {
        throw ArtifactError(std::string("timing: ") + e.what());
    }
}

namespace {

constexpr std::array<const char*, 5> kMethods{"no_defense", "dynamite", "oracle", "random", "best_static"};
constexpr std::array<const char*, 5> kHeaders{"No Defense", "Dynamite", "Oracle", "Random", "Best-Static"};

std::array<double, 5> method_values(const CellResult& c) {
    return {c.no_defense, c.dynamite.score, c.oracle.f1, c.random, c.best_static};
}

json values_json(const std::array<double, 5>& v) {
    json j = json::object();
    for (std::size_t m = 0; m < kMethods.size(); ++m) j[kMethods[m]] = v[m];
    return j;
}

json improvement_json(const std::vector<std::string>& attacks, const std::vector<std::array<double, 5>>& rows,
                      std::size_t other) {
    json per = json::object();
    double best = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    int n = 0;
    for (std::size_t a = 0; a < rows.size(); ++a) {
        const double base = rows[a][other];
        if (base <= 0.0) {
            per[attacks[a]] = nullptr;
            continue;
        }
        const double rate = (rows[a][1] - base) / base;
        per[attacks[a]] = rate;
        best = std::max(best, rate);
        sum += rate;
        ++n;
    }
    return {{"per_attack", per}, {"max", n > 0 ? json(best) : json(nullptr)},
            {"mean", n > 0 ? json(sum / n) : json(nullptr)}};
}

}  // namespace

json build_report(const EvaluationResults& results) {
    if (results.cells.empty()) throw Error("build_report: no evaluated cells");
    // Attack rows follow the canonical attack order; cells pool by sample count.
    std::vector<std::string> names;
    std::vector<std::array<double, 5>> rows;
    json row_json = json::array();
    for (auto kind : attacks::kAllAttacks) {
        std::array<double, 5> acc{};
        std::size_t samples = 0;
        json ids = json::array();
        for (const auto& c : results.cells) {
            if (c.kind != kind) continue;
            const auto v = method_values(c);
            for (std::size_t m = 0; m < acc.size(); ++m) acc[m] += static_cast<double>(c.samples) * v[m];
            samples += c.samples;
            ids.push_back(c.id);
        }
        if (samples == 0) continue;
        for (auto& v : acc) v /= static_cast<double>(samples);
        names.emplace_back(attacks::to_string(kind));
        rows.push_back(acc);
        json r = values_json(acc);
        r["attack"] = names.back();
        r["samples"] = samples;
        r["cells"] = ids;
        row_json.push_back(r);
    }

    std::array<double, 5> avg{}, cell_avg{};
    for (const auto& r : rows) {
        for (std::size_t m = 0; m < avg.size(); ++m) avg[m] += r[m];
    }
    for (auto& v : avg) v /= static_cast<double>(rows.size());
    for (const auto& c : results.cells) {
        const auto v = method_values(c);
        for (std::size_t m = 0; m < cell_avg.size(); ++m) cell_avg[m] += v[m];
    }
    for (auto& v : cell_avg) v /= static_cast<double>(results.cells.size());

    for (std::size_t m = 0; m < avg.size(); ++m) {
        double check = 0.0;
        for (const auto& r : rows) check += r[m];
        if (std::abs(check / static_cast<double>(rows.size()) - avg[m]) > 1e-9) {
            throw InvariantError("averages row does not match its column");
        }
    }

    json cells = json::array();
    for (const auto& c : results.cells) {
        json jc = values_json(method_values(c));
        jc["id"] = c.id;
        jc["oracle_defense"] = defense_name(c.oracle.defense);
        jc["assignments"] = c.dynamite.counts;
        cells.push_back(jc);
    }

    return {{"columns", kHeaders},
            {"rows", row_json},
            {"averages", values_json(avg)},
            {"test_cell_average", values_json(cell_avg)},
            {"improvement",
             {{"vs_random", improvement_json(names, rows, 3)}, {"vs_best_static", improvement_json(names, rows, 4)}}},
            {"best_static_defense", {{"id", results.best_static}, {"name", defense_name(results.best_static)}}},
            {"oracle_minus_dynamite", cell_avg[2] - cell_avg[1]},
            {"clean_f1", results.clean_f1},
            {"cells", cells},
            {"random_trials", results.random_trials},
            {"seed", results.seed},
            {"config_hash", results.config_hash}};
}

namespace {

std::string pct(const json& v) {
    return v.is_number() ? fmt::format("{:.2f}", 100.0 * v.get<double>()) : std::string("n/a");
}

}  // namespace

std::string render_report(const json& report, const std::optional<Timing>& timing) {
    std::string out = "Macro-F1 (%) on held-out attack cells\n\n";
    out += fmt::format("{:<12}", "Attack");
    for (const auto* h : kHeaders) out += fmt::format("{:>13}", h);
    out += '\n';
    const auto line = [&](const std::string& label, const json& values) {
        out += fmt::format("{:<12}", label);
        for (const auto* m : kMethods) out += fmt::format("{:>13}", pct(values.at(m)));
        out += '\n';
    };
    for (const auto& r : report.at("rows")) line(r.at("attack").get<std::string>(), r);
    line("Average", report.at("averages"));
    line("Cell mean", report.at("test_cell_average"));

    out += "\nF1 improvement rate of Dynamite (%)\n\n";
    out += fmt::format("{:<14}{:>10}{:>10}\n", "Versus", "Max", "Mean");
    for (const auto& [key, label] : {std::pair{"vs_random", "Random"}, std::pair{"vs_best_static", "Best-Static"}}) {
        const auto& imp = report.at("improvement").at(key);
        out += fmt::format("{:<14}{:>10}{:>10}\n", label, pct(imp.at("max")), pct(imp.at("mean")));
    }

    out += fmt::format("\nBest static defense: {}\n", report.at("best_static_defense").at("name").get<std::string>());
    out += fmt::format("Oracle minus Dynamite (cell mean): {:.2f} points\n",
                       100.0 * report.at("oracle_minus_dynamite").get<double>());

    if (timing) {
        out += "\nPer-sample selection time (ms)\n\n";
        out += fmt::format("{:<14}{:>12}\n", "Dynamite", fmt::format("{:.4f}", timing->dynamite_ms));
        out += fmt::format("{:<14}{:>12}\n", "Oracle", fmt::format("{:.4f}", timing->oracle_ms));
        out += fmt::format("{:<14}{:>12}\n", "Best-Static", fmt::format("{:.4f}", timing->best_static_ms));
        if (timing->oracle_ms > 0.0) {
            out += fmt::format("Reduction versus oracle: {:.1f}%\n",
                               100.0 * (1.0 - timing->dynamite_ms / timing->oracle_ms));
        }
    }
    return out;
}

}  // namespace dynamite::eval
