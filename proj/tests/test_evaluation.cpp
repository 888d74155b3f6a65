#include "dynamite/evaluation.hpp"

#include "dynamite/metrics.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace dynamite;
using namespace dynamite::eval;

namespace {

struct Fixture {
    data::Dataset clean;
    data::Dataset adversarial;
    nn::MlpModel baseline;
    std::vector<defense::DefendedModel> defenses;
};

// Nine cheap stand-in defenses: differently seeded and trained models, some
// behind the squeeze and noise transforms.
const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture fx;
        const auto raw = data::synth_generate({900, 6, 1, 2, 2.0, 1.0, 11});
        const auto state = data::fit_preprocessor(raw);
        auto ds = data::apply_preprocessor(state, raw);
        data::Dataset train;
        std::tie(train, fx.clean) = data::split(ds, 0.4, 2, true);
        const auto bounds = state.clamp_bounds;
        bounds.clip_rows(fx.clean.features);
        const std::vector<int> dims{static_cast<int>(ds.dim()), 16, 2};
        nn::TrainConfig cfg;
        cfg.epochs = 5;
        cfg.seed = 1;
        fx.baseline = nn::train(nn::init_mlp(dims, 1), train, cfg).model;
        fx.adversarial = fx.clean;
        fx.adversarial.features = attacks::pgd(fx.baseline, fx.clean.features, fx.clean.labels, 0.3, 10, 0.075,
                                               bounds, 4);
        for (int i = 0; i < defense::kDefenseCount; ++i) {
            defense::DefendedModel dm;
            dm.kind = defense::defense_from_id(i);
            cfg.epochs = 1 + i;
            cfg.seed = static_cast<Seed>(10 + i);
            dm.model = nn::train(nn::init_mlp(dims, static_cast<Seed>(20 + i)), train, cfg).model;
            if (i % 3 == 1) dm.transform = {defense::InputTransform::Kind::Squeeze, 3, 0.0, 0, bounds};
            if (i % 3 == 2) dm.transform = {defense::InputTransform::Kind::Noise, 0, 0.3, 77, bounds};
            fx.defenses.push_back(std::move(dm));
        }
        return fx;
    }();
    return f;
}

std::vector<std::vector<int>> whole_cell_predictions(const data::Dataset& cell) {
    std::vector<std::vector<int>> out;
    for (const auto& dm : fixture().defenses) out.push_back(defense::defended_predict(dm, cell).labels);
    return out;
}

double f1_of(const defense::DefendedModel& dm, const data::Dataset& cell) {
    return metrics::macro_f1(defense::defended_predict(dm, cell).labels, cell.labels, cell.n_classes);
}

gbt::GbtModel constant_selector(int defense, int dim) {
    std::mt19937_64 rng(0);
    const Matrix x = testing::random_matrix(10, dim, rng);
    return gbt::train(x, std::vector<int>(10, defense), defense::kDefenseCount, gbt::GbtConfig{});
}

}  // namespace

TEST_CASE("weighted score arithmetic") {
    ScoreBreakdown b;
    b.counts = {60, 40, 0};
    b.performance = {0.8, 0.5, 0.0};
    b.total = 100;
    CHECK(b.recompute() == doctest::Approx(0.68).epsilon(1e-15));
    b.counts = {0, 0, 0};
    b.total = 0;
    CHECK(b.recompute() == 0.0);
}

TEST_CASE("single partition equals the defense's macro-F1 exactly") {
    const auto& fx = fixture();
    for (int d = 0; d < defense::kDefenseCount; ++d) {
        const std::vector<int> all(fx.adversarial.size(), d);
        const auto b = dynamite_score(all, fx.defenses, fx.adversarial);
        CHECK(b.score == f1_of(fx.defenses[static_cast<std::size_t>(d)], fx.adversarial));
        CHECK(b.counts[static_cast<std::size_t>(d)] == fx.adversarial.size());
    }
}

TEST_CASE("subset prediction matches whole-cell prediction and is order invariant") {
    const auto& fx = fixture();
    const auto& cell = fx.adversarial;
    std::vector<int> assign(cell.size());
    for (std::size_t i = 0; i < assign.size(); ++i) assign[i] = static_cast<int>((i * 7 + i / 5) % 9);
    const auto direct = dynamite_score(assign, fx.defenses, cell);
    const auto table = score_from_predictions(assign, whole_cell_predictions(cell), cell);
    CHECK(direct.counts == table.counts);
    CHECK(direct.performance == table.performance);
    CHECK(direct.score == table.score);
    CHECK(std::abs(direct.recompute() - direct.score) <= 1e-12);

    std::vector<std::size_t> perm(cell.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(5);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto shuffled = cell.subset(perm);
    std::vector<int> shuffled_assign;
    for (auto p : perm) shuffled_assign.push_back(assign[p]);
    const auto again = dynamite_score(shuffled_assign, fx.defenses, shuffled);
    CHECK(again.counts == direct.counts);
    CHECK(again.performance == direct.performance);
    CHECK(again.score == doctest::Approx(direct.score).epsilon(1e-15));

    CHECK_THROWS_AS(dynamite_score(std::vector<int>(cell.size(), 9), fx.defenses, cell), Error);
    CHECK_THROWS_AS(dynamite_score(std::vector<int>{}, fx.defenses, data::Dataset{}), Error);
}

TEST_CASE("no-defense baseline") {
    const auto& fx = fixture();
    const std::vector<const data::Dataset*> cells{&fx.clean, &fx.adversarial};
    const auto f1 = eval_no_defense(fx.baseline, cells);
    CHECK(f1[0] == metrics::macro_f1(nn::predict(fx.baseline, fx.clean).labels, fx.clean.labels, 2));
    CHECK(f1[1] <= f1[0]);
    CHECK(eval_no_defense(fx.baseline, cells) == f1);
}

TEST_CASE("random baseline") {
    const std::vector<std::vector<double>> scores{{0.9, 0.1, 0.5, 0.7, 0.3, 0.2, 0.8, 0.6, 0.4}, {0.42}};
    const std::vector<std::string> ids{"a", "b"};
    const auto r = eval_random(scores, ids, 10000, 3);
    CHECK(std::abs(r[0] - 0.5) < 0.005);
    CHECK(r[1] == doctest::Approx(0.42).epsilon(1e-12));
    CHECK(eval_random(scores, ids, 10000, 3) == r);
    CHECK(eval_random(scores, ids, 7, 3)[1] == doctest::Approx(0.42).epsilon(1e-12));
    CHECK_THROWS_AS(eval_random(scores, ids, 0, 3), ConfigError);
}

TEST_CASE("oracle and best-static choices") {
    const std::vector<std::vector<double>> scores{{0.2, 0.9, 0.9}, {0.7, 0.1, 0.3}};
    const auto oracle = eval_oracle(scores);
    CHECK(oracle[0].defense == 1);
    CHECK(oracle[0].f1 == 0.9);
    CHECK(oracle[1].defense == 0);
    CHECK(eval_oracle({{0.33}})[0].f1 == 0.33);

    router::PerformanceMatrix m;
    m.cell_ids = {"x", "y"};
    m.cell_sizes = {1, 1};
    m.f1.resize(3, 2);
    m.f1 << 0.4, 0.6, 0.6, 0.4, 0.1, 0.2;  // rows 0 and 1 tie
    auto chosen = eval_best_static(m, scores);
    CHECK(chosen.defense == 0);
    CHECK(chosen.f1 == std::vector<double>{0.2, 0.7});
    m.f1(2, 0) = 1.0;
    m.f1(2, 1) = 1.0;
    chosen = eval_best_static(m, scores);
    CHECK(chosen.defense == 2);
    for (std::size_t c = 0; c < scores.size(); ++c) CHECK(oracle[c].f1 >= chosen.f1[c]);
}

TEST_CASE("routing through the selector") {
    const auto& fx = fixture();
    const std::vector<const data::Dataset*> cells{&fx.clean, &fx.adversarial};
    router::PredictionTable table = router::predict_cells(fx.defenses, cells);
    for (int d : {0, 4, 8}) {
        const auto scores = eval_dynamite(constant_selector(d, static_cast<int>(fx.clean.dim())), table, cells);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            CHECK(scores[c].score == f1_of(fx.defenses[static_cast<std::size_t>(d)], *cells[c]));
        }
    }

    // Per-sample labels as assignments refine the per-cell oracle.
    std::vector<std::string> ids{"clean", "adv"};
    const auto matrix = router::build_performance_matrix(table, cells, ids);
    const auto labels = router::label_optimal(table, cells, matrix);
    std::vector<std::vector<double>> per_cell(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (std::size_t d = 0; d < table.size(); ++d) per_cell[c].push_back(matrix.f1(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)));
    }
    const auto oracle = eval_oracle(per_cell);
    std::size_t offset = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const std::span<const int> assign(labels.labels.data() + offset, cells[c]->size());
        std::vector<std::vector<int>> preds;
        for (const auto& d : table) preds.push_back(d[c]);
        const auto b = score_from_predictions(assign, preds, *cells[c]);
        MESSAGE("cell " << ids[c] << ": per-sample score " << b.score << ", oracle " << oracle[c].f1);
        CHECK(b.score >= oracle[c].f1 - 1e-9);
        offset += cells[c]->size();
    }
}

TEST_CASE("timing") {
    const auto& fx = fixture();
    const auto selector = constant_selector(3, static_cast<int>(fx.clean.dim()));
    const auto t = measure_timing(selector, fx.defenses, 3, fx.adversarial, 3);
    CHECK(t.samples == fx.adversarial.size());
    CHECK(t.repeats == 3);
    CHECK(t.oracle_ms >= t.best_static_ms);
    CHECK(t.dynamite_ms < t.oracle_ms);
    CHECK_THROWS_AS(measure_timing(selector, fx.defenses, 3, fx.adversarial, 2), ConfigError);
}

TEST_CASE("report aggregation, invariants and serialization") {
    EvaluationResults r;
    r.best_static = 1;
    r.clean_f1 = 0.95;
    r.random_trials = 100;
    r.seed = 7;
    r.config_hash = "abc";
    const auto add = [&](attacks::AttackKind kind, double eps, std::size_t n, double dyn, double rnd, double st) {
        CellResult c;
        c.kind = kind;
        c.epsilon = eps;
        c.id = attacks::cell_id(kind, eps);
        c.samples = n;
        c.no_defense = 0.3;
        c.defense_f1 = {0.5, st, 0.9};
        c.oracle = {2, 0.9};
        c.dynamite.counts = {0, n, 0};
        c.dynamite.performance = {0.0, dyn, 0.0};
        c.dynamite.total = n;
        c.dynamite.score = dyn;
        c.random = rnd;
        c.best_static = st;
        r.cells.push_back(c);
    };
    add(attacks::AttackKind::PGD, 0.2, 100, 0.8, 0.5, 0.8);
    add(attacks::AttackKind::PGD, 0.3, 300, 0.6, 0.5, 0.6);
    add(attacks::AttackKind::FGSM, 0.2, 100, 0.7, 0.7, 0.7);

    const auto report = build_report(r);
    const auto& rows = report.at("rows");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].at("attack") == "fgsm");
    CHECK(rows[1].at("dynamite").get<double>() == doctest::Approx(0.65).epsilon(1e-15));
    CHECK(report.at("averages").at("dynamite").get<double>() == doctest::Approx(0.675).epsilon(1e-15));
    CHECK(report.at("test_cell_average").at("dynamite").get<double>() == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(report.at("improvement").at("vs_best_static").at("max").get<double>() == 0.0);
    CHECK(report.at("improvement").at("vs_random").at("max").get<double>() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(report.at("improvement").at("vs_random").at("mean").get<double>() == doctest::Approx(0.15).epsilon(1e-12));
    CHECK_NOTHROW(check_invariants(r));

    const auto back = results_from_json(nlohmann::json::parse(results_to_json(r).dump()));
    CHECK(build_report(back).dump() == report.dump());
    const auto text = render_report(report, Timing{0.1, 1.0, 0.05, 5, 10});
    CHECK(text.find("Best-Static") != std::string::npos);
    CHECK(text.find("90.0%") != std::string::npos);

    auto broken = r;
    broken.cells[0].oracle.f1 = 0.85;
    CHECK_THROWS_AS(check_invariants(broken), InvariantError);
    broken = r;
    broken.cells[0].dynamite.score += 1e-9;
    CHECK_THROWS_AS(check_invariants(broken), InvariantError);
    broken = r;
    for (auto& c : broken.cells) c.random = c.dynamite.score + 0.05;
    CHECK_THROWS_AS(check_invariants(broken), InvariantError);
}
