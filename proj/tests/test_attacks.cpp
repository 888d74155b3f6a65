#include "dynamite/attacks.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace dynamite;
using namespace dynamite::attacks;

namespace {

// Logits (0, w.x) for a two-class logistic model.
nn::MlpModel logistic_model(double w0, double w1) {
    nn::MlpModel m;
    m.dims = {2, 2};
    nn::DenseLayer layer{Matrix::Zero(2, 2), Vector::Zero(2)};
    layer.weight(1, 0) = w0;
    layer.weight(1, 1) = w1;
    m.layers.push_back(layer);
    return m;
}

Bounds wide_bounds(Eigen::Index d, double r = 100.0) {
    return {RowVector::Constant(d, -r), RowVector::Constant(d, r)};
}

struct Pilot {
    nn::MlpModel model;
    data::Dataset test;
    Bounds bounds;
};

// Small trained network on synthetic data, shared by the comparison tests.
const Pilot& pilot() {
    static const Pilot p = [] {
        const auto raw = data::synth_generate({800, 8, 1, 2, 3.0, 1.0, 21});
        const auto state = data::fit_preprocessor(raw);
        const auto ds = data::apply_preprocessor(state, raw);
        auto [train, test] = data::split(ds, 0.25, 3, true);
        nn::TrainConfig cfg;
        cfg.epochs = 15;
        cfg.seed = 4;
        const std::vector<int> dims{static_cast<int>(ds.dim()), 32, 16, 2};
        auto model = nn::train(nn::init_mlp(dims, 2), train, cfg).model;
        return Pilot{std::move(model), std::move(test), state.clamp_bounds};
    }();
    return p;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

bool within_bounds(const Matrix& x, const Bounds& b) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (!b.contains(x.row(i), 1e-12)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("fgsm closed-form step on a logistic model") {
    const auto m = logistic_model(2.0, -1.0);
    const Matrix x = Matrix::Zero(1, 2);
    const int y[] = {1};
    const Matrix adv = fgsm(m, x, y, 0.1, wide_bounds(2));
    CHECK(adv(0, 0) == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(adv(0, 1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(fgsm(m, x, y, 0.0, wide_bounds(2)) == x);

    const Bounds tight{RowVector::Constant(2, -0.05), RowVector::Constant(2, 0.05)};
    const Matrix clipped = fgsm(m, x, y, 0.1, tight);
    CHECK(clipped(0, 1) == 0.05);
    CHECK(clipped(0, 0) == -0.05);
}

TEST_CASE("bim: single step equals fgsm, displacement saturates at the ball") {
    const auto& p = pilot();
    const Matrix& x = p.test.features;
    const auto& y = p.test.labels;
    CHECK(bim(p.model, x, y, 0.1, 1, 0.1, p.bounds) == fgsm(p.model, x, y, 0.1, p.bounds));

    const Matrix adv = bim(p.model, x, y, 0.1, 10, 0.025, p.bounds);
    CHECK(max_abs_diff(adv, x) <= 0.1 + 1e-12);
    CHECK(within_bounds(adv, p.bounds));

    const auto m = logistic_model(2.0, -1.0);
    const Matrix z = Matrix::Zero(1, 2);
    const int y1[] = {1};
    const Matrix lin = bim(m, z, y1, 0.1, 3, 0.05, wide_bounds(2));
    CHECK(std::abs(lin(0, 0)) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(std::abs(lin(0, 1)) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("pgd: zero budget, determinism, strength relative to fgsm") {
    const auto& p = pilot();
    const Matrix& x = p.test.features;
    const auto& y = p.test.labels;
    CHECK(pgd(p.model, x, y, 0.0, 5, 0.1, p.bounds, 9) == x);

    const Matrix a = pgd(p.model, x, y, 0.2, 10, 0.05, p.bounds, 17);
    CHECK(a == pgd(p.model, x, y, 0.2, 10, 0.05, p.bounds, 17));
    CHECK(a != pgd(p.model, x, y, 0.2, 10, 0.05, p.bounds, 18));
    CHECK(max_abs_diff(a, x) <= 0.2 + 1e-6);
    CHECK(within_bounds(a, p.bounds));

    const Vector loss_pgd = nn::per_sample_ce(nn::forward(p.model, a), y);
    const Vector loss_fgsm = nn::per_sample_ce(nn::forward(p.model, fgsm(p.model, x, y, 0.2, p.bounds)), y);
    const auto at_least = (loss_pgd.array() >= loss_fgsm.array() - 1e-6).count();
    CHECK(static_cast<double>(at_least) >= 0.8 * static_cast<double>(x.rows()));
}

TEST_CASE("auto_pgd: best-so-far contract and comparison with pgd") {
    const auto& p = pilot();
    const Matrix& x = p.test.features;
    const auto& y = p.test.labels;
    CHECK(auto_pgd(p.model, x, y, 0.0, 10, p.bounds, 1) == x);
    CHECK_THROWS_AS(auto_pgd(p.model, x, y, 0.1, 1, p.bounds, 1), ConfigError);

    AutoPgdTrace trace;
    const Matrix adv = auto_pgd(p.model, x, y, 0.2, 20, p.bounds, 5, &trace);
    CHECK(max_abs_diff(adv, x) <= 0.2 + 1e-6);
    CHECK(within_bounds(adv, p.bounds));
    REQUIRE_FALSE(trace.checkpoints.empty());
    CHECK(trace.checkpoints.front() == 5);  // ceil(0.22 * 20)
    const Vector final_loss = nn::per_sample_ce(nn::forward(p.model, adv), y);
    CHECK(max_abs_diff(final_loss, trace.final_losses) < 1e-12);
    for (const auto& cp : trace.checkpoint_losses) {
        CHECK((final_loss.array() >= cp.array() - 1e-12).all());
    }

    const Matrix base = pgd(p.model, x, y, 0.2, 20, 0.05, p.bounds, 5);
    const double pgd_mean = nn::per_sample_ce(nn::forward(p.model, base), y).mean();
    CHECK(final_loss.mean() >= pgd_mean - 1e-3);
}

TEST_CASE("autopgd checkpoints shrink toward the end of the budget") {
    const auto w = autopgd_checkpoints(100);
    REQUIRE(w.size() >= 4);
    CHECK(w[0] == 22);
    CHECK(w[1] == 41);  // 0.22 + 0.19
    for (std::size_t j = 2; j < w.size(); ++j) CHECK(w[j] - w[j - 1] <= w[j - 1] - (j >= 2 ? w[j - 2] : 0));
    CHECK(w.back() < 100);
}

TEST_CASE("deepfool on a linear binary model") {
    // Logits (0, 3 x0 + 4 x1): class 1 wins at (1, 1) with margin 7.
    nn::MlpModel m;
    m.dims = {2, 2};
    m.layers.push_back({Matrix{{0.0, 0.0}, {3.0, 4.0}}, Vector::Zero(2)});
    const Matrix x{{1.0, 1.0}};
    const int y[] = {1};

    const auto r = deepfool(m, x, y, 50, 0.02, wide_bounds(2));
    CHECK(r.perturbation(0, 0) == doctest::Approx(-0.84).epsilon(1e-5));
    CHECK(r.perturbation(0, 1) == doctest::Approx(-1.12).epsilon(1e-5));
    CHECK(r.iterations[0] == 1);
    CHECK(argmax(nn::forward(m, r.adversarial).row(0)) == 0);

    const auto exact = deepfool(m, x, y, 50, 0.0, wide_bounds(2));
    const Matrix logits = nn::forward(m, exact.adversarial);
    CHECK(std::abs(logits(0, 0) - logits(0, 1)) < 1e-6);

    const int wrong[] = {0};
    const auto skip = deepfool(m, x, wrong, 50, 0.02, wide_bounds(2));
    CHECK(skip.iterations[0] == 0);
    CHECK(skip.adversarial == x);

    nn::MlpModel flat = m;
    flat.layers[0].weight.setZero();
    flat.layers[0].bias(1) = 1.0;
    const auto flagged = deepfool(flat, x, y, 50, 0.02, wide_bounds(2));
    CHECK(flagged.flagged[0] == 1);
    CHECK(flagged.adversarial == x);
}

TEST_CASE("deepfool flips most pilot samples") {
    const auto& p = pilot();
    const auto r = deepfool(p.model, p.test.features, p.test.labels, 50, 0.02, wide_bounds(p.test.features.cols(), 1e6));
    const auto pred = nn::predict(p.model, r.adversarial).labels;
    int flipped = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) flipped += pred[i] != p.test.labels[i];
    CHECK(flipped >= static_cast<int>(0.9 * static_cast<double>(pred.size())));
}

TEST_CASE("zoo gradient estimation") {
    auto square = [](const RowVector& v) { return v(0) * v(0); };
    CHECK(symmetric_difference(square, RowVector::Constant(1, 1.0), 0, 0.1) == doctest::Approx(2.0).epsilon(1e-12));

    const auto& p = pilot();
    const auto d = p.test.features.cols();
    std::vector<Eigen::Index> all(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) all[static_cast<std::size_t>(j)] = j;
    for (Eigen::Index i = 0; i < 10; ++i) {
        const RowVector xi = p.test.features.row(i);
        const int yi = p.test.labels[static_cast<std::size_t>(i)];
        const RowVector est = zoo_gradient_estimate(p.model, xi, yi, all, 1e-5);
        const RowVector exact = nn::input_gradient(p.model, xi, yi);
        if (exact.norm() < 1e-8) continue;
        CHECK((est - exact).norm() / exact.norm() < 1e-3);
    }
}

TEST_CASE("zoo stays in budget and raises loss") {
    const auto& p = pilot();
    const Matrix& x = p.test.features;
    const auto& y = p.test.labels;
    CHECK(zoo(p.model, x, y, 0.0, 5, 1e-3, 0.1, 4, p.bounds, 1) == x);
    const Matrix adv = zoo(p.model, x, y, 0.2, 40, 1e-3, 0.05, 16, p.bounds, 3);
    CHECK(max_abs_diff(adv, x) <= 0.2 + 1e-6);
    CHECK(within_bounds(adv, p.bounds));
    CHECK(adv == zoo(p.model, x, y, 0.2, 40, 1e-3, 0.05, 16, p.bounds, 3));
    const double before = nn::per_sample_ce(nn::forward(p.model, x), y).mean();
    const double after = nn::per_sample_ce(nn::forward(p.model, adv), y).mean();
    CHECK(after > before);
}

TEST_CASE("adversarial grid: shape, invariants, determinism, persistence") {
    const auto& p = pilot();
    const std::vector<double> eps{0.01, 0.1, 0.2, 0.3};
    const AttackParams params;
    const auto grid = generate_grid(p.model, p.test, kAllAttacks, eps, p.bounds, params, 11, 2);
    REQUIRE(grid.cells.size() == 24);
    for (const auto& cell : grid.cells) {
        CHECK(cell.data.size() == p.test.size());
        CHECK(cell.data.labels == p.test.labels);
        CHECK(within_bounds(cell.data.features, p.bounds));
        if (is_budgeted(cell.kind)) CHECK(max_abs_diff(cell.data.features, p.test.features) <= cell.epsilon + 1e-6);
    }

    SUBCASE("order independent and repeatable") {
        const auto again = generate_grid(p.model, p.test, kAllAttacks, eps, p.bounds, params, 11, 1);
        const std::vector<double> reversed(eps.rbegin(), eps.rend());
        const auto swapped = generate_grid(p.model, p.test, kAllAttacks, reversed, p.bounds, params, 11, 1);
        for (const auto& cell : grid.cells) {
            CHECK(again.find(cell.kind, cell.epsilon)->data.features == cell.data.features);
            CHECK(swapped.find(cell.kind, cell.epsilon)->data.features == cell.data.features);
        }
    }
    SUBCASE("single cell equals the direct call") {
        const AttackKind one[] = {AttackKind::PGD};
        const double e[] = {0.1};
        const auto g = generate_grid(p.model, p.test, one, e, p.bounds, params, 11);
        REQUIRE(g.cells.size() == 1);
        const auto spec = resolve_spec(AttackKind::PGD, 0.1, params, p.test.dim(), cell_seed(11, AttackKind::PGD, 0.1));
        CHECK(g.cells[0].data.features == run_attack(p.model, p.test.features, p.test.labels, spec, p.bounds).adversarial);
    }
    SUBCASE("save and load round-trip bit-exactly") {
        const auto dir = testing::temp_dir("grid");
        save_grid(grid, dir);
        CHECK(std::filesystem::exists(dir / "pgd_eps0.3.csv"));
        CHECK(std::filesystem::exists(dir / "manifest.json"));
        const auto back = load_grid(dir);
        REQUIRE(back.cells.size() == grid.cells.size());
        for (std::size_t c = 0; c < grid.cells.size(); ++c) {
            CHECK(back.cells[c].data.features == grid.cells[c].data.features);
            CHECK(back.cells[c].data.labels == grid.cells[c].data.labels);
            CHECK(back.cells[c].seed == grid.cells[c].seed);
            CHECK(back.cells[c].failed == grid.cells[c].failed);
        }
        std::filesystem::remove_all(dir);
    }
    CHECK_THROWS_AS(generate_grid(p.model, p.test, std::span<const AttackKind>{}, eps, p.bounds, params, 1), ConfigError);
}
