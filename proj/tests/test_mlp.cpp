#include "dynamite/mlp.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace dynamite;
using namespace dynamite::nn;

namespace {

// Logits (0, w.x) for a two-class logistic model.
MlpModel logistic_model(double w0, double w1) {
    MlpModel m;
    m.dims = {2, 2};
    DenseLayer layer{Matrix::Zero(2, 2), Vector::Zero(2)};
    layer.weight(1, 0) = w0;
    layer.weight(1, 1) = w1;
    m.layers.push_back(layer);
    return m;
}

double mean_ce(const MlpModel& m, const Matrix& x, std::span<const int> y) {
    return loss_ce(forward(m, x), y).loss;
}

double rel_l2(const Matrix& a, const Matrix& b) {
    const double denom = std::max(a.norm(), b.norm());
    return denom == 0.0 ? 0.0 : (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("init_mlp shapes and determinism") {
    const std::vector<int> dims{4, 8, 2};
    const auto a = init_mlp(dims, 3);
    REQUIRE(a.layers.size() == 2);
    CHECK(a.layers[0].weight.rows() == 8);
    CHECK(a.layers[0].weight.cols() == 4);
    CHECK(a.layers[1].weight.rows() == 2);
    CHECK(a.layers[1].weight.cols() == 8);
    CHECK(a.layers[0].bias.isZero());
    CHECK(identical(a, init_mlp(dims, 3)));
    CHECK_FALSE(identical(a, init_mlp(dims, 4)));
    const std::vector<int> too_short{4};
    CHECK_THROWS_AS(init_mlp(too_short, 1), Error);
}

TEST_CASE("forward on hand-built models") {
    MlpModel m;
    m.dims = {2, 1};
    m.layers.push_back({Matrix{{1.0, -1.0}}, Vector::Zero(1)});
    const Matrix x{{2.0, 3.0}};
    CHECK(forward(m, x)(0, 0) == -1.0);

    m.layers[0].weight.setZero();
    std::mt19937_64 rng(1);
    const Matrix batch = testing::random_matrix(7, 2, rng);
    const Matrix logits = forward(m, batch);
    CHECK(logits.rows() == 7);
    CHECK(logits.isZero());

    CHECK_THROWS_AS(forward(m, Matrix::Zero(1, 3)), Error);
}

TEST_CASE("cross-entropy values and gradient") {
    const int y0[] = {0};
    auto r = loss_ce(Matrix{{0.0, 0.0}}, y0);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.dlogits(0, 0) == doctest::Approx(-0.5));
    CHECK(r.dlogits(0, 1) == doctest::Approx(0.5));

    r = loss_ce(Matrix{{1000.0, 0.0}}, y0);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("input_gradient matches the closed-form logistic gradient") {
    const auto m = logistic_model(2.0, -1.0);
    const RowVector g = input_gradient(m, RowVector::Zero(2), 1);
    CHECK(g(0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(g(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("dead ReLU network has zero input gradient") {
    MlpModel m;
    m.dims = {3, 4, 2};
    m.layers.push_back({Matrix::Ones(4, 3), Vector::Constant(4, -100.0)});
    m.layers.push_back({Matrix::Ones(2, 4), Vector::Zero(2)});
    const RowVector g = input_gradient(m, RowVector::Ones(3), 0);
    CHECK(g.isZero());
}

TEST_CASE("analytic gradients agree with central differences") {
    std::mt19937_64 rng(42);
    const double h = 1e-4;
    const std::vector<int> dims{8, 16, 3};
    for (int trial = 0; trial < 10; ++trial) {
        auto model = init_mlp(dims, rng());
        for (auto& layer : model.layers) layer.bias = testing::random_matrix(layer.bias.size(), 1, rng, 0.1);
        const Matrix x = testing::random_matrix(4, 8, rng);
        const std::vector<int> y{0, 1, 2, 1};

        ForwardCache cache;
        const auto loss = loss_ce(forward(model, x, cache), y);
        const auto grads = backward(model, cache, loss.dlogits, true);

        Matrix fd_input(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            Matrix xp = x, xm = x;
            xp.data()[i] += h;
            xm.data()[i] -= h;
            fd_input.data()[i] = (mean_ce(model, xp, y) - mean_ce(model, xm, y)) / (2 * h);
        }
        CHECK(rel_l2(grads.input, fd_input) < 1e-4);

        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            Matrix fd_w(model.layers[l].weight.rows(), model.layers[l].weight.cols());
            for (Eigen::Index i = 0; i < fd_w.size(); ++i) {
                auto plus = model, minus = model;
                plus.layers[l].weight.data()[i] += h;
                minus.layers[l].weight.data()[i] -= h;
                fd_w.data()[i] = (mean_ce(plus, x, y) - mean_ce(minus, x, y)) / (2 * h);
            }
            CHECK(rel_l2(grads.weight[l], fd_w) < 1e-4);
            Matrix fd_b(model.layers[l].bias.size(), 1);
            for (Eigen::Index i = 0; i < fd_b.size(); ++i) {
                auto plus = model, minus = model;
                plus.layers[l].bias(i) += h;
                minus.layers[l].bias(i) -= h;
                fd_b(i, 0) = (mean_ce(plus, x, y) - mean_ce(minus, x, y)) / (2 * h);
            }
            CHECK(rel_l2(Matrix(grads.bias[l]), fd_b) < 1e-4);
        }
    }
}

TEST_CASE("soft cross-entropy gradient agrees with central differences") {
    std::mt19937_64 rng(8);
    const Matrix logits = testing::random_matrix(3, 4, rng);
    Matrix targets = softmax(testing::random_matrix(3, 4, rng));
    const double t = 2.5;
    const auto r = loss_soft_ce(logits, targets, t);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        Matrix p = logits, m = logits;
        p.data()[i] += 1e-5;
        m.data()[i] -= 1e-5;
        const double fd = (loss_soft_ce(p, targets, t).loss - loss_soft_ce(m, targets, t).loss) / 2e-5;
        CHECK(r.dlogits.data()[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("predict: argmax, ties, normalization") {
    MlpModel m;
    m.dims = {2, 2};
    m.layers.push_back({Matrix::Identity(2, 2), Vector::Zero(2)});
    const auto p = predict(m, Matrix{{3.0, 1.0}, {2.0, 2.0}, {-1.0, 4.0}});
    CHECK(p.labels == std::vector<int>{0, 0, 1});
    for (Eigen::Index i = 0; i < p.probs.rows(); ++i) CHECK(std::abs(p.probs.row(i).sum() - 1.0) < 1e-9);
    std::mt19937_64 rng(2);
    const auto big = init_mlp(std::vector<int>{5, 7, 4}, 9);
    const auto q = predict(big, testing::random_matrix(50, 5, rng, 10.0));
    for (Eigen::Index i = 0; i < q.probs.rows(); ++i) {
        CHECK(std::abs(q.probs.row(i).sum() - 1.0) < 1e-9);
        CHECK(q.probs.row(i).minCoeff() >= 0.0);
    }
}

TEST_CASE("training on separable synthetic data") {
    const auto raw = data::synth_generate({1000, 10, 2, 2, 4.0, 1.0, 7});
    const auto ds = data::apply_preprocessor(data::fit_preprocessor(raw), raw);
    const std::vector<int> dims{static_cast<int>(ds.dim()), 128, 64, 2};
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 5;

    const auto run = train(init_mlp(dims, 1), ds, cfg);
    CHECK(run.history.size() == 20);
    const auto pred = predict(run.model, ds);
    int correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += pred.labels[i] == ds.labels[i];
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) >= 0.98);

    SUBCASE("deterministic") {
        const auto again = train(init_mlp(dims, 1), ds, cfg);
        CHECK(identical(run.model, again.model));
        CHECK(run.history == again.history);
    }
    SUBCASE("zero learning rate leaves parameters unchanged") {
        auto still = cfg;
        still.learning_rate = 0.0;
        still.epochs = 3;
        const auto init = init_mlp(dims, 1);
        const auto r = train(init, ds, still);
        CHECK(identical(init, r.model));
        CHECK(r.history[0] == r.history[2]);
    }
    SUBCASE("non-finite loss aborts with a diagnostic") {
        // A step whose inputs overflow produces a non-finite loss.
        auto step = [](MlpModel& m, Optimizer&, const Matrix& x, std::span<const int> y, std::mt19937_64&) {
            return loss_ce(forward(m, x * std::numeric_limits<double>::infinity()), y).loss;
        };
        const auto model = init_mlp(dims, 1);
        CHECK_THROWS_WITH_AS(train_loop(model, ds, cfg, step, "probe"), doctest::Contains("probe"), Error);
    }
}

TEST_CASE("model files round-trip and reject corruption") {
    const auto dir = testing::temp_dir("mlp");
    const auto model = init_mlp(std::vector<int>{6, 9, 3}, 77);
    save_model(model, dir / "m.bin");
    const auto back = load_model(dir / "m.bin");
    CHECK(identical(model, back));
    std::mt19937_64 rng(0);
    const Matrix x = testing::random_matrix(5, 6, rng);
    CHECK(forward(model, x) == forward(back, x));

    auto bytes = serialize_model(model);
    SUBCASE("truncated") {
        bytes.resize(bytes.size() - 5);
        CHECK_THROWS_AS(deserialize_model(bytes, "t"), ArtifactError);
    }
    SUBCASE("version mismatch names both versions") {
        bytes[8] = 9;
        CHECK_THROWS_WITH_AS(deserialize_model(bytes, "t"),
                             doctest::Contains("version 9 does not match supported version 1"),
                             ArtifactError);
    }
    std::filesystem::remove_all(dir);
}
