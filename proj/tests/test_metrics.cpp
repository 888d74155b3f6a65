#include "dynamite/metrics.hpp"

#include "dynamite/common.hpp"

#include <doctest.h>

#include <random>
#include <vector>

using namespace dynamite::metrics;

namespace {

// Confusion-matrix route: precision and recall per class, then the harmonic mean.
double confusion_macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int classes) {
    std::vector<std::vector<int>> cm(static_cast<std::size_t>(classes), std::vector<int>(static_cast<std::size_t>(classes), 0));
    for (std::size_t i = 0; i < preds.size(); ++i) ++cm[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    double total = 0.0;
    for (int c = 0; c < classes; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        int predicted = 0, actual = 0;
        for (int k = 0; k < classes; ++k) {
            predicted += cm[static_cast<std::size_t>(k)][uc];
            actual += cm[uc][static_cast<std::size_t>(k)];
        }
        const double tp = cm[uc][uc];
        if (tp == 0.0) continue;
        const double precision = tp / predicted;
        const double recall = tp / actual;
        total += 2.0 * precision * recall / (precision + recall);
    }
    return total / classes;
}

}  // namespace

TEST_CASE("macro_f1 hand-computed cases") {
    const std::vector<int> labels{0, 0, 1, 1};
    CHECK(macro_f1(labels, labels, 2) == 1.0);
    const std::vector<int> preds{0, 1, 1, 1};
    CHECK(macro_f1(preds, labels, 2) == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0).epsilon(1e-15));
    const auto f1 = per_class_f1(preds, labels, 2);
    CHECK(f1[0] == doctest::Approx(2.0 / 3.0));
    CHECK(f1[1] == doctest::Approx(0.8));

    const std::vector<int> constant{1, 1, 1, 1};
    CHECK(macro_f1(constant, labels, 2) == doctest::Approx(confusion_macro_f1(constant, labels, 2)));
    CHECK(macro_f1(constant, labels, 2) == doctest::Approx(1.0 / 3.0));

    // Class 2 is absent from both sides and counts as zero.
    CHECK(macro_f1(labels, labels, 3) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("macro_f1 agrees with a confusion-matrix implementation") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int classes = 2 + static_cast<int>(rng() % 5);
        const std::size_t n = 1 + rng() % 60;
        std::vector<int> preds(n), labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = static_cast<int>(rng() % static_cast<unsigned>(classes));
            labels[i] = static_cast<int>(rng() % static_cast<unsigned>(classes));
        }
        CHECK(macro_f1(preds, labels, classes) == doctest::Approx(confusion_macro_f1(preds, labels, classes)).epsilon(1e-12));
    }
}

TEST_CASE("macro_f1 input contract") {
    const std::vector<int> empty;
    CHECK_THROWS_AS(macro_f1(empty, empty, 2), dynamite::Error);
    const std::vector<int> a{0, 1}, b{0};
    CHECK_THROWS_AS(macro_f1(a, b, 2), dynamite::Error);
    const std::vector<int> bad{0, 2};
    CHECK_THROWS_AS(macro_f1(bad, a, 2), dynamite::Error);
    CHECK(accuracy(a, a) == 1.0);
}
