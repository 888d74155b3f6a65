#include "dynamite/metrics.hpp"

#include "dynamite/common.hpp"

#include <numeric>
#include <string>

namespace dynamite::metrics {

namespace {

void check(std::span<const int> preds, std::span<const int> labels, int classes) {
    if (preds.empty()) throw Error("macro_f1: empty input");
    if (preds.size() != labels.size()) throw Error("macro_f1: prediction and label counts differ");
    if (classes < 1) throw Error("macro_f1: need at least one class");
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes || preds[i] < 0 || preds[i] >= classes) {
            throw Error("macro_f1: class index out of range at sample " + std::to_string(i));
        }
    }
}

}  // namespace

std::vector<double> per_class_f1(std::span<const int> preds, std::span<const int> labels, int classes) {
    check(preds, labels, classes);
    std::vector<long> tp(static_cast<std::size_t>(classes), 0), fp(tp), fn(tp);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto p = static_cast<std::size_t>(preds[i]);
        const auto y = static_cast<std::size_t>(labels[i]);
        if (p == y) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    std::vector<double> f1(static_cast<std::size_t>(classes), 0.0);
    for (std::size_t c = 0; c < f1.size(); ++c) {
        const long denom = 2 * tp[c] + fp[c] + fn[c];
        if (denom > 0) f1[c] = 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    return f1;
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, int classes) {
    const auto f1 = per_class_f1(preds, labels, classes);
    return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(classes);
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    if (preds.empty() || preds.size() != labels.size()) throw Error("accuracy: bad input sizes");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

}  // namespace dynamite::metrics
