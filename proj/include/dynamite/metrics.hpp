#pragma once

#include <span>
#include <vector>

namespace dynamite::metrics {

/// Per-class F1 = 2TP / (2TP + FP + FN); a class absent from both labels and
/// predictions scores 0.
std::vector<double> per_class_f1(std::span<const int> preds, std::span<const int> labels, int classes);

/// Unweighted mean of per_class_f1 over all `classes`.
double macro_f1(std::span<const int> preds, std::span<const int> labels, int classes);

double accuracy(std::span<const int> preds, std::span<const int> labels);

}  // namespace dynamite::metrics
