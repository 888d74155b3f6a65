#pragma once

// Gradient-boosted regression trees with a softmax objective: each round fits
// one tree per class to the first and second derivatives of the log-loss.

#include "dynamite/common.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace dynamite::gbt {

struct GbtConfig {
    int rounds = 60;
    double learning_rate = 0.2;
    int max_depth = 5;
    int min_samples_leaf = 5;
    double subsample = 0.8;  // fraction of rows drawn without replacement per round
    double lambda = 1.0;     // L2 penalty on leaf weights
    Seed seed = 0;

    void validate() const;
};

/// Internal nodes send x[feature] <= threshold to `left`.
struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output, already scaled by the learning rate

    [[nodiscard]] bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<Node> nodes;  // nodes[0] is the root

    [[nodiscard]] double predict(const double* x) const;
    [[nodiscard]] int depth() const;
};

/// Every tree padded to a perfect binary tree of one common depth and laid
/// out heap-style, so inference is a fixed number of branch-free steps.
struct FlatForest {
    struct Split {
        double threshold;
        std::int64_t feature;
    };
    int depth = -1;  // -1: not built
    std::vector<Split> splits;
    std::vector<double> leaf;
};

struct GbtModel {
    int n_features = 0;
    int n_classes = 0;
    std::vector<std::vector<Tree>> rounds;  // rounds[r][class]
    FlatForest flat;                        // derived from `rounds` by compile()

    /// Raw class scores: sum of leaf outputs, starting from a uniform prior of 0.
    [[nodiscard]] Vector scores(const RowVector& x) const;
    [[nodiscard]] Vector scores(const double* x) const;
    /// Argmax of scores; ties go to the lowest class.
    [[nodiscard]] int predict(const RowVector& x) const;
    [[nodiscard]] int predict(const double* x) const;
    [[nodiscard]] std::vector<int> predict_rows(const Matrix& x) const;
    /// Builds `flat`; train() and deserialize() call it. Very deep models
    /// stay on the tree walk.
    void compile();
    void validate() const;
};

GbtModel train(const Matrix& x, std::span<const int> labels, int n_classes, const GbtConfig& config,
               unsigned threads = 1);

std::vector<char> serialize(const GbtModel& model);
GbtModel deserialize(std::vector<char> bytes, const std::string& what);
void save(const GbtModel& model, const std::filesystem::path& path);
GbtModel load(const std::filesystem::path& path);

}  // namespace dynamite::gbt
