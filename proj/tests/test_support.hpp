#pragma once

// Shared fixtures for the unit tests. The helpers here are deliberately
// independent of the library's training and scoring code.

#include "dynamite/common.hpp"
#include "dynamite/tabular.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() /
               ("dynamite_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Multinomial logistic regression fitted by full-batch gradient descent;
/// returns accuracy of the fitted model on `eval`.
inline double logistic_accuracy(const dynamite::data::Dataset& fit, const dynamite::data::Dataset& eval,
                                int iterations = 500, double lr = 0.5) {
    const auto d = fit.features.cols();
    const int c = fit.n_classes;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d + 1, c);
    const auto n = fit.features.rows();
    Eigen::MatrixXd x(n, d + 1);
    x << fit.features, Eigen::VectorXd::Ones(n);
    for (int it = 0; it < iterations; ++it) {
        Eigen::MatrixXd z = x * w;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = z.row(i).maxCoeff();
            z.row(i) = (z.row(i).array() - mx).exp();
            z.row(i) /= z.row(i).sum();
            z(i, fit.labels[static_cast<std::size_t>(i)]) -= 1.0;
        }
        w -= lr * x.transpose() * z / static_cast<double>(n);
    }
    const auto m = eval.features.rows();
    Eigen::MatrixXd xe(m, d + 1);
    xe << eval.features, Eigen::VectorXd::Ones(m);
    const Eigen::MatrixXd scores = xe * w;
    int correct = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::Index best;
        scores.row(i).maxCoeff(&best);
        if (best == eval.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(m);
}

inline dynamite::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                      double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    dynamite::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

}  // namespace testing
