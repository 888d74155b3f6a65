#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynamite {

// Samples are rows.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Seed = std::uint64_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, corrupt, or hash-mismatched artifact (CLI exit code 3).
class ArtifactError : public Error {
public:
    using Error::Error;
};

/// A checked property of the results did not hold (CLI exit code 4).
class InvariantError : public Error {
public:
    using Error::Error;
};

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent child seed; order of arguments matters.
constexpr Seed derive_seed(Seed parent, std::uint64_t tag) {
    return mix64(mix64(parent) ^ (tag * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL));
}

Seed derive_seed(Seed parent, std::string_view tag);

/// Per-feature box describing the valid input domain.
struct Bounds {
    Vector lo;
    Vector hi;

    [[nodiscard]] Eigen::Index dim() const { return lo.size(); }
    [[nodiscard]] bool contains(const RowVector& x, double tol = 0.0) const;
    void clip(Eigen::Ref<RowVector> x) const;
    void clip_rows(Matrix& x) const;
};

/// Index of the largest entry; ties go to the lowest index.
template <typename Row>
int argmax(const Row& row) {
    int best = 0;
    for (Eigen::Index k = 1; k < row.size(); ++k) {
        if (row(k) > row(best)) best = static_cast<int>(k);
    }
    return best;
}

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double value);

}  // namespace dynamite
