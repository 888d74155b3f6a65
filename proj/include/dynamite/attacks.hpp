#pragma once

// Evasion attacks against an MlpModel in standardized feature space, and the
// (attack kind x epsilon) grid of perturbed test sets built from them.

#include "dynamite/common.hpp"
#include "dynamite/mlp.hpp"
#include "dynamite/tabular.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dynamite::attacks {

enum class AttackKind { FGSM, BIM, PGD, AutoPGD, DeepFool, ZOO };

inline constexpr std::array<AttackKind, 6> kAllAttacks{AttackKind::FGSM,    AttackKind::BIM,
                                                      AttackKind::PGD,     AttackKind::AutoPGD,
                                                      AttackKind::DeepFool, AttackKind::ZOO};

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view text);

/// True for attacks whose output stays inside the epsilon ball.
constexpr bool is_budgeted(AttackKind kind) { return kind != AttackKind::DeepFool; }

/// Knobs that are not the epsilon itself. Step sizes are fractions of epsilon.
struct AttackParams {
    int iterative_steps = 10;          // BIM, PGD
    double step_fraction = 0.25;       // BIM, PGD: alpha = fraction * epsilon
    int autopgd_steps = 20;
    int deepfool_max_iter = 50;
    int zoo_iters = 40;
    double zoo_delta = 1e-3;
    int zoo_coords = 16;               // capped at the feature count
    double zoo_step_fraction = 0.25;   // ZOO coordinate step = fraction * epsilon

    void validate() const;
};

/// Fully resolved settings for one attack run. For DeepFool, `epsilon` is the
/// overshoot and `steps` the iteration cap.
struct AttackSpec {
    AttackKind kind = AttackKind::FGSM;
    double epsilon = 0.0;
    int steps = 1;
    double step_size = 0.0;
    double zoo_delta = 1e-3;
    int zoo_coords = 1;
    Seed seed = 0;

    void validate() const;
};

AttackSpec resolve_spec(AttackKind kind, double epsilon, const AttackParams& params,
                        std::size_t feature_count, Seed seed);

/// Box clip followed by a clip into the L-inf ball of radius eps around `origin`.
void project(Matrix& x, const Matrix& origin, double eps, const Bounds& bounds);

Matrix fgsm(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
            const Bounds& bounds);

Matrix bim(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
           int steps, double alpha, const Bounds& bounds);

/// BIM from a seeded uniform random start; sample i draws from derive_seed(seed, i).
Matrix pgd(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
           int steps, double alpha, const Bounds& bounds, Seed seed);

/// Per-sample losses of the iterates at each step-size checkpoint.
struct AutoPgdTrace {
    std::vector<int> checkpoints;
    std::vector<Vector> checkpoint_losses;
    Vector final_losses;
};

/// Momentum PGD with step size 2*eps halved at checkpoints when progress
/// stalls; returns the best-loss iterate per sample.
Matrix auto_pgd(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
                int steps, const Bounds& bounds, Seed seed, AutoPgdTrace* trace = nullptr);

/// Checkpoint iteration indices for a budget of `steps`.
std::vector<int> autopgd_checkpoints(int steps);

struct DeepFoolResult {
    Matrix adversarial;               // clip(x + (1 + overshoot) * perturbation)
    Matrix perturbation;              // accumulated minimal perturbation, before overshoot
    std::vector<int> iterations;
    std::vector<std::uint8_t> flagged;  // flat model: every class gradient difference is zero
};

/// Multiclass DeepFool. Samples whose prediction already differs from `y`
/// are returned unchanged after zero iterations.
DeepFoolResult deepfool(const nn::MlpModel& model, const Matrix& x, std::span<const int> y,
                        int max_iter, double overshoot, const Bounds& bounds);

/// (f(x + delta e_i) - f(x - delta e_i)) / (2 delta).
double symmetric_difference(const std::function<double(const RowVector&)>& f, const RowVector& x,
                            Eigen::Index coord, double delta);

/// Finite-difference estimate of the cross-entropy gradient using only model
/// outputs; coordinates not listed are left at zero.
RowVector zoo_gradient_estimate(const nn::MlpModel& model, const RowVector& x, int y,
                                std::span<const Eigen::Index> coords, double delta);

/// Gradient-free coordinate-sign ascent on the cross-entropy of the model output.
Matrix zoo(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
           int iters, double delta, double step, int coords_per_iter, const Bounds& bounds,
           Seed seed);

struct AttackOutput {
    Matrix adversarial;
    std::vector<std::uint8_t> failed;
};

/// Dispatches on spec.kind.
AttackOutput run_attack(const nn::MlpModel& model, const Matrix& x, std::span<const int> y,
                        const AttackSpec& spec, const Bounds& bounds);

struct GridCell {
    AttackKind kind = AttackKind::FGSM;
    double epsilon = 0.0;
    Seed seed = 0;
    data::Dataset data;
    std::vector<std::uint8_t> failed;

    [[nodiscard]] std::string id() const;
};

struct AdversarialGrid {
    std::vector<GridCell> cells;
    std::string source_id;
    std::string model_fingerprint;

    [[nodiscard]] const GridCell* find(AttackKind kind, double epsilon) const;
};

std::string cell_id(AttackKind kind, double epsilon);

/// Per-cell seed; independent of the order in which cells are produced.
Seed cell_seed(Seed seed, AttackKind kind, double epsilon);

AdversarialGrid generate_grid(const nn::MlpModel& model, const data::Dataset& test,
                              std::span<const AttackKind> kinds, std::span<const double> epsilons,
                              const Bounds& bounds, const AttackParams& params, Seed seed,
                              unsigned threads = 1);

/// One `<kind>_eps<epsilon>.csv` per cell plus `manifest.json`.
void save_grid(const AdversarialGrid& grid, const std::filesystem::path& dir);
AdversarialGrid load_grid(const std::filesystem::path& dir);

}  // namespace dynamite::attacks
