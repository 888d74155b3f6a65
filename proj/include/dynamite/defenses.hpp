#pragma once

// The nine defenses: seven retrain the classifier, two wrap the baseline
// with an input transform. Every defense predicts through defended_predict.

#include "dynamite/common.hpp"
#include "dynamite/mlp.hpp"
#include "dynamite/tabular.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

namespace dynamite::defense {

/// Integer values are the router's class ids.
enum class DefenseKind {
    PgdAT = 0,
    InterpolatedAT = 1,
    TRADES = 2,
    FreeAT = 3,
    GaussianAugmenter = 4,
    DefensiveDistillation = 5,
    RSLAD = 6,
    FeatureSqueezing = 7,
    GaussianNoise = 8,
};

inline constexpr int kDefenseCount = 9;

inline constexpr std::array<DefenseKind, kDefenseCount> kAllDefenses{
    DefenseKind::PgdAT,          DefenseKind::InterpolatedAT,        DefenseKind::TRADES,
    DefenseKind::FreeAT,         DefenseKind::GaussianAugmenter,     DefenseKind::DefensiveDistillation,
    DefenseKind::RSLAD,          DefenseKind::FeatureSqueezing,      DefenseKind::GaussianNoise};

std::string_view to_string(DefenseKind kind);
/// Short name used in reports ("PGD-AT", "TRADES", ...).
std::string_view display_name(DefenseKind kind);
DefenseKind parse_defense_kind(std::string_view text);
constexpr int defense_id(DefenseKind kind) { return static_cast<int>(kind); }
DefenseKind defense_from_id(int id);
constexpr bool is_transform_based(DefenseKind kind) {
    return kind == DefenseKind::FeatureSqueezing || kind == DefenseKind::GaussianNoise;
}

/// Inner-attack iteration count for an RSLAD variant tag ("rslad10", "rslad100").
int rslad_variant_steps(std::string_view variant);

struct DefenseConfig {
    // Inner PGD used by the adversarial-training family.
    double at_epsilon = 0.1;
    int at_steps = 7;
    double at_step_fraction = 0.25;

    double trades_beta = 6.0;
    double mixup_alpha = 1.0;
    int free_replays = 4;
    double augment_sigma = 0.1;
    double distill_temperature = 20.0;
    std::string rslad_variant = "rslad10";
    int rslad_inner_steps = 10;
    int squeeze_bits = 4;
    double noise_sigma = 0.05;
    Seed seed = 0;

    /// Optimizer and schedule for every retrained model; the seed here is ignored.
    nn::TrainConfig train;

    void validate() const;
};

struct InputTransform {
    enum class Kind { None, Squeeze, Noise };
    Kind kind = Kind::None;
    int bits = 0;
    double sigma = 0.0;
    Seed seed = 0;
    Bounds bounds;
};

struct TrainMeta {
    Seed seed = 0;
    int epochs = 0;
    std::string config;  // JSON dump of the DefenseConfig used
};

struct DefendedModel {
    DefenseKind kind = DefenseKind::PgdAT;
    std::string variant;
    InputTransform transform;
    nn::MlpModel model;
    TrainMeta meta;
};

/// Trains (or wraps) one defense. RSLAD distils from `teacher`, which should be
/// the PGD-AT model; when null a PGD-AT teacher is trained first.
DefendedModel train_defense(DefenseKind kind, const DefenseConfig& config, const data::Dataset& train,
                            const nn::MlpModel& baseline, const Bounds& bounds,
                            const nn::MlpModel* teacher = nullptr);

/// CE(f(x), y) + beta * mean KL(p(x) || p(x_adv)).
double trades_loss(const nn::MlpModel& model, const Matrix& x, const Matrix& x_adv,
                   std::span<const int> y, double beta);

/// softmax(teacher(x) / T).
Matrix distill_soft_labels(const nn::MlpModel& teacher, const Matrix& x, double temperature);

Matrix one_hot(std::span<const int> labels, int classes);

/// (lambda x1 + (1 - lambda) x2, lambda y1 + (1 - lambda) y2).
std::pair<Matrix, Matrix> mixup(const Matrix& x1, const Matrix& y1, const Matrix& x2, const Matrix& y2,
                                double lambda);

/// Quantizes each feature to 2^bits - 1 levels over its bounds.
Matrix feature_squeeze(const Matrix& x, int bits, const Bounds& bounds);

/// clip(x + N(0, sigma^2)). Each row draws from a stream keyed by `seed` and
/// the row's contents, so a sample is perturbed the same way wherever it appears.
Matrix gaussian_perturb(const Matrix& x, double sigma, Seed seed, const Bounds& bounds);

Matrix apply_transform(const InputTransform& transform, const Matrix& x);

nn::Prediction defended_predict(const DefendedModel& dm, const Matrix& x);
nn::Prediction defended_predict(const DefendedModel& dm, const data::Dataset& data);

std::vector<char> serialize_defended(const DefendedModel& dm);
DefendedModel deserialize_defended(std::vector<char> bytes, const std::string& what);
void save_defended(const DefendedModel& dm, const std::filesystem::path& path);
DefendedModel load_defended(const std::filesystem::path& path);

}  // namespace dynamite::defense
