#pragma once

// Small ReLU feedforward classifier with analytic gradients for both the
// parameters and the input, and a seeded minibatch training loop.

#include "dynamite/common.hpp"
#include "dynamite/tabular.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace dynamite::nn {

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

/// ReLU on hidden layers, identity on the output layer (logits).
struct MlpModel {
    std::vector<int> dims;  // (d, h1, ..., C)
    std::vector<DenseLayer> layers;

    [[nodiscard]] int input_dim() const { return dims.front(); }
    [[nodiscard]] int n_classes() const { return dims.back(); }
    void validate() const;
};

bool identical(const MlpModel& a, const MlpModel& b);

/// He-scaled Gaussian weights, zero biases.
MlpModel init_mlp(std::span<const int> dims, Seed seed);

/// Post-activation outputs of every layer; activations.front() is the input,
/// activations.back() the logits.
struct ForwardCache {
    std::vector<Matrix> activations;
};

Matrix forward(const MlpModel& model, const Matrix& batch);
Matrix forward(const MlpModel& model, const Matrix& batch, ForwardCache& cache);

struct Gradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;
    Matrix input;

    static Gradients zeros_like(const MlpModel& model);
    Gradients& operator+=(const Gradients& other);
};

/// Backpropagates dL/dlogits through the cached pass.
Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits,
                   bool want_input = true);

struct LossResult {
    double loss = 0.0;
    Matrix dlogits;
};

Matrix log_softmax(const Matrix& logits, double temperature = 1.0);
Matrix softmax(const Matrix& logits, double temperature = 1.0);

/// Mean cross-entropy over the batch and its gradient (softmax - onehot) / m.
LossResult loss_ce(const Matrix& logits, std::span<const int> labels);

/// Mean of -sum_k target_k * log softmax(logits / T)_k, gradient w.r.t. logits.
LossResult loss_soft_ce(const Matrix& logits, const Matrix& targets, double temperature = 1.0);

/// Row-wise KL(p || q) for probability rows, with 1e-12 flooring inside logs.
Vector kl_rows(const Matrix& p, const Matrix& q);

/// Gradient of the per-sample cross-entropy w.r.t. each input row.
Matrix input_gradients(const MlpModel& model, const Matrix& x, std::span<const int> labels);

/// Gradient of CE(f(x), y) w.r.t. a single input.
RowVector input_gradient(const MlpModel& model, const RowVector& x, int label);

/// Per-sample cross-entropy.
Vector per_sample_ce(const Matrix& logits, std::span<const int> labels);

struct Prediction {
    std::vector<int> labels;  // argmax, ties to the lowest class
    Matrix probs;
};

Prediction predict(const MlpModel& model, const Matrix& x);
Prediction predict(const MlpModel& model, const data::Dataset& data);

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
    int epochs = 30;
    int batch_size = 128;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_num = 1e-8;
    Seed seed = 0;
    bool shuffle = true;

    void validate() const;
};

/// SGD or Adam over every layer's weights and biases.
class Optimizer {
public:
    Optimizer(const MlpModel& model, const TrainConfig& config);
    void step(MlpModel& model, const Gradients& grads);

private:
    TrainConfig config_;
    std::vector<Matrix> m_w_, v_w_;
    std::vector<Vector> m_b_, v_b_;
    long t_ = 0;
};

struct TrainResult {
    MlpModel model;
    std::vector<double> history;  // mean loss per epoch
};

/// One minibatch of work: update `model` through `opt` and return the batch loss.
using BatchStep = std::function<double(MlpModel& model, Optimizer& opt, const Matrix& x,
                                       std::span<const int> y, std::mt19937_64& rng)>;

/// Seeded epoch/minibatch driver shared by every training procedure. Aborts
/// with a diagnostic naming `tag` on a non-finite loss.
TrainResult train_loop(MlpModel model, const data::Dataset& train, const TrainConfig& config,
                       const BatchStep& step, std::string_view tag);

/// Plain cross-entropy training.
TrainResult train(MlpModel model, const data::Dataset& train, const TrainConfig& config);

std::vector<char> serialize_model(const MlpModel& model);
MlpModel deserialize_model(std::vector<char> bytes, const std::string& what);
void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace dynamite::nn
