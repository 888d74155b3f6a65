#include "dynamite/mlp.hpp"

#include "dynamite/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynamite::nn {

namespace {

constexpr std::string_view kModelMagic = "DYMLP";
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void MlpModel::validate() const {
    if (dims.size() < 2) throw Error("mlp: need at least input and output dimensions");
    if (layers.size() + 1 != dims.size()) throw Error("mlp: layer count does not match dims");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.weight.rows() != dims[l + 1] || layer.weight.cols() != dims[l] ||
            layer.bias.size() != dims[l + 1]) {
            throw Error("mlp: layer " + std::to_string(l) + " shape disagrees with dims");
        }
        if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
            throw Error("mlp: layer " + std::to_string(l) + " has non-finite parameters");
        }
    }
}

bool identical(const MlpModel& a, const MlpModel& b) {
    if (a.dims != b.dims) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias) {
            return false;
        }
    }
    return true;
}

MlpModel init_mlp(std::span<const int> dims, Seed seed) {
    if (dims.size() < 2) throw Error("init_mlp: need at least two layer dimensions");
    if (std::any_of(dims.begin(), dims.end(), [](int d) { return d <= 0; })) {
        throw Error("init_mlp: layer dimensions must be positive");
    }
    MlpModel model;
    model.dims.assign(dims.begin(), dims.end());
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / dims[l]));
        DenseLayer layer{Matrix(dims[l + 1], dims[l]), Vector::Zero(dims[l + 1])};
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = gauss(rng);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

Matrix forward(const MlpModel& model, const Matrix& batch) {
    if (batch.cols() != model.input_dim()) {
        throw Error("forward: input has " + std::to_string(batch.cols()) + " features, model expects " +
                    std::to_string(model.input_dim()));
    }
    Matrix a = batch;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        Matrix z = a * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        if (l + 1 < model.layers.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a;
}

Matrix forward(const MlpModel& model, const Matrix& batch, ForwardCache& cache) {
    if (batch.cols() != model.input_dim()) {
        throw Error("forward: input has " + std::to_string(batch.cols()) + " features, model expects " +
                    std::to_string(model.input_dim()));
    }
    cache.activations.clear();
    cache.activations.reserve(model.layers.size() + 1);
    cache.activations.push_back(batch);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        Matrix z = cache.activations.back() * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        if (l + 1 < model.layers.size()) z = z.cwiseMax(0.0);
        cache.activations.push_back(std::move(z));
    }
    return cache.activations.back();
}

Gradients Gradients::zeros_like(const MlpModel& model) {
    Gradients g;
    for (const auto& layer : model.layers) {
        g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        g.bias.push_back(Vector::Zero(layer.bias.size()));
    }
    return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
    for (std::size_t l = 0; l < weight.size(); ++l) {
        weight[l] += other.weight[l];
        bias[l] += other.bias[l];
    }
    if (other.input.size() > 0) {
        if (input.size() == 0) input = other.input;
        else input += other.input;
    }
    return *this;
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits,
                   bool want_input) {
    const auto n_layers = model.layers.size();
    Gradients g;
    g.weight.resize(n_layers);
    g.bias.resize(n_layers);
    Matrix delta = dlogits;
    for (std::size_t l = n_layers; l-- > 0;) {
        const auto& a_in = cache.activations[l];
        g.weight[l] = delta.transpose() * a_in;
        g.bias[l] = delta.colwise().sum().transpose();
        if (l == 0 && !want_input) break;
        Matrix da = delta * model.layers[l].weight;
        if (l > 0) {
            // ReLU subgradient at 0 is 0.
            da = da.cwiseProduct((a_in.array() > 0.0).cast<double>().matrix());
        }
        delta = std::move(da);
    }
    if (want_input) g.input = std::move(delta);
    return g;
}

Matrix log_softmax(const Matrix& logits, double temperature) {
    Matrix scaled = logits / temperature;
    const Vector row_max = scaled.rowwise().maxCoeff();
    scaled.colwise() -= row_max;
    const Vector lse = scaled.array().exp().rowwise().sum().log().matrix();
    scaled.colwise() -= lse;
    return scaled;
}

Matrix softmax(const Matrix& logits, double temperature) {
    return log_softmax(logits, temperature).array().exp().matrix();
}

LossResult loss_ce(const Matrix& logits, std::span<const int> labels) {
    const auto m = logits.rows();
    const Matrix logp = log_softmax(logits);
    LossResult out;
    out.dlogits = logp.array().exp().matrix();
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        total -= logp(i, y);
        out.dlogits(i, y) -= 1.0;
    }
    out.loss = total / static_cast<double>(m);
    out.dlogits /= static_cast<double>(m);
    return out;
}

LossResult loss_soft_ce(const Matrix& logits, const Matrix& targets, double temperature) {
    const auto m = static_cast<double>(logits.rows());
    const Matrix logp = log_softmax(logits, temperature);
    LossResult out;
    out.loss = -(targets.cwiseProduct(logp)).sum() / m;
    // d/dz of -sum t log softmax(z/T) = (softmax(z/T) * sum(t) - t) / T
    const Vector mass = targets.rowwise().sum();
    Matrix p = logp.array().exp().matrix();
    out.dlogits = (p.array().colwise() * mass.array()).matrix() - targets;
    out.dlogits /= temperature * m;
    return out;
}

Vector kl_rows(const Matrix& p, const Matrix& q) {
    constexpr double kFloor = 1e-12;
    Vector out(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double kl = 0.0;
        for (Eigen::Index k = 0; k < p.cols(); ++k) {
            const double pk = p(i, k);
            if (pk <= 0.0) continue;
            kl += pk * (std::log(std::max(pk, kFloor)) - std::log(std::max(q(i, k), kFloor)));
        }
        out(i) = kl;
    }
    return out;
}

Vector per_sample_ce(const Matrix& logits, std::span<const int> labels) {
    const Matrix logp = log_softmax(logits);
    Vector out(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out(i) = -logp(i, labels[static_cast<std::size_t>(i)]);
    return out;
}

Matrix input_gradients(const MlpModel& model, const Matrix& x, std::span<const int> labels) {
    ForwardCache cache;
    const Matrix logits = forward(model, x, cache);
    Matrix dlogits = softmax(logits);
    for (Eigen::Index i = 0; i < x.rows(); ++i) dlogits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    return backward(model, cache, dlogits, true).input;
}

RowVector input_gradient(const MlpModel& model, const RowVector& x, int label) {
    const Matrix batch = x;
    const int labels[] = {label};
    return input_gradients(model, batch, labels).row(0);
}

Prediction predict(const MlpModel& model, const Matrix& x) {
    const Matrix logits = forward(model, x);
    Prediction out;
    out.probs = softmax(logits);
    out.labels.resize(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.labels[static_cast<std::size_t>(i)] = argmax(logits.row(i));
    return out;
}

Prediction predict(const MlpModel& model, const data::Dataset& data) {
    return predict(model, data.features);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning_rate must be a finite non-negative number");
    }
    if (optimizer == OptimizerKind::Adam &&
        !(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps_num > 0.0)) {
        throw ConfigError("train: invalid Adam parameters");
    }
}

Optimizer::Optimizer(const MlpModel& model, const TrainConfig& config) : config_(config) {
    if (config_.optimizer == OptimizerKind::Adam) {
        for (const auto& layer : model.layers) {
            m_w_.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
            v_w_.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
            m_b_.push_back(Vector::Zero(layer.bias.size()));
            v_b_.push_back(Vector::Zero(layer.bias.size()));
        }
    }
}

void Optimizer::step(MlpModel& model, const Gradients& grads) {
    const double lr = config_.learning_rate;
    if (config_.optimizer == OptimizerKind::Sgd) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            model.layers[l].weight -= lr * grads.weight[l];
            model.layers[l].bias -= lr * grads.bias[l];
        }
        return;
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.eps_num;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        update(model.layers[l].weight, m_w_[l], v_w_[l], grads.weight[l]);
        update(model.layers[l].bias, m_b_[l], v_b_[l], grads.bias[l]);
    }
}

TrainResult train_loop(MlpModel model, const data::Dataset& train, const TrainConfig& config,
                       const BatchStep& step, std::string_view tag) {
    config.validate();
    model.validate();
    if (train.size() == 0) throw Error(std::string(tag) + ": empty training set");
    if (static_cast<int>(train.dim()) != model.input_dim()) {
        throw Error(std::string(tag) + ": dataset has " + std::to_string(train.dim()) +
                    " features, model expects " + std::to_string(model.input_dim()));
    }
    Optimizer opt(model, config);
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const auto d = train.features.cols();

    TrainResult result;
    Matrix xb;
    std::vector<int> yb;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const auto count = std::min(batch, order.size() - start);
            xb.resize(static_cast<Eigen::Index>(count), d);
            yb.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                xb.row(static_cast<Eigen::Index>(i)) = train.features.row(static_cast<Eigen::Index>(order[start + i]));
                yb[i] = train.labels[order[start + i]];
            }
            const double loss = step(model, opt, xb, yb, rng);
            if (!std::isfinite(loss)) {
                throw Error(std::string(tag) + ": non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch starting at " + std::to_string(start));
            }
            epoch_loss += loss * static_cast<double>(count);
        }
        result.history.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    result.model = std::move(model);
    return result;
}

TrainResult train(MlpModel model, const data::Dataset& train, const TrainConfig& config) {
    auto step = [](MlpModel& m, Optimizer& opt, const Matrix& x, std::span<const int> y,
                   std::mt19937_64&) {
        ForwardCache cache;
        const auto loss = loss_ce(forward(m, x, cache), y);
        opt.step(m, backward(m, cache, loss.dlogits, false));
        return loss.loss;
    };
    return train_loop(std::move(model), train, config, step, "train");
}

std::vector<char> serialize_model(const MlpModel& model) {
    model.validate();
    io::BinaryWriter w(kModelMagic, kModelVersion);
    w.put(static_cast<std::uint32_t>(model.dims.size()));
    for (int d : model.dims) w.put(static_cast<std::int32_t>(d));
    for (const auto& layer : model.layers) {
        w.put_doubles(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        w.put_doubles(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
    return w.bytes();
}

MlpModel deserialize_model(std::vector<char> bytes, const std::string& what) {
    io::BinaryReader r(std::move(bytes), kModelMagic, kModelVersion, what);
    MlpModel model;
    const auto n = r.get<std::uint32_t>();
    if (n < 2 || n > 64) throw ArtifactError(what + ": corrupt layer count");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto d = r.get<std::int32_t>();
        if (d <= 0 || d > (1 << 20)) throw ArtifactError(what + ": corrupt layer dimension");
        model.dims.push_back(d);
    }
    for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
        DenseLayer layer{Matrix(model.dims[l + 1], model.dims[l]), Vector(model.dims[l + 1])};
        r.get_doubles(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        r.get_doubles(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
        model.layers.push_back(std::move(layer));
    }
    r.expect_end();
    try {
        model.validate();
    } catch (const Error& e) {
        throw ArtifactError(what + ": " + e.what());
    }
    return model;
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize_model(model);
    io::write_file(path, std::string_view(bytes.data(), bytes.size()));
}

MlpModel load_model(const std::filesystem::path& path) {
    return deserialize_model(io::read_file(path), path.string());
}

}  // namespace dynamite::nn
