#include "dynamite/defenses.hpp"

#include "dynamite/attacks.hpp"
#include "dynamite/io.hpp"

#include <json.hpp>

#include <cmath>
#include <random>

namespace dynamite::defense {

using nlohmann::json;

namespace {

constexpr std::string_view kDefMagic = "DYDEF";
constexpr std::uint32_t kDefVersion = 1;

struct KindNames {
    DefenseKind kind;
    std::string_view id;
    std::string_view display;
};

constexpr std::array<KindNames, kDefenseCount> kNames{{
    {DefenseKind::PgdAT, "pgd_at", "PGD-AT"},
    {DefenseKind::InterpolatedAT, "interpolated_at", "IAT"},
    {DefenseKind::TRADES, "trades", "TRADES"},
    {DefenseKind::FreeAT, "free_at", "FreeAT"},
    {DefenseKind::GaussianAugmenter, "gaussian_augmenter", "GaussAug"},
    {DefenseKind::DefensiveDistillation, "defensive_distillation", "DD"},
    {DefenseKind::RSLAD, "rslad", "RSLAD"},
    {DefenseKind::FeatureSqueezing, "feature_squeezing", "FS"},
    {DefenseKind::GaussianNoise, "gaussian_noise", "GN"},
}};

json config_json(const DefenseConfig& c) {
    return {{"at_epsilon", c.at_epsilon},
            {"at_steps", c.at_steps},
            {"at_step_fraction", c.at_step_fraction},
            {"trades_beta", c.trades_beta},
            {"mixup_alpha", c.mixup_alpha},
            {"free_replays", c.free_replays},
            {"augment_sigma", c.augment_sigma},
            {"distill_temperature", c.distill_temperature},
            {"rslad_variant", c.rslad_variant},
            {"rslad_inner_steps", c.rslad_inner_steps},
            {"squeeze_bits", c.squeeze_bits},
            {"noise_sigma", c.noise_sigma},
            {"seed", c.seed},
            {"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"learning_rate", c.train.learning_rate}};
}

nn::TrainConfig train_config(const DefenseConfig& c, std::string_view tag) {
    auto t = c.train;
    t.seed = derive_seed(c.seed, tag);
    return t;
}

nn::MlpModel fresh_model(const DefenseConfig& c, const nn::MlpModel& baseline, std::string_view tag) {
    return nn::init_mlp(baseline.dims, derive_seed(derive_seed(c.seed, tag), "init"));
}

Matrix gather_rows(const Matrix& x, const std::vector<Eigen::Index>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
    return out;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
    std::gamma_distribution<double> g(alpha, 1.0);
    const double a = g(rng);
    const double b = g(rng);
    return a + b > 0.0 ? a / (a + b) : 0.5;
}

Matrix sign_of(const Matrix& g) {
    return g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Matrix uniform_start(const Matrix& x, double eps, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-eps, eps);
    Matrix out = x;
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += u(rng);
    return out;
}

// PGD on x' maximizing KL(target || softmax f(x')).
Matrix kl_pgd(const nn::MlpModel& model, const Matrix& x, const Matrix& target, double eps, int steps,
              double alpha, const Bounds& bounds, std::mt19937_64& rng) {
    Matrix cur = uniform_start(x, eps, rng);
    attacks::project(cur, x, eps, bounds);
    for (int k = 0; k < steps; ++k) {
        nn::ForwardCache cache;
        const Matrix q = nn::softmax(nn::forward(model, cur, cache));
        const Matrix g = nn::backward(model, cache, q - target, true).input;
        cur += alpha * sign_of(g);
        attacks::project(cur, x, eps, bounds);
    }
    return cur;
}

// d/dz of mean_i KL(softmax(z_i) || q_i), holding q fixed.
Matrix kl_grad_first(const Matrix& logits_p, const Matrix& log_q) {
    const Matrix log_p = nn::log_softmax(logits_p);
    const Matrix p = log_p.array().exp();
    const Matrix a = log_p - log_q;
    const Vector kl = (p.array() * a.array()).rowwise().sum();
    Matrix g = p.array() * (a.colwise() - kl).array();
    return g / static_cast<double>(logits_p.rows());
}

using Step = nn::BatchStep;

Step pgd_at_step(const DefenseConfig& c, const Bounds& bounds) {
    return [&c, &bounds](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x, std::span<const int> y,
                         std::mt19937_64& rng) {
        const Matrix adv = attacks::pgd(m, x, y, c.at_epsilon, c.at_steps, c.at_step_fraction * c.at_epsilon,
                                        bounds, rng());
        nn::ForwardCache cache;
        const auto loss = nn::loss_ce(nn::forward(m, adv, cache), y);
        opt.step(m, nn::backward(m, cache, loss.dlogits, false));
        return loss.loss;
    };
}

Step interpolated_step(const DefenseConfig& c, const Bounds& bounds, int classes) {
    return [&c, &bounds, classes](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x, std::span<const int> y,
                                  std::mt19937_64& rng) {
        const Matrix adv = attacks::pgd(m, x, y, c.at_epsilon, c.at_steps, c.at_step_fraction * c.at_epsilon,
                                        bounds, rng());
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        const Matrix targets = one_hot(y, classes);
        const Matrix shuffled_t = gather_rows(targets, perm);

        double total = 0.0;
        auto grads = nn::Gradients::zeros_like(m);
        for (const Matrix* batch : {&x, &adv}) {
            const double lambda = sample_beta(c.mixup_alpha, rng);
            const auto [xm, ym] = mixup(*batch, targets, gather_rows(*batch, perm), shuffled_t, lambda);
            nn::ForwardCache cache;
            const auto loss = nn::loss_soft_ce(nn::forward(m, xm, cache), ym);
            grads += nn::backward(m, cache, loss.dlogits, false);
            total += loss.loss;
        }
        opt.step(m, grads);
        return total;
    };
}

Step trades_step(const DefenseConfig& c, const Bounds& bounds) {
    return [&c, &bounds](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x, std::span<const int> y,
                         std::mt19937_64& rng) {
        const Matrix p_clean = nn::softmax(nn::forward(m, x));
        const Matrix adv = kl_pgd(m, x, p_clean, c.at_epsilon, c.at_steps, c.at_step_fraction * c.at_epsilon,
                                  bounds, rng);
        nn::ForwardCache clean_cache, adv_cache;
        const Matrix z_clean = nn::forward(m, x, clean_cache);
        const Matrix z_adv = nn::forward(m, adv, adv_cache);
        const auto ce = nn::loss_ce(z_clean, y);
        const Matrix log_q = nn::log_softmax(z_adv);
        const Matrix p = nn::softmax(z_clean);
        const double n = static_cast<double>(x.rows());

        auto grads = nn::backward(m, clean_cache, ce.dlogits + c.trades_beta * kl_grad_first(z_clean, log_q), false);
        grads += nn::backward(m, adv_cache, c.trades_beta * (log_q.array().exp().matrix() - p) / n, false);
        opt.step(m, grads);
        return ce.loss + c.trades_beta * nn::kl_rows(p, nn::softmax(z_adv)).mean();
    };
}

// The perturbation persists across batches and is reset whenever a new epoch starts.
Step free_at_step(const DefenseConfig& c, const Bounds& bounds, std::size_t batches_per_epoch) {
    struct State {
        Matrix delta;
        std::size_t calls = 0;
    };
    auto state = std::make_shared<State>();
    return [&c, &bounds, state, batches_per_epoch](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x,
                                                   std::span<const int> y, std::mt19937_64&) {
        if (state->calls++ % batches_per_epoch == 0 || state->delta.cols() != x.cols()) {
            state->delta = Matrix::Zero(std::max<Eigen::Index>(x.rows(), state->delta.rows()), x.cols());
        }
        if (state->delta.rows() < x.rows()) state->delta.conservativeResize(x.rows(), Eigen::NoChange);
        auto delta = state->delta.topRows(x.rows());
        double total = 0.0;
        for (int r = 0; r < c.free_replays; ++r) {
            Matrix adv = x + delta;
            bounds.clip_rows(adv);
            nn::ForwardCache cache;
            const auto loss = nn::loss_ce(nn::forward(m, adv, cache), y);
            const auto grads = nn::backward(m, cache, loss.dlogits, true);
            opt.step(m, grads);
            delta = (delta + c.at_epsilon * sign_of(grads.input)).cwiseMax(-c.at_epsilon).cwiseMin(c.at_epsilon);
            total += loss.loss;
        }
        return total / c.free_replays;
    };
}

Step augment_step(const DefenseConfig& c) {
    return [&c](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x, std::span<const int> y,
                std::mt19937_64& rng) {
        std::normal_distribution<double> noise(0.0, c.augment_sigma);
        Matrix noisy = x;
        for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += noise(rng);
        nn::ForwardCache cache;
        const auto loss = nn::loss_ce(nn::forward(m, noisy, cache), y);
        opt.step(m, nn::backward(m, cache, loss.dlogits, false));
        return loss.loss;
    };
}

Step soft_label_step(const nn::MlpModel* teacher, double temperature, int classes) {
    return [teacher, temperature, classes](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x,
                                           std::span<const int> y, std::mt19937_64&) {
        const Matrix targets = teacher ? distill_soft_labels(*teacher, x, temperature) : one_hot(y, classes);
        nn::ForwardCache cache;
        const auto loss = nn::loss_soft_ce(nn::forward(m, x, cache), targets, temperature);
        opt.step(m, nn::backward(m, cache, loss.dlogits, false));
        return loss.loss;
    };
}

Step rslad_step(const DefenseConfig& c, const Bounds& bounds, const nn::MlpModel& teacher) {
    return [&c, &bounds, &teacher](nn::MlpModel& m, nn::Optimizer& opt, const Matrix& x, std::span<const int>,
                                   std::mt19937_64& rng) {
        const Matrix t = nn::softmax(nn::forward(teacher, x));
        const Matrix adv = kl_pgd(m, x, t, c.at_epsilon, c.rslad_inner_steps,
                                  c.at_step_fraction * c.at_epsilon, bounds, rng);
        nn::ForwardCache adv_cache, clean_cache;
        const Matrix s_adv = nn::softmax(nn::forward(m, adv, adv_cache));
        const Matrix s_clean = nn::softmax(nn::forward(m, x, clean_cache));
        const double n = static_cast<double>(x.rows());
        auto grads = nn::backward(m, adv_cache, (5.0 / 6.0) * (s_adv - t) / n, false);
        grads += nn::backward(m, clean_cache, (1.0 / 6.0) * (s_clean - t) / n, false);
        opt.step(m, grads);
        return (5.0 / 6.0) * nn::kl_rows(t, s_adv).mean() + (1.0 / 6.0) * nn::kl_rows(t, s_clean).mean();
    };
}

}  // namespace

std::string_view to_string(DefenseKind kind) {
    for (const auto& n : kNames) {
        if (n.kind == kind) return n.id;
    }
    return "unknown";
}

std::string_view display_name(DefenseKind kind) {
    for (const auto& n : kNames) {
        if (n.kind == kind) return n.display;
    }
    return "unknown";
}

DefenseKind parse_defense_kind(std::string_view text) {
    for (const auto& n : kNames) {
        if (n.id == text) return n.kind;
    }
    throw ConfigError("unknown defense kind '" + std::string(text) + "'");
}

DefenseKind defense_from_id(int id) {
    if (id < 0 || id >= kDefenseCount) throw Error("defense id " + std::to_string(id) + " out of range");
    return static_cast<DefenseKind>(id);
}

int rslad_variant_steps(std::string_view variant) {
    if (variant == "rslad10") return 10;
    if (variant == "rslad100") return 25;
    throw ConfigError("unknown RSLAD variant '" + std::string(variant) + "' (expected rslad10 or rslad100)");
}

void DefenseConfig::validate() const {
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(std::string("defense config: ") + msg);
    };
    require(at_epsilon > 0.0 && std::isfinite(at_epsilon), "at_epsilon must be > 0");
    require(at_steps >= 1, "at_steps must be >= 1");
    require(at_step_fraction > 0.0, "at_step_fraction must be > 0");
    require(trades_beta > 0.0, "trades_beta must be > 0");
    require(mixup_alpha > 0.0, "mixup_alpha must be > 0");
    require(free_replays >= 1, "free_replays must be >= 1");
    require(augment_sigma >= 0.0, "augment_sigma must be >= 0");
    require(distill_temperature > 0.0, "distill_temperature must be > 0");
    require(rslad_inner_steps >= 1, "rslad_inner_steps must be >= 1");
    require(squeeze_bits >= 1 && squeeze_bits <= 16, "squeeze_bits must be in [1, 16]");
    require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
    rslad_variant_steps(rslad_variant);
    train.validate();
}

Matrix one_hot(std::span<const int> labels, int classes) {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw Error("one_hot: label out of range");
        out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return out;
}

std::pair<Matrix, Matrix> mixup(const Matrix& x1, const Matrix& y1, const Matrix& x2, const Matrix& y2,
                                double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("mixup: lambda must be in [0, 1]");
    if (x1.rows() != x2.rows() || x1.cols() != x2.cols() || y1.rows() != y2.rows() || y1.cols() != y2.cols()) {
        throw Error("mixup: shape mismatch");
    }
    return {lambda * x1 + (1.0 - lambda) * x2, lambda * y1 + (1.0 - lambda) * y2};
}

double trades_loss(const nn::MlpModel& model, const Matrix& x, const Matrix& x_adv, std::span<const int> y,
                   double beta) {
    if (x.rows() != x_adv.rows() || x.cols() != x_adv.cols()) throw Error("trades_loss: shape mismatch");
    const Matrix z = nn::forward(model, x);
    const double ce = nn::loss_ce(z, y).loss;
    if (beta == 0.0) return ce;
    return ce + beta * nn::kl_rows(nn::softmax(z), nn::softmax(nn::forward(model, x_adv))).mean();
}

Matrix distill_soft_labels(const nn::MlpModel& teacher, const Matrix& x, double temperature) {
    if (!(temperature > 0.0)) throw Error("distill_soft_labels: temperature must be > 0");
    return nn::softmax(nn::forward(teacher, x), temperature);
}

Matrix feature_squeeze(const Matrix& x, int bits, const Bounds& bounds) {
    if (bits < 1 || bits > 16) throw ConfigError("feature_squeeze: bits must be in [1, 16]");
    if (bounds.dim() != x.cols()) throw Error("feature_squeeze: bounds dimension mismatch");
    const double levels = std::ldexp(1.0, bits) - 1.0;
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double lo = bounds.lo(j);
        const double width = bounds.hi(j) - lo;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (width <= 0.0) {
                out(i, j) = lo;
                continue;
            }
            const double u = std::clamp((x(i, j) - lo) / width, 0.0, 1.0);
            out(i, j) = lo + std::round(u * levels) / levels * width;
        }
    }
    return out;
}

Matrix gaussian_perturb(const Matrix& x, double sigma, Seed seed, const Bounds& bounds) {
    if (!(sigma >= 0.0)) throw ConfigError("gaussian_perturb: sigma must be >= 0");
    if (sigma == 0.0) return x;
    Matrix out = x;
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const std::string_view key(reinterpret_cast<const char*>(x.row(i).data()),
                                   static_cast<std::size_t>(x.cols()) * sizeof(double));
        std::mt19937_64 rng(derive_seed(seed, key));
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += noise(rng);
    }
    bounds.clip_rows(out);
    return out;
}

Matrix apply_transform(const InputTransform& t, const Matrix& x) {
    switch (t.kind) {
        case InputTransform::Kind::None: return x;
        case InputTransform::Kind::Squeeze: return feature_squeeze(x, t.bits, t.bounds);
        case InputTransform::Kind::Noise: return gaussian_perturb(x, t.sigma, t.seed, t.bounds);
    }
    return x;
}

DefendedModel train_defense(DefenseKind kind, const DefenseConfig& config, const data::Dataset& train,
                            const nn::MlpModel& baseline, const Bounds& bounds, const nn::MlpModel* teacher) {
    config.validate();
    baseline.validate();
    train.validate();
    if (train.size() == 0) throw Error("train_defense: empty training set");
    if (bounds.dim() != static_cast<Eigen::Index>(train.dim())) throw Error("train_defense: bounds dimension mismatch");

    const auto tag = std::string(to_string(kind));
    DefendedModel dm;
    dm.kind = kind;
    dm.meta.seed = derive_seed(config.seed, tag);
    dm.meta.config = config_json(config).dump();
    if (kind == DefenseKind::RSLAD) dm.variant = config.rslad_variant;

    if (is_transform_based(kind)) {
        dm.model = baseline;
        dm.transform.bounds = bounds;
        if (kind == DefenseKind::FeatureSqueezing) {
            dm.transform.kind = InputTransform::Kind::Squeeze;
            dm.transform.bits = config.squeeze_bits;
        } else {
            dm.transform.kind = InputTransform::Kind::Noise;
            dm.transform.sigma = config.noise_sigma;
            dm.transform.seed = derive_seed(dm.meta.seed, "inference");
        }
        return dm;
    }

    const int classes = baseline.n_classes();
    auto cfg = train_config(config, tag);
    dm.meta.epochs = cfg.epochs;
    auto init = fresh_model(config, baseline, tag);
    switch (kind) {
        case DefenseKind::PgdAT:
            dm.model = nn::train_loop(std::move(init), train, cfg, pgd_at_step(config, bounds), tag).model;
            break;
        case DefenseKind::InterpolatedAT:
            dm.model = nn::train_loop(std::move(init), train, cfg, interpolated_step(config, bounds, classes), tag).model;
            break;
        case DefenseKind::TRADES:
            dm.model = nn::train_loop(std::move(init), train, cfg, trades_step(config, bounds), tag).model;
            break;
        case DefenseKind::FreeAT: {
            cfg.epochs = (cfg.epochs + config.free_replays - 1) / config.free_replays;
            dm.meta.epochs = cfg.epochs;
            const auto batch = static_cast<std::size_t>(cfg.batch_size);
            const std::size_t per_epoch = (train.size() + batch - 1) / batch;
            dm.model = nn::train_loop(std::move(init), train, cfg, free_at_step(config, bounds, per_epoch), tag).model;
            break;
        }
        case DefenseKind::GaussianAugmenter:
            dm.model = nn::train_loop(std::move(init), train, cfg, augment_step(config), tag).model;
            break;
        case DefenseKind::DefensiveDistillation: {
            const double t = config.distill_temperature;
            auto teacher_cfg = train_config(config, tag + "/teacher");
            const auto distill_teacher = nn::train_loop(fresh_model(config, baseline, tag + "/teacher"), train,
                                                        teacher_cfg, soft_label_step(nullptr, t, classes),
                                                        tag + "/teacher")
                                             .model;
            dm.model = nn::train_loop(std::move(init), train, cfg, soft_label_step(&distill_teacher, t, classes), tag)
                           .model;
            break;
        }
        case DefenseKind::RSLAD: {
            nn::MlpModel own_teacher;
            if (!teacher) {
                own_teacher = train_defense(DefenseKind::PgdAT, config, train, baseline, bounds).model;
                teacher = &own_teacher;
            }
            if (teacher->dims.front() != baseline.dims.front() || teacher->n_classes() != classes) {
                throw Error("rslad: teacher shape does not match the baseline");
            }
            dm.model = nn::train_loop(std::move(init), train, cfg, rslad_step(config, bounds, *teacher), tag).model;
            break;
        }
        case DefenseKind::FeatureSqueezing:
        case DefenseKind::GaussianNoise:
            break;
    }
    return dm;
}

nn::Prediction defended_predict(const DefendedModel& dm, const Matrix& x) {
    if (x.cols() != dm.model.input_dim()) throw Error("defended_predict: feature dimension mismatch");
    if (dm.transform.kind == InputTransform::Kind::None) return nn::predict(dm.model, x);
    return nn::predict(dm.model, apply_transform(dm.transform, x));
}

nn::Prediction defended_predict(const DefendedModel& dm, const data::Dataset& data) {
    return defended_predict(dm, data.features);
}

std::vector<char> serialize_defended(const DefendedModel& dm) {
    io::BinaryWriter w(kDefMagic, kDefVersion);
    w.put(static_cast<std::uint32_t>(defense_id(dm.kind)));
    w.put_string(dm.variant);
    w.put(static_cast<std::uint8_t>(dm.transform.kind));
    w.put(static_cast<std::int32_t>(dm.transform.bits));
    w.put(dm.transform.sigma);
    w.put(dm.transform.seed);
    w.put(static_cast<std::uint32_t>(dm.transform.bounds.dim()));
    w.put_doubles(dm.transform.bounds.lo.data(), static_cast<std::size_t>(dm.transform.bounds.dim()));
    w.put_doubles(dm.transform.bounds.hi.data(), static_cast<std::size_t>(dm.transform.bounds.dim()));
    w.put(dm.meta.seed);
    w.put(static_cast<std::int32_t>(dm.meta.epochs));
    w.put_string(dm.meta.config);
    w.put_bytes(nn::serialize_model(dm.model));
    return w.bytes();
}

DefendedModel deserialize_defended(std::vector<char> bytes, const std::string& what) {
    io::BinaryReader r(std::move(bytes), kDefMagic, kDefVersion, what);
    DefendedModel dm;
    const auto id = r.get<std::uint32_t>();
    if (id >= static_cast<std::uint32_t>(kDefenseCount)) throw ArtifactError(what + ": corrupt defense id");
    dm.kind = static_cast<DefenseKind>(id);
    dm.variant = r.get_string();
    const auto tk = r.get<std::uint8_t>();
    if (tk > 2) throw ArtifactError(what + ": corrupt transform kind");
    dm.transform.kind = static_cast<InputTransform::Kind>(tk);
    dm.transform.bits = r.get<std::int32_t>();
    dm.transform.sigma = r.get<double>();
    dm.transform.seed = r.get<Seed>();
    const auto d = r.get<std::uint32_t>();
    if (d > (1u << 20)) throw ArtifactError(what + ": corrupt bounds dimension");
    dm.transform.bounds.lo.resize(d);
    dm.transform.bounds.hi.resize(d);
    r.get_doubles(dm.transform.bounds.lo.data(), d);
    r.get_doubles(dm.transform.bounds.hi.data(), d);
    dm.meta.seed = r.get<Seed>();
    dm.meta.epochs = r.get<std::int32_t>();
    dm.meta.config = r.get_string();
    dm.model = nn::deserialize_model(r.get_bytes(), what);
    r.expect_end();
    if (is_transform_based(dm.kind) != (dm.transform.kind != InputTransform::Kind::None)) {
        throw ArtifactError(what + ": transform does not match defense kind");
    }
    return dm;
}

void save_defended(const DefendedModel& dm, const std::filesystem::path& path) {
    const auto bytes = serialize_defended(dm);
    io::write_file(path, std::string_view(bytes.data(), bytes.size()));
}

DefendedModel load_defended(const std::filesystem::path& path) {
    return deserialize_defended(io::read_file(path), path.string());
}

}  // namespace dynamite::defense
