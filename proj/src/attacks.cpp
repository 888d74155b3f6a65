#include "dynamite/attacks.hpp"

#include "dynamite/io.hpp"
#include "dynamite/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace dynamite::attacks {

using nlohmann::json;

namespace {

constexpr double kMomentum = 0.75;
constexpr double kProgressRatio = 0.75;

Matrix sign_of(const Matrix& g) {
    return g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Matrix random_start(const Matrix& x, double eps, Seed seed) {
    Matrix out = x;
    if (eps == 0.0) return out;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> u(-eps, eps);
        for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) += u(rng);
    }
    return out;
}

Vector ce_losses(const nn::MlpModel& model, const Matrix& x, std::span<const int> y) {
    return nn::per_sample_ce(nn::forward(model, x), y);
}

void check_shapes(const nn::MlpModel& model, const Matrix& x, std::span<const int> y,
                  const Bounds& bounds) {
    if (x.cols() != model.input_dim() || bounds.dim() != x.cols()) {
        throw Error("attack: input, model and bounds dimensions disagree");
    }
    if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error("attack: label count mismatch");
}

}  // namespace

std::string_view to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::FGSM: return "fgsm";
        case AttackKind::BIM: return "bim";
        case AttackKind::PGD: return "pgd";
        case AttackKind::AutoPGD: return "autopgd";
        case AttackKind::DeepFool: return "deepfool";
        case AttackKind::ZOO: return "zoo";
    }
    return "unknown";
}

AttackKind parse_attack_kind(std::string_view text) {
    for (auto kind : kAllAttacks) {
        if (to_string(kind) == text) return kind;
    }
    throw ConfigError("unknown attack kind '" + std::string(text) + "'");
}

void AttackParams::validate() const {
    if (iterative_steps < 1 || autopgd_steps < 2 || deepfool_max_iter < 1 || zoo_iters < 1 ||
        zoo_coords < 1) {
        throw ConfigError("attack params: iteration counts must be positive (autopgd_steps >= 2)");
    }
    if (!(step_fraction > 0.0) || !(zoo_step_fraction > 0.0) || !(zoo_delta > 0.0)) {
        throw ConfigError("attack params: step fractions and zoo_delta must be > 0");
    }
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack: epsilon must be >= 0");
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
    if (kind == AttackKind::AutoPGD && steps < 2) throw ConfigError("attack: autopgd needs >= 2 steps");
    if (kind == AttackKind::ZOO && (!(zoo_delta > 0.0) || zoo_coords < 1)) {
        throw ConfigError("attack: zoo needs delta > 0 and at least one coordinate");
    }
}

AttackSpec resolve_spec(AttackKind kind, double epsilon, const AttackParams& params,
                        std::size_t feature_count, Seed seed) {
    params.validate();
    AttackSpec spec;
    spec.kind = kind;
    spec.epsilon = epsilon;
    spec.seed = seed;
    switch (kind) {
        case AttackKind::FGSM:
            spec.step_size = epsilon;
            break;
        case AttackKind::BIM:
        case AttackKind::PGD:
            spec.steps = params.iterative_steps;
            spec.step_size = params.step_fraction * epsilon;
            break;
        case AttackKind::AutoPGD:
            spec.steps = params.autopgd_steps;
            spec.step_size = 2.0 * epsilon;
            break;
        case AttackKind::DeepFool:
            spec.steps = params.deepfool_max_iter;
            break;
        case AttackKind::ZOO:
            spec.steps = params.zoo_iters;
            spec.step_size = params.zoo_step_fraction * epsilon;
            spec.zoo_delta = params.zoo_delta;
            spec.zoo_coords = static_cast<int>(
                std::min<std::size_t>(static_cast<std::size_t>(params.zoo_coords), feature_count));
            break;
    }
    spec.validate();
    return spec;
}

void project(Matrix& x, const Matrix& origin, double eps, const Bounds& bounds) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            double v = std::min(std::max(x(i, j), bounds.lo(j)), bounds.hi(j));
            v = std::min(std::max(v, origin(i, j) - eps), origin(i, j) + eps);
            x(i, j) = v;
        }
    }
}

Matrix fgsm(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
            const Bounds& bounds) {
    check_shapes(model, x, y, bounds);
    Matrix out = x + eps * sign_of(nn::input_gradients(model, x, y));
    bounds.clip_rows(out);
    return out;
}

Matrix bim(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
           int steps, double alpha, const Bounds& bounds) {
    check_shapes(model, x, y, bounds);
    Matrix cur = x;
    for (int k = 0; k < steps; ++k) {
        cur += alpha * sign_of(nn::input_gradients(model, cur, y));
        project(cur, x, eps, bounds);
    }
    return cur;
}

Matrix pgd(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
           int steps, double alpha, const Bounds& bounds, Seed seed) {
    check_shapes(model, x, y, bounds);
    Matrix cur = random_start(x, eps, seed);
    project(cur, x, eps, bounds);
    for (int k = 0; k < steps; ++k) {
        cur += alpha * sign_of(nn::input_gradients(model, cur, y));
        project(cur, x, eps, bounds);
    }
    return cur;
}

std::vector<int> autopgd_checkpoints(int steps) {
    std::vector<double> p{0.0, 0.22};
    while (true) {
        const double next = p.back() + std::max(p.back() - p[p.size() - 2] - 0.03, 0.06);
        if (next > 1.0) break;
        p.push_back(next);
    }
    std::vector<int> w;
    for (std::size_t j = 1; j < p.size(); ++j) {
        const int c = static_cast<int>(std::ceil(p[j] * steps));
        if (c > 0 && c < steps && (w.empty() || c > w.back())) w.push_back(c);
    }
    return w;
}

Matrix auto_pgd(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
                int steps, const Bounds& bounds, Seed seed, AutoPgdTrace* trace) {
    check_shapes(model, x, y, bounds);
    if (steps < 2) throw ConfigError("auto_pgd: steps must be >= 2");
    const auto m = x.rows();
    const auto checkpoints = autopgd_checkpoints(steps);
    if (trace) {
        trace->checkpoints = checkpoints;
        trace->checkpoint_losses.clear();
    }

    Matrix cur = random_start(x, eps, seed);
    project(cur, x, eps, bounds);
    Vector loss = ce_losses(model, cur, y);
    Matrix best = cur;
    Vector best_loss = loss;

    Vector eta = Vector::Constant(m, 2.0 * eps);
    // Step-size and best-loss snapshots at the previous checkpoint.
    Vector eta_at_last = eta;
    Vector best_at_last = best_loss;
    std::vector<int> improvements(static_cast<std::size_t>(m), 0);
    int last_checkpoint = 0;
    std::size_t next_cp = 0;

    Matrix prev = cur;
    for (int k = 0; k < steps; ++k) {
        const Matrix grad_sign = sign_of(nn::input_gradients(model, cur, y));
        Matrix z = cur + (grad_sign.array().colwise() * eta.array()).matrix();
        project(z, x, eps, bounds);
        Matrix next = z;
        if (k > 0) {
            next = cur + kMomentum * (z - cur) + (1.0 - kMomentum) * (cur - prev);
            project(next, x, eps, bounds);
        }
        const Vector next_loss = ce_losses(model, next, y);
        for (Eigen::Index i = 0; i < m; ++i) {
            if (next_loss(i) > loss(i)) ++improvements[static_cast<std::size_t>(i)];
            if (next_loss(i) > best_loss(i)) {
                best_loss(i) = next_loss(i);
                best.row(i) = next.row(i);
            }
        }
        prev = cur;
        cur = std::move(next);
        loss = next_loss;

        const int iter = k + 1;
        if (next_cp < checkpoints.size() && iter == checkpoints[next_cp]) {
            if (trace) trace->checkpoint_losses.push_back(loss);
            const double window = static_cast<double>(iter - last_checkpoint);
            for (Eigen::Index i = 0; i < m; ++i) {
                const auto ui = static_cast<std::size_t>(i);
                const bool stalled = improvements[ui] < kProgressRatio * window;
                const bool unchanged = eta_at_last(i) == eta(i) && best_at_last(i) == best_loss(i);
                eta_at_last(i) = eta(i);
                best_at_last(i) = best_loss(i);
                if (stalled || unchanged) {
                    eta(i) /= 2.0;
                    cur.row(i) = best.row(i);
                    prev.row(i) = best.row(i);
                    loss(i) = best_loss(i);
                }
                improvements[ui] = 0;
            }
            last_checkpoint = iter;
            ++next_cp;
        }
    }
    if (trace) trace->final_losses = best_loss;
    return best;
}

DeepFoolResult deepfool(const nn::MlpModel& model, const Matrix& x, std::span<const int> y,
                        int max_iter, double overshoot, const Bounds& bounds) {
    check_shapes(model, x, y, bounds);
    if (max_iter < 1) throw ConfigError("deepfool: max_iter must be >= 1");
    const auto m = x.rows();
    const auto d = x.cols();
    const int classes = model.n_classes();
    DeepFoolResult out;
    out.perturbation = Matrix::Zero(m, d);
    out.iterations.assign(static_cast<std::size_t>(m), 0);
    out.flagged.assign(static_cast<std::size_t>(m), 0);
    const Matrix identity = Matrix::Identity(classes, classes);

    for (Eigen::Index i = 0; i < m; ++i) {
        const RowVector x0 = x.row(i);
        const int origin = y[static_cast<std::size_t>(i)];
        RowVector r_total = RowVector::Zero(d);
        RowVector xi = x0;
        for (int it = 0; it < max_iter; ++it) {
            // One backward pass with identity seeds gives the full Jacobian.
            nn::ForwardCache cache;
            const Matrix copies = xi.replicate(classes, 1);
            const Matrix logits = nn::forward(model, copies, cache);
            if (argmax(logits.row(0)) != origin) break;
            const Matrix jac = nn::backward(model, cache, identity, true).input;

            double best_ratio = std::numeric_limits<double>::infinity();
            RowVector best_w;
            double best_f = 0.0;
            for (int k = 0; k < classes; ++k) {
                if (k == origin) continue;
                const RowVector w = jac.row(k) - jac.row(origin);
                const double norm = w.norm();
                if (norm == 0.0) continue;
                const double f = logits(0, k) - logits(0, origin);
                const double ratio = std::abs(f) / norm;
                if (ratio < best_ratio) {
                    best_ratio = ratio;
                    best_w = w;
                    best_f = f;
                }
            }
            if (!std::isfinite(best_ratio)) {
                out.flagged[static_cast<std::size_t>(i)] = 1;
                r_total.setZero();
                break;
            }
            r_total += (std::abs(best_f) / best_w.squaredNorm()) * best_w;
            xi = x0 + (1.0 + overshoot) * r_total;
            out.iterations[static_cast<std::size_t>(i)] = it + 1;
        }
        out.perturbation.row(i) = r_total;
    }
    out.adversarial = x + (1.0 + overshoot) * out.perturbation;
    bounds.clip_rows(out.adversarial);
    return out;
}

double symmetric_difference(const std::function<double(const RowVector&)>& f, const RowVector& x,
                            Eigen::Index coord, double delta) {
    RowVector plus = x, minus = x;
    plus(coord) += delta;
    minus(coord) -= delta;
    return (f(plus) - f(minus)) / (2.0 * delta);
}

RowVector zoo_gradient_estimate(const nn::MlpModel& model, const RowVector& x, int y,
                                std::span<const Eigen::Index> coords, double delta) {
    const int labels[] = {y};
    auto loss = [&](const RowVector& p) {
        return nn::per_sample_ce(nn::forward(model, Matrix(p)), labels)(0);
    };
    RowVector g = RowVector::Zero(x.size());
    for (auto c : coords) g(c) = symmetric_difference(loss, x, c, delta);
    return g;
}

Matrix zoo(const nn::MlpModel& model, const Matrix& x, std::span<const int> y, double eps,
           int iters, double delta, double step, int coords_per_iter, const Bounds& bounds,
           Seed seed) {
    check_shapes(model, x, y, bounds);
    if (!(delta > 0.0)) throw ConfigError("zoo: delta must be > 0");
    const auto m = x.rows();
    const auto d = x.cols();
    const auto k = std::min<Eigen::Index>(coords_per_iter, d);
    if (eps == 0.0 || m == 0) return x;

    std::vector<std::mt19937_64> rngs;
    rngs.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(i)));

    Matrix cur = x;
    std::vector<Eigen::Index> pool(static_cast<std::size_t>(d));
    std::vector<std::vector<Eigen::Index>> chosen(static_cast<std::size_t>(m));
    Matrix plus(m, d), minus(m, d), estimate(m, d);
    for (int it = 0; it < iters; ++it) {
        for (Eigen::Index i = 0; i < m; ++i) {
            std::iota(pool.begin(), pool.end(), Eigen::Index{0});
            auto& rng = rngs[static_cast<std::size_t>(i)];
            // Partial Fisher-Yates: first k entries are a uniform sample without replacement.
            for (Eigen::Index s = 0; s < k; ++s) {
                std::uniform_int_distribution<Eigen::Index> pick(s, d - 1);
                std::swap(pool[static_cast<std::size_t>(s)], pool[static_cast<std::size_t>(pick(rng))]);
            }
            chosen[static_cast<std::size_t>(i)].assign(pool.begin(), pool.begin() + k);
        }
        estimate.setZero();
        for (Eigen::Index s = 0; s < k; ++s) {
            plus = cur;
            minus = cur;
            for (Eigen::Index i = 0; i < m; ++i) {
                const auto c = chosen[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
                plus(i, c) += delta;
                minus(i, c) -= delta;
            }
            const Vector lp = ce_losses(model, plus, y);
            const Vector lm = ce_losses(model, minus, y);
            for (Eigen::Index i = 0; i < m; ++i) {
                const auto c = chosen[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
                estimate(i, c) = (lp(i) - lm(i)) / (2.0 * delta);
            }
        }
        cur += step * sign_of(estimate);
        project(cur, x, eps, bounds);
    }
    return cur;
}

AttackOutput run_attack(const nn::MlpModel& model, const Matrix& x, std::span<const int> y,
                        const AttackSpec& spec, const Bounds& bounds) {
    spec.validate();
    AttackOutput out;
    out.failed.assign(static_cast<std::size_t>(x.rows()), 0);
    switch (spec.kind) {
        case AttackKind::FGSM:
            out.adversarial = fgsm(model, x, y, spec.epsilon, bounds);
            break;
        case AttackKind::BIM:
            out.adversarial = bim(model, x, y, spec.epsilon, spec.steps, spec.step_size, bounds);
            break;
        case AttackKind::PGD:
            out.adversarial = pgd(model, x, y, spec.epsilon, spec.steps, spec.step_size, bounds, spec.seed);
            break;
        case AttackKind::AutoPGD:
            out.adversarial = auto_pgd(model, x, y, spec.epsilon, spec.steps, bounds, spec.seed);
            break;
        case AttackKind::DeepFool: {
            auto r = deepfool(model, x, y, spec.steps, spec.epsilon, bounds);
            out.adversarial = std::move(r.adversarial);
            out.failed = std::move(r.flagged);
            break;
        }
        case AttackKind::ZOO:
            out.adversarial = zoo(model, x, y, spec.epsilon, spec.steps, spec.zoo_delta, spec.step_size,
                                  spec.zoo_coords, bounds, spec.seed);
            break;
    }
    return out;
}

std::string cell_id(AttackKind kind, double epsilon) {
    return std::string(to_string(kind)) + "_eps" + format_double(epsilon);
}

std::string GridCell::id() const { return cell_id(kind, epsilon); }

const GridCell* AdversarialGrid::find(AttackKind kind, double epsilon) const {
    for (const auto& c : cells) {
        if (c.kind == kind && c.epsilon == epsilon) return &c;
    }
    return nullptr;
}

Seed cell_seed(Seed seed, AttackKind kind, double epsilon) {
    return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(kind) + 1),
                       std::bit_cast<std::uint64_t>(epsilon));
}

AdversarialGrid generate_grid(const nn::MlpModel& model, const data::Dataset& test,
                              std::span<const AttackKind> kinds, std::span<const double> epsilons,
                              const Bounds& bounds, const AttackParams& params, Seed seed,
                              unsigned threads) {
    if (kinds.empty() || epsilons.empty()) throw ConfigError("generate_grid: need attacks and epsilons");
    AdversarialGrid grid;
    for (auto kind : kinds) {
        for (double eps : epsilons) {
            GridCell cell;
            cell.kind = kind;
            cell.epsilon = eps;
            cell.seed = cell_seed(seed, kind, eps);
            grid.cells.push_back(std::move(cell));
        }
    }
    parallel_for(grid.cells.size(), threads, [&](std::size_t c) {
        auto& cell = grid.cells[c];
        const auto spec = resolve_spec(cell.kind, cell.epsilon, params, test.dim(), cell.seed);
        auto out = run_attack(model, test.features, test.labels, spec, bounds);
        cell.data.features = std::move(out.adversarial);
        cell.data.labels = test.labels;
        cell.data.n_classes = test.n_classes;
        cell.data.feature_names = test.feature_names;
        cell.failed = std::move(out.failed);
    });
    return grid;
}

void save_grid(const AdversarialGrid& grid, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["source_id"] = grid.source_id;
    manifest["model_fingerprint"] = grid.model_fingerprint;
    json cells = json::array();
    for (const auto& cell : grid.cells) {
        const auto file = cell.id() + ".csv";
        std::string text;
        const auto& names = cell.data.feature_names;
        for (std::size_t j = 0; j < cell.data.dim(); ++j) {
            text += j < names.size() ? names[j] : "f" + std::to_string(j);
            text += ',';
        }
        text += "label\n";
        for (Eigen::Index i = 0; i < cell.data.features.rows(); ++i) {
            for (Eigen::Index j = 0; j < cell.data.features.cols(); ++j) {
                text += format_double(cell.data.features(i, j));
                text += ',';
            }
            text += std::to_string(cell.data.labels[static_cast<std::size_t>(i)]);
            text += '\n';
        }
        io::write_file(dir / file, text);
        std::vector<std::size_t> failed;
        for (std::size_t i = 0; i < cell.failed.size(); ++i) {
            if (cell.failed[i]) failed.push_back(i);
        }
        cells.push_back({{"id", cell.id()},
                         {"kind", std::string(to_string(cell.kind))},
                         {"epsilon", cell.epsilon},
                         {"seed", cell.seed},
                         {"file", file},
                         {"samples", cell.data.size()},
                         {"n_classes", cell.data.n_classes},
                         {"failed", failed}});
    }
    manifest["cells"] = std::move(cells);
    io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

AdversarialGrid load_grid(const std::filesystem::path& dir) {
    const auto raw = io::read_file(dir / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(raw.begin(), raw.end());
    } catch (const json::exception& e) {
        throw ArtifactError("grid manifest: " + std::string(e.what()));
    }
    AdversarialGrid grid;
    grid.source_id = manifest.value("source_id", "");
    grid.model_fingerprint = manifest.value("model_fingerprint", "");
    for (const auto& jc : manifest.at("cells")) {
        GridCell cell;
        cell.kind = parse_attack_kind(jc.at("kind").get<std::string>());
        cell.epsilon = jc.at("epsilon").get<double>();
        cell.seed = jc.at("seed").get<Seed>();
        const auto n = jc.at("samples").get<std::size_t>();
        cell.data.n_classes = jc.at("n_classes").get<int>();
        cell.failed.assign(n, 0);
        for (auto i : jc.at("failed").get<std::vector<std::size_t>>()) cell.failed.at(i) = 1;

        const auto path = dir / jc.at("file").get<std::string>();
        std::ifstream in(path);
        if (!in) throw ArtifactError("cannot open grid cell " + path.string());
        std::string line;
        std::getline(in, line);
        std::stringstream header(line);
        for (std::string name; std::getline(header, name, ',');) cell.data.feature_names.push_back(name);
        if (cell.data.feature_names.empty() || cell.data.feature_names.back() != "label") {
            throw ArtifactError(path.string() + ": malformed header");
        }
        cell.data.feature_names.pop_back();
        const auto d = static_cast<Eigen::Index>(cell.data.feature_names.size());
        cell.data.features.resize(static_cast<Eigen::Index>(n), d);
        cell.data.labels.resize(n);
        std::size_t row = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (row >= n) throw ArtifactError(path.string() + ": more rows than the manifest lists");
            const char* p = line.data();
            const char* end = line.data() + line.size();
            for (Eigen::Index j = 0; j <= d; ++j) {
                const char* stop = std::find(p, end, ',');
                if (j < d) {
                    double v = 0.0;
                    auto [ptr, ec] = std::from_chars(p, stop, v);
                    if (ec != std::errc{} || ptr != stop) {
                        throw ArtifactError(path.string() + ": bad number on row " + std::to_string(row + 1));
                    }
                    cell.data.features(static_cast<Eigen::Index>(row), j) = v;
                } else {
                    int label = 0;
                    auto [ptr, ec] = std::from_chars(p, stop, label);
                    if (ec != std::errc{} || ptr != stop) {
                        throw ArtifactError(path.string() + ": bad label on row " + std::to_string(row + 1));
                    }
                    cell.data.labels[row] = label;
                }
                p = stop == end ? end : stop + 1;
            }
            ++row;
        }
        if (row != n) throw ArtifactError(path.string() + ": row count does not match manifest");
        cell.data.validate();
        grid.cells.push_back(std::move(cell));
    }
    return grid;
}

}  // namespace dynamite::attacks
