#include "dynamite/gbt.hpp"

#include "dynamite/io.hpp"
#include "dynamite/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>

namespace dynamite::gbt {

namespace {

constexpr std::string_view kMagic = "DYGBT";
constexpr std::uint32_t kVersion = 1;

struct Split {
    double gain = -std::numeric_limits<double>::infinity();
    int feature = -1;
    double threshold = 0.0;
};

struct NodeStats {
    double g = 0.0;
    double h = 0.0;
    long count = 0;
};

double score(double g, double h, double lambda) { return g * g / (h + lambda); }

// Fits one regression tree level by level with exact greedy splits. `node_of`
// holds the current node of every sampled row and -1 for rows left out.
Tree fit_tree(const Matrix& x, const std::vector<std::vector<Eigen::Index>>& sorted, const std::vector<double>& grad,
              const std::vector<double>& hess, std::vector<int> node_of, const GbtConfig& cfg) {
    const auto n = static_cast<std::size_t>(x.rows());
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<NodeStats> stats(1);
    for (std::size_t i = 0; i < n; ++i) {
        if (node_of[i] < 0) continue;
        stats[0].g += grad[i];
        stats[0].h += hess[i];
        ++stats[0].count;
    }
    std::vector<int> active{0};
    for (int depth = 0; depth < cfg.max_depth && !active.empty(); ++depth) {
        std::vector<Split> best(tree.nodes.size());
        std::vector<NodeStats> left(tree.nodes.size());
        std::vector<double> last_value(tree.nodes.size());
        for (Eigen::Index f = 0; f < x.cols(); ++f) {
            for (int a : active) left[static_cast<std::size_t>(a)] = {};
            for (auto i : sorted[static_cast<std::size_t>(f)]) {
                const int node = node_of[static_cast<std::size_t>(i)];
                if (node < 0) continue;
                const auto un = static_cast<std::size_t>(node);
                auto& l = left[un];
                const double v = x(i, f);
                const auto& total = stats[un];
                if (l.count >= cfg.min_samples_leaf && total.count - l.count >= cfg.min_samples_leaf &&
                    v > last_value[un]) {
                    const double gain = score(l.g, l.h, cfg.lambda) +
                                        score(total.g - l.g, total.h - l.h, cfg.lambda) -
                                        score(total.g, total.h, cfg.lambda);
                    // Zero-gain splits are kept: the first level of XOR-like
                    // structure has no gain on its own.
                    if (gain > best[un].gain && gain >= -1e-12) {
                        double thr = last_value[un] + (v - last_value[un]) / 2.0;
                        if (!(thr < v)) thr = last_value[un];
                        best[un] = {gain, static_cast<int>(f), thr};
                    }
                }
                l.g += grad[static_cast<std::size_t>(i)];
                l.h += hess[static_cast<std::size_t>(i)];
                ++l.count;
                last_value[un] = v;
            }
        }
        std::vector<int> next;
        for (int a : active) {
            const auto& s = best[static_cast<std::size_t>(a)];
            if (s.feature < 0) continue;
            const int l = static_cast<int>(tree.nodes.size());
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            stats.resize(tree.nodes.size());
            auto& node = tree.nodes[static_cast<std::size_t>(a)];
            node.feature = s.feature;
            node.threshold = s.threshold;
            node.left = l;
            node.right = l + 1;
            next.push_back(l);
            next.push_back(l + 1);
        }
        if (next.empty()) break;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = node_of[i];
            if (a < 0) continue;
            const auto& node = tree.nodes[static_cast<std::size_t>(a)];
            if (node.is_leaf()) continue;
            const int child = x(static_cast<Eigen::Index>(i), node.feature) <= node.threshold ? node.left : node.right;
            node_of[i] = child;
            auto& cs = stats[static_cast<std::size_t>(child)];
            cs.g += grad[i];
            cs.h += hess[i];
            ++cs.count;
        }
        active = std::move(next);
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
        auto& node = tree.nodes[k];
        if (node.is_leaf()) node.value = -cfg.learning_rate * stats[k].g / (stats[k].h + cfg.lambda);
    }
    return tree;
}

constexpr int kMaxFlatDepth = 12;

/// Fixed-depth descent of every flattened tree; the trip count is a
/// constant, so each tree is a short unrolled chain of loads.
template <int D>
void accumulate(const FlatForest& flat, std::size_t classes, std::size_t trees, const double* x, double* scores) {
    constexpr std::size_t internal = (std::size_t{1} << D) - 1;
    const FlatForest::Split* split = flat.splits.data();
    const double* leaf = flat.leaf.data();
    for (std::size_t t = 0, c = 0; t < trees; ++t) {
        std::size_t k = 0;
        for (int d = 0; d < D; ++d) {
            const auto& node = split[k];
            k = 2 * k + 1 + static_cast<std::size_t>(!(x[node.feature] <= node.threshold));
        }
        scores[c] += leaf[k - internal];
        split += internal;
        leaf += internal + 1;
        if (++c == classes) c = 0;
    }
}

}  // namespace

void GbtConfig::validate() const {
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(std::string("selector config: ") + msg);
    };
    require(rounds >= 1, "rounds must be >= 1");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
    require(max_depth >= 1, "max_depth must be >= 1");
    require(min_samples_leaf >= 1, "min_samples_leaf must be >= 1");
    require(subsample > 0.0 && subsample <= 1.0, "subsample must be in (0, 1]");
    require(lambda >= 0.0, "lambda must be >= 0");
}

double Tree::predict(const double* x) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
        const auto& node = nodes[static_cast<std::size_t>(k)];
        k = x[node.feature] <= node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
}

int Tree::depth() const {
    std::vector<int> level(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        deepest = std::max(deepest, level[k]);
        if (!nodes[k].is_leaf()) {
            level[static_cast<std::size_t>(nodes[k].left)] = level[k] + 1;
            level[static_cast<std::size_t>(nodes[k].right)] = level[k] + 1;
        }
    }
    return deepest;
}

Vector GbtModel::scores(const RowVector& x) const {
    if (x.size() != n_features) throw Error("selector: expected " + std::to_string(n_features) + " features");
    return scores(x.data());
}

Vector GbtModel::scores(const double* x) const {
    Vector s = Vector::Zero(n_classes);
    if (flat.depth < 0) {
        for (const auto& round : rounds) {
            for (int c = 0; c < n_classes; ++c) s(c) += round[static_cast<std::size_t>(c)].predict(x);
        }
        return s;
    }
    const auto trees = rounds.size() * static_cast<std::size_t>(n_classes);
    const auto run = [&]<int D>() { accumulate<D>(flat, static_cast<std::size_t>(n_classes), trees, x, s.data()); };
    [&]<int... D>(std::integer_sequence<int, D...>) {
        ((flat.depth == D ? (run.template operator()<D>(), true) : false) || ...);
    }(std::make_integer_sequence<int, kMaxFlatDepth + 1>{});
    return s;
}

int GbtModel::predict(const RowVector& x) const { return argmax(scores(x)); }

int GbtModel::predict(const double* x) const { return argmax(scores(x)); }

std::vector<int> GbtModel::predict_rows(const Matrix& x) const {
    if (x.cols() != n_features) throw Error("selector: expected " + std::to_string(n_features) + " features");
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = predict(x.row(i).data());
    return out;
}

void GbtModel::compile() {
    int depth = 0;
    for (const auto& round : rounds) {
        for (const auto& tree : round) depth = std::max(depth, tree.depth());
    }
    flat = {};
    if (depth > kMaxFlatDepth) return;
    const std::size_t internal = (std::size_t{1} << depth) - 1;
    const auto trees = rounds.size() * static_cast<std::size_t>(n_classes);
    flat.depth = depth;
    flat.splits.assign(trees * internal, {std::numeric_limits<double>::infinity(), 0});
    flat.leaf.assign(trees * (internal + 1), 0.0);
    std::size_t t = 0;
    for (const auto& round : rounds) {
        for (const auto& tree : round) {
            // Below an early leaf the padding always goes left and every
            // padded leaf repeats the value.
            const auto fill = [&](const auto& self, int node, std::size_t pos, int level) -> void {
                const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
                if (level == depth) {
                    flat.leaf[t * (internal + 1) + (pos - internal)] = nd.value;
                    return;
                }
                if (!nd.is_leaf()) {
                    flat.splits[t * internal + pos] = {nd.threshold, nd.feature};
                }
                self(self, nd.is_leaf() ? node : nd.left, 2 * pos + 1, level + 1);
                self(self, nd.is_leaf() ? node : nd.right, 2 * pos + 2, level + 1);
            };
            fill(fill, 0, 0, 0);
            ++t;
        }
    }
}

void GbtModel::validate() const {
    if (n_features < 1 || n_classes < 1) throw Error("selector: empty model");
    for (const auto& round : rounds) {
        if (round.size() != static_cast<std::size_t>(n_classes)) throw Error("selector: round has wrong tree count");
        for (const auto& tree : round) {
            if (tree.nodes.empty()) throw Error("selector: empty tree");
            for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
                const auto& node = tree.nodes[k];
                if (node.is_leaf()) {
                    if (!std::isfinite(node.value)) throw Error("selector: non-finite leaf");
                    continue;
                }
                const auto size = static_cast<int>(tree.nodes.size());
                if (node.feature >= n_features || node.left <= static_cast<int>(k) || node.right <= static_cast<int>(k) ||
                    node.left >= size || node.right >= size) {
                    throw Error("selector: malformed tree node");
                }
            }
        }
    }
}

GbtModel train(const Matrix& x, std::span<const int> labels, int n_classes, const GbtConfig& config,
               unsigned threads) {
    config.validate();
    const auto n = static_cast<std::size_t>(x.rows());
    if (n == 0) throw Error("selector: empty training set");
    if (labels.size() != n) throw Error("selector: label count mismatch");
    if (n_classes < 1) throw Error("selector: need at least one class");
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw Error("selector: label out of range");
    }

    std::vector<std::vector<Eigen::Index>> sorted(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
        auto& order = sorted[static_cast<std::size_t>(f)];
        order.resize(n);
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x(a, f) < x(b, f); });
    }

    GbtModel model;
    model.n_features = static_cast<int>(x.cols());
    model.n_classes = n_classes;
    Matrix f = Matrix::Zero(static_cast<Eigen::Index>(n), n_classes);
    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(config.subsample * static_cast<double>(n))));
    std::vector<std::size_t> rows(n);
    std::vector<std::vector<double>> grad(static_cast<std::size_t>(n_classes), std::vector<double>(n));
    std::vector<std::vector<double>> hess = grad;

    for (int r = 0; r < config.rounds; ++r) {
        std::vector<int> node_of(n, 0);
        if (take < n) {
            std::iota(rows.begin(), rows.end(), std::size_t{0});
            std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
            std::shuffle(rows.begin(), rows.end(), rng);
            std::fill(node_of.begin(), node_of.end(), -1);
            for (std::size_t i = 0; i < take; ++i) node_of[rows[i]] = 0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = f.row(static_cast<Eigen::Index>(i));
            const double mx = row.maxCoeff();
            const RowVector e = (row.array() - mx).exp();
            const double sum = e.sum();
            for (int c = 0; c < n_classes; ++c) {
                const double p = e(c) / sum;
                const auto uc = static_cast<std::size_t>(c);
                grad[uc][i] = p - (labels[i] == c ? 1.0 : 0.0);
                hess[uc][i] = std::max(p * (1.0 - p), 1e-16);
            }
        }
        std::vector<Tree> trees(static_cast<std::size_t>(n_classes));
        parallel_for(trees.size(), threads, [&](std::size_t c) {
            trees[c] = fit_tree(x, sorted, grad[c], hess[c], node_of, config);
        });
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = x.row(static_cast<Eigen::Index>(i)).data();
            for (int c = 0; c < n_classes; ++c) f(static_cast<Eigen::Index>(i), c) += trees[static_cast<std::size_t>(c)].predict(xi);
        }
        model.rounds.push_back(std::move(trees));
    }
    model.compile();
    return model;
}

std::vector<char> serialize(const GbtModel& model) {
    model.validate();
    io::BinaryWriter w(kMagic, kVersion);
    w.put(static_cast<std::int32_t>(model.n_features));
    w.put(static_cast<std::int32_t>(model.n_classes));
    w.put(static_cast<std::uint32_t>(model.rounds.size()));
    for (const auto& round : model.rounds) {
        for (const auto& tree : round) {
            w.put(static_cast<std::uint32_t>(tree.nodes.size()));
            for (const auto& node : tree.nodes) {
                w.put(static_cast<std::int32_t>(node.feature));
                w.put(node.threshold);
                w.put(static_cast<std::int32_t>(node.left));
                w.put(static_cast<std::int32_t>(node.right));
                w.put(node.value);
            }
        }
    }
    return w.bytes();
}

GbtModel deserialize(std::vector<char> bytes, const std::string& what) {
    io::BinaryReader r(std::move(bytes), kMagic, kVersion, what);
    GbtModel model;
    model.n_features = r.get<std::int32_t>();
    model.n_classes = r.get<std::int32_t>();
    if (model.n_features < 1 || model.n_classes < 1 || model.n_classes > 1024) {
        throw ArtifactError(what + ": corrupt selector header");
    }
    const auto rounds = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rounds; ++k) {
        std::vector<Tree> round(static_cast<std::size_t>(model.n_classes));
        for (auto& tree : round) {
            const auto count = r.get<std::uint32_t>();
            if (count == 0 || count > (1u << 24)) throw ArtifactError(what + ": corrupt tree size");
            tree.nodes.resize(count);
            for (auto& node : tree.nodes) {
                node.feature = r.get<std::int32_t>();
                node.threshold = r.get<double>();
                node.left = r.get<std::int32_t>();
                node.right = r.get<std::int32_t>();
                node.value = r.get<double>();
            }
        }
        model.rounds.push_back(std::move(round));
    }
    r.expect_end();
    try {
        model.validate();
    } catch (const Error& e) {
        throw ArtifactError(what + ": " + e.what());
    }
    model.compile();
    return model;
}

void save(const GbtModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize(model);
    io::write_file(path, std::string_view(bytes.data(), bytes.size()));
}

GbtModel load(const std::filesystem::path& path) { return deserialize(io::read_file(path), path.string()); }

}  // namespace dynamite::gbt
