#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "optiforest/data.hpp"
#include "optiforest/error.hpp"
#include "optiforest/lsh_tree.hpp"
#include "optiforest/opt_tree.hpp"
#include "optiforest/random.hpp"
#include "optiforest/theory.hpp"
#include "optiforest/tree.hpp"

namespace optiforest {

enum class Mode { OptIForest, LshOnly };

inline std::string mode_name(Mode m) { return m == Mode::OptIForest ? "optiforest" : "lsh-only"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "optiforest") return Mode::OptIForest;
    if (s == "lsh-only") return Mode::LshOnly;
    throw ConfigError("unknown mode '" + s + "' (expected optiforest or lsh-only)");
}

/// Cut thresholds used when epsilon is left on auto: round(e^4) for small
/// problems (psi*m <= 1e5), round(e^6) otherwise.
inline constexpr std::size_t kSmallEpsilon = 55;
inline constexpr std::size_t kLargeEpsilon = 403;
inline constexpr double kSmallProblem = 1e5;

struct ForestConfig {
    std::size_t trees = 100;
    std::size_t psi = 512;
    std::optional<std::size_t> epsilon; // nullopt = auto
    theory::BranchingDistribution distribution = theory::BranchingDistribution::finite23();
    std::uint64_t seed = 0;
    Mode mode = Mode::OptIForest;
    /// Target bucket count per LSH split; nullopt keeps the default width rule.
    std::optional<std::int64_t> lsh_arity;
    bool min_max_scale = false;

    void validate() const {
        if (trees < 1) throw ConfigError("tree count must be >= 1");
        if (psi < 2) throw ConfigError("sample size must be >= 2, got " + std::to_string(psi));
        if (epsilon && (*epsilon < 1 || *epsilon > psi)) {
            throw ConfigError("cut threshold must lie in [1, " + std::to_string(psi) + "], got " +
                              std::to_string(*epsilon));
        }
        if (lsh_arity && *lsh_arity < 2) throw ConfigError("LSH arity must be >= 2");
        if (mode == Mode::OptIForest) check_merge_distribution(distribution);
    }

    LshOptions lsh_options() const { return lsh_arity ? LshOptions::for_arity(*lsh_arity) : LshOptions{}; }
};

/// c(k) = 2 H(k-1) - 2 (k-1)/k with H(i) ~ ln(i) + gamma; c(1) = 0, c(2) = 1.
inline double average_path_length(std::size_t k) {
    constexpr double kEulerGamma = 0.5772156649;
    if (k <= 1) return 0.0;
    if (k == 2) return 1.0;
    const double n = static_cast<double>(k);
    return 2.0 * (std::log(n - 1.0) + kEulerGamma) - 2.0 * (n - 1.0) / n;
}

/// Cut threshold a fit will use for an effective sample size and width.
inline std::size_t resolve_epsilon(const ForestConfig& config, std::size_t psi_effective, std::size_t cols) {
    if (config.mode == Mode::LshOnly) return psi_effective;
    std::size_t eps = config.epsilon.value_or(static_cast<double>(psi_effective) * static_cast<double>(cols) <= kSmallProblem
                                                  ? kSmallEpsilon
                                                  : kLargeEpsilon);
    return std::clamp<std::size_t>(eps, 1, psi_effective);
}

struct Forest {
    std::vector<Tree> trees;
    ForestConfig config;
    std::size_t dim = 0;
    std::size_t psi_effective = 0;
    std::size_t epsilon_used = 0;
    double c_psi = 0.0;
    std::optional<MinMaxScaler> scaler;
};

/// Builds one tree of the ensemble from its own random stream.
inline Tree build_tree(const DataMatrix& data, const ForestConfig& config, std::size_t epsilon, std::size_t index) {
    Rng rng(derive_seed(config.seed, index));
    const Subsample sub = subsample(data, config.psi, rng);
    const LshOptions opts = config.lsh_options();
    if (config.mode == Mode::LshOnly) return build_lsh_tree(data, sub, rng, opts).tree.compact();
    return build_optimal_tree(data, sub, epsilon, config.distribution, rng, opts);
}

/// Fits `config.trees` trees. Tree i uses the stream derive_seed(seed, i), so
/// the model is identical for any `jobs`.
inline Forest fit(const DataMatrix& raw, const ForestConfig& config, std::size_t jobs = 1) {
    config.validate();
    if (raw.rows() < 2) throw DataError("at least 2 rows are required to fit, got " + std::to_string(raw.rows()));
    if (raw.cols() == 0) throw DataError("dataset has no feature columns");

    Forest forest;
    forest.config = config;
    forest.dim = raw.cols();
    std::optional<DataMatrix> scaled;
    if (config.min_max_scale) {
        forest.scaler = MinMaxScaler::fit(raw);
        scaled = forest.scaler->transform(raw);
    }
    const DataMatrix& data = scaled ? *scaled : raw;

    forest.psi_effective = std::min(config.psi, data.rows());
    forest.epsilon_used = resolve_epsilon(config, forest.psi_effective, data.cols());
    forest.c_psi = average_path_length(forest.psi_effective);
    forest.trees.resize(config.trees);

    jobs = std::clamp<std::size_t>(jobs, 1, config.trees);
    if (jobs == 1) {
        for (std::size_t i = 0; i < config.trees; ++i) forest.trees[i] = build_tree(data, config, forest.epsilon_used, i);
        return forest;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < config.trees; i = next++) {
                try {
                    forest.trees[i] = build_tree(data, config, forest.epsilon_used, i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    workers.clear();
    if (failure) std::rethrow_exception(failure);
    return forest;
}

/// Weighted depth at which x terminates. Each edge out of a node with b
/// children adds log2(b); ending at a node that holds k training instances
/// (a leaf, or an LSH node with no bucket for x's hash) adds c(k).
inline double path_length(const Tree& tree, std::span<const double> x) {
    NodeId id = tree.root;
    double length = 0.0;
    while (true) {
        const TreeNode& node = tree.nodes[id];
        std::size_t next = LshRouter::npos;
        if (const auto* lsh = std::get_if<LshRouter>(&node.router)) {
            next = lsh->find(lsh->fn.hash(x));
        } else if (const auto* learned = std::get_if<LearnedRouter>(&node.router)) {
            next = learned_route(*learned, x);
        }
        const auto kids = node.children();
        if (next == LshRouter::npos) return length + average_path_length(node.size);
        length += std::log2(static_cast<double>(kids.size()));
        id = kids[next];
    }
}

inline double score_from_path(double mean_path, double c_psi) { return std::exp2(-mean_path / c_psi); }

namespace detail {

inline double score_prepared(const Forest& forest, std::span<const double> x) {
    double total = 0.0;
    for (const Tree& t : forest.trees) total += path_length(t, x);
    return score_from_path(total / static_cast<double>(forest.trees.size()), forest.c_psi);
}

} // namespace detail

/// 2^(-E[path length] / c(psi)); larger means more anomalous.
inline double score(const Forest& forest, std::span<const double> x) {
    if (x.size() != forest.dim) {
        throw DataError("forest expects " + std::to_string(forest.dim) + " features, got " + std::to_string(x.size()));
    }
    if (!forest.scaler) return detail::score_prepared(forest, x);
    std::vector<double> scaled(x.size());
    forest.scaler->apply(x, scaled);
    return detail::score_prepared(forest, scaled);
}

inline std::vector<double> score_all(const Forest& forest, const DataMatrix& data) {
    if (data.rows() > 0 && data.cols() != forest.dim) {
        throw DataError("forest expects " + std::to_string(forest.dim) + " features, got " + std::to_string(data.cols()));
    }
    std::vector<double> out(data.rows());
    for (std::size_t i = 0; i < data.rows(); ++i) out[i] = score(forest, data.row(i));
    return out;
}

} // namespace optiforest
