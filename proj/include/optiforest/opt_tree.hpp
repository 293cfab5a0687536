#pragma once

// Optimal isolation tree construction. An LSH tree is cut at the highest
// nodes holding at most epsilon instances; those subtrees seed a bottom-up
// agglomerative clustering that repeatedly merges the v clusters of minimum
// distortion, v drawn from a branching distribution. Merges become
// nearest-centre routers above the cut.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "optiforest/data.hpp"
#include "optiforest/error.hpp"
#include "optiforest/lsh_tree.hpp"
#include "optiforest/theory.hpp"
#include "optiforest/tree.hpp"

namespace optiforest {

struct Cluster {
    std::vector<double> centre;
    std::size_t size = 0;
    NodeId node = 0;
};

struct CutSet {
    std::vector<Cluster> clusters;
    std::size_t epsilon = 0;
};

/// Largest branching factor accepted for the exhaustive merge search.
inline constexpr std::int64_t kMaxMergeArity = 8;

namespace detail {

inline void check_same_dim(std::span<const Cluster> clusters) {
    for (const auto& c : clusters) {
        if (c.centre.size() != clusters.front().centre.size()) {
            throw DataError("cluster centres have mismatched dimensions (" + std::to_string(c.centre.size()) + " vs " +
                            std::to_string(clusters.front().centre.size()) + ")");
        }
    }
}

inline void cut_visit(const LshTree& lsh, const DataMatrix& data, NodeId id, std::size_t epsilon, CutSet& out) {
    const TreeNode& node = lsh.tree.node(id);
    if (node.size <= epsilon || node.is_leaf()) {
        Cluster c;
        c.centre.assign(data.cols(), 0.0);
        for (std::size_t r : lsh.members(id)) {
            const auto x = data.row(r);
            for (std::size_t j = 0; j < x.size(); ++j) c.centre[j] += x[j];
        }
        for (double& v : c.centre) v /= static_cast<double>(node.size);
        c.size = node.size;
        c.node = id;
        out.clusters.push_back(std::move(c));
        return;
    }
    for (NodeId child : node.children()) cut_visit(lsh, data, child, epsilon, out);
}

// Distortion of the clusters pool[idx[0..k)], using `merged` as scratch.
inline double subset_distortion(std::span<const Cluster> pool, std::span<const std::size_t> idx,
                                std::vector<double>& merged) {
    const std::size_t dim = pool[idx[0]].centre.size();
    merged.assign(dim, 0.0);
    double total = 0.0;
    for (std::size_t i : idx) {
        const double n = static_cast<double>(pool[i].size);
        total += n;
        for (std::size_t j = 0; j < dim; ++j) merged[j] += pool[i].centre[j] * n;
    }
    for (double& m : merged) m /= total;
    double dist = 0.0;
    for (std::size_t i : idx) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = pool[i].centre[j] - merged[j];
            sq += d * d;
        }
        dist += std::sqrt(sq) * static_cast<double>(pool[i].size);
    }
    return dist;
}

} // namespace detail

/// Depth-first traversal returning the highest nodes whose size is at most
/// epsilon. Leaves larger than epsilon (unsplittable duplicates or depth-capped
/// nodes) are taken as clusters too, so the result always partitions the
/// subsample.
inline CutSet epsilon_cut(const LshTree& lsh, const DataMatrix& data, std::size_t epsilon) {
    const std::size_t psi = lsh.tree.node(lsh.tree.root).size;
    if (epsilon < 1 || epsilon > psi) {
        throw ConfigError("cut threshold must lie in [1, " + std::to_string(psi) + "], got " + std::to_string(epsilon));
    }
    CutSet out;
    out.epsilon = epsilon;
    detail::cut_visit(lsh, data, lsh.tree.root, epsilon, out);
    return out;
}

/// Size-weighted mean of the cluster centres.
inline std::vector<double> merged_centre(std::span<const Cluster> clusters) {
    if (clusters.size() < 2) throw ConfigError("merging needs at least 2 clusters");
    detail::check_same_dim(clusters);
    std::vector<double> merged(clusters.front().centre.size(), 0.0);
    double total = 0.0;
    for (const auto& c : clusters) {
        const double n = static_cast<double>(c.size);
        total += n;
        for (std::size_t j = 0; j < merged.size(); ++j) merged[j] += c.centre[j] * n;
    }
    for (double& m : merged) m /= total;
    return merged;
}

/// Sum over clusters of ||centre - merged centre|| * size.
inline double distortion(std::span<const Cluster> clusters) {
    const auto merged = merged_centre(clusters);
    double dist = 0.0;
    for (const auto& c : clusters) {
        double sq = 0.0;
        for (std::size_t j = 0; j < merged.size(); ++j) {
            const double d = c.centre[j] - merged[j];
            sq += d * d;
        }
        dist += std::sqrt(sq) * static_cast<double>(c.size);
    }
    return dist;
}

/// Exhaustive search over all v-subsets of the pool for the minimum
/// distortion. Subsets are visited in lexicographic order of their index
/// tuples and only a strictly smaller distortion replaces the incumbent, so
/// ties resolve to the lexicographically smallest tuple. Returns ascending
/// indices into `pool`.
inline std::vector<std::size_t> best_merge(std::span<const Cluster> pool, std::size_t v) {
    if (v < 2) throw ConfigError("branching factor must be >= 2, got " + std::to_string(v));
    if (pool.size() <= v) {
        throw ConfigError("pool of " + std::to_string(pool.size()) + " clusters is too small for a " +
                          std::to_string(v) + "-way merge");
    }
    detail::check_same_dim(pool);
    const std::size_t n = pool.size();
    std::vector<std::size_t> idx(v);
    for (std::size_t i = 0; i < v; ++i) idx[i] = i;
    std::vector<std::size_t> best = idx;
    std::vector<double> scratch;
    double best_dist = std::numeric_limits<double>::infinity();
    while (true) {
        const double d = detail::subset_distortion(pool, idx, scratch);
        if (d < best_dist) {
            best_dist = d;
            best = idx;
        }
        // Next combination in lexicographic order.
        std::size_t k = v;
        while (k > 0 && idx[k - 1] == n - v + (k - 1)) --k;
        if (k == 0) break;
        ++idx[k - 1];
        for (std::size_t i = k; i < v; ++i) idx[i] = idx[i - 1] + 1;
    }
    return best;
}

/// Rejects laws the exhaustive merge cannot afford: anything unbounded or
/// with support beyond kMaxMergeArity.
inline void check_merge_distribution(const theory::BranchingDistribution& dist) {
    const auto bound = dist.max_support();
    if (bound == 0 || bound > kMaxMergeArity) {
        throw ConfigError("distribution " + dist.name() + " is not supported for tree learning; use finite23 or fixed:<v> with v <= " +
                          std::to_string(kMaxMergeArity));
    }
}

/// Called before each greedy merge with the current pool, the drawn v and the
/// chosen indices.
using MergeObserver =
    std::function<void(std::span<const Cluster> pool, std::size_t v, std::span<const std::size_t> chosen)>;

/// Merges the pool bottom-up on top of the LSH tree arena. Each iteration
/// draws v; when at most v clusters remain they all become children of the
/// root. Otherwise the best v-subset becomes a nearest-centre router whose
/// merged cluster is appended to the end of the pool.
template <class URBG>
Tree grow_from_cut(LshTree lsh, CutSet cut, const theory::BranchingDistribution& dist, URBG& rng,
                   const MergeObserver& observer = {}) {
    Tree tree = std::move(lsh.tree);
    std::vector<Cluster> pool = std::move(cut.clusters);
    const std::size_t dim = pool.empty() ? 0 : pool.front().centre.size();

    const auto make_router = [&](std::span<const Cluster> members) {
        LearnedRouter router;
        router.dim = dim;
        std::uint32_t size = 0;
        for (const auto& c : members) {
            router.centres.insert(router.centres.end(), c.centre.begin(), c.centre.end());
            router.children.push_back(c.node);
            size += static_cast<std::uint32_t>(c.size);
        }
        TreeNode node;
        node.router = std::move(router);
        node.size = size;
        return tree.add(std::move(node));
    };

    while (pool.size() > 1) {
        const auto v = static_cast<std::size_t>(dist.sample(rng));
        if (pool.size() <= v) {
            tree.root = make_router(pool);
            pool.clear();
            break;
        }
        const auto chosen = best_merge(pool, v);
        if (observer) observer(pool, v, chosen);
        std::vector<Cluster> members;
        members.reserve(v);
        for (std::size_t i : chosen) members.push_back(pool[i]);
        Cluster merged;
        merged.centre = merged_centre(members);
        for (const auto& c : members) merged.size += c.size;
        merged.node = make_router(members);
        for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) {
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(*it));
        }
        pool.push_back(std::move(merged));
    }
    if (pool.size() == 1) tree.root = pool.front().node;
    return tree.compact();
}

/// Builds the LSH tree, cuts it at epsilon and merges upward. With
/// epsilon equal to the subsample size the result is the LSH tree itself.
template <class URBG>
Tree build_optimal_tree(const DataMatrix& data, const Subsample& sub, std::size_t epsilon,
                        const theory::BranchingDistribution& dist, URBG& rng, const LshOptions& opts = {},
                        const MergeObserver& observer = {}) {
    check_merge_distribution(dist);
    if (epsilon < 1 || epsilon > sub.size()) {
        throw ConfigError("cut threshold must lie in [1, " + std::to_string(sub.size()) + "], got " +
                          std::to_string(epsilon));
    }
    LshTree lsh = build_lsh_tree(data, sub, rng, opts);
    CutSet cut = epsilon_cut(lsh, data, epsilon);
    return grow_from_cut(std::move(lsh), std::move(cut), dist, rng, observer);
}

} // namespace optiforest
