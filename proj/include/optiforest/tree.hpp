#pragma once

// Node storage shared by LSH trees and optimal trees. A tree is a flat arena of
// nodes addressed by index; after compact() the arena is in depth-first
// pre-order with the root at index 0 and children in router order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "optiforest/error.hpp"

namespace optiforest {

using NodeId = std::uint32_t;

/// Euclidean LSH function h(x) = floor((a.x + b) / w).
struct E2LSHFunction {
    std::vector<double> a;
    double b = 0.0;
    double w = 1.0;

    double project(std::span<const double> x) const {
        if (x.size() != a.size()) {
            throw DataError("hash expects dimension " + std::to_string(a.size()) + ", got " + std::to_string(x.size()));
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * x[j];
        return dot;
    }

    /// Bucket of an already projected value; saturates at the int64 range.
    std::int64_t bucket(double projection) const noexcept {
        constexpr double lo = -9.2e18;
        constexpr double hi = 9.2e18;
        double q = std::floor((projection + b) / w);
        if (!(q >= lo)) q = lo;
        if (q > hi) q = hi;
        return static_cast<std::int64_t>(q);
    }

    std::int64_t hash(std::span<const double> x) const { return bucket(project(x)); }

    friend bool operator==(const E2LSHFunction&, const E2LSHFunction&) = default;
};

inline std::int64_t lsh_hash(const E2LSHFunction& f, std::span<const double> x) { return f.hash(x); }

struct LshRouter {
    E2LSHFunction fn;
    std::vector<std::int64_t> keys;  // ascending hash values
    std::vector<NodeId> children;    // children[i] receives hash keys[i]

    /// Position of hash value h in keys, or npos when no training bucket matched.
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t find(std::int64_t h) const noexcept {
        std::size_t lo = 0, hi = keys.size();
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (keys[mid] < h) lo = mid + 1;
            else hi = mid;
        }
        return lo < keys.size() && keys[lo] == h ? lo : npos;
    }

    friend bool operator==(const LshRouter&, const LshRouter&) = default;
};

/// Nearest-centre router; centres are stored row-major, one per child.
struct LearnedRouter {
    std::size_t dim = 0;
    std::vector<double> centres;
    std::vector<NodeId> children;

    std::span<const double> centre(std::size_t k) const noexcept { return {centres.data() + k * dim, dim}; }

    friend bool operator==(const LearnedRouter&, const LearnedRouter&) = default;
};

/// Index of the nearest centre under Euclidean distance; ties go to the
/// smallest index.
inline std::size_t learned_route(const LearnedRouter& router, std::span<const double> x) {
    if (x.size() != router.dim) {
        throw DataError("router expects dimension " + std::to_string(router.dim) + ", got " + std::to_string(x.size()));
    }
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < router.children.size(); ++k) {
        const auto c = router.centre(k);
        double d2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double diff = x[j] - c[j];
            d2 += diff * diff;
        }
        if (d2 < best_d2) {
            best_d2 = d2;
            best = k;
        }
    }
    return best;
}

struct Leaf {
    std::uint32_t count = 0;
    friend bool operator==(const Leaf&, const Leaf&) = default;
};

struct TreeNode {
    std::variant<Leaf, LshRouter, LearnedRouter> router;
    std::uint32_t depth = 0;
    std::uint32_t size = 0; // training instances that reached this node

    bool is_leaf() const noexcept { return std::holds_alternative<Leaf>(router); }

    std::span<const NodeId> children() const noexcept {
        if (const auto* r = std::get_if<LshRouter>(&router)) return r->children;
        if (const auto* r = std::get_if<LearnedRouter>(&router)) return r->children;
        return {};
    }

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class Tree {
public:
    std::vector<TreeNode> nodes;
    NodeId root = 0;

    const TreeNode& node(NodeId id) const { return nodes.at(id); }
    std::size_t size() const noexcept { return nodes.size(); }

    NodeId add(TreeNode n) {
        nodes.push_back(std::move(n));
        return static_cast<NodeId>(nodes.size() - 1);
    }

    /// Drops unreachable nodes, renumbers in pre-order from the root and
    /// recomputes depths.
    Tree compact() const {
        Tree out;
        out.nodes.reserve(nodes.size());
        copy_subtree(root, 0, out);
        out.root = 0;
        return out;
    }

    friend bool operator==(const Tree&, const Tree&) = default;

private:
    NodeId copy_subtree(NodeId id, std::uint32_t depth, Tree& out) const {
        const NodeId mine = out.add(nodes.at(id));
        out.nodes[mine].depth = depth;
        const auto kids = nodes[id].children();
        std::vector<NodeId> renamed;
        renamed.reserve(kids.size());
        for (NodeId c : kids) renamed.push_back(copy_subtree(c, depth + 1, out));
        std::visit(
            [&](auto& r) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(r)>, Leaf>) r.children = std::move(renamed);
            },
            out.nodes[mine].router);
        return mine;
    }
};

} // namespace optiforest
