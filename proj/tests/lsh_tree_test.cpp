#include <cmath>
#include <functional>
#include <variant>
#include <vector>

#include <gtest/gtest.h>

#include "optiforest/lsh_tree.hpp"
#include "test_util.hpp"

using namespace optiforest;
using optiforest::testing::all_rows;
using optiforest::testing::gaussian;
using optiforest::testing::leaf_count_sum;

namespace {

TEST(LshHash, Examples) {
    E2LSHFunction f{{1.0, 0.0}, 0.0, 1.0};
    const std::vector<double> x{2.3, 9.0};
    EXPECT_EQ(lsh_hash(f, x), 2);
    f.b = 0.8;
    EXPECT_EQ(lsh_hash(f, x), 3);
    const std::vector<double> neg{-0.5, 1.0};
    f.b = 0.0;
    EXPECT_EQ(lsh_hash(f, neg), -1);
}

TEST(LshHash, EqualPointsCollide) {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        E2LSHFunction f{{standard_normal(rng), standard_normal(rng), standard_normal(rng)}, uniform01(rng), 0.37};
        const std::vector<double> x{standard_normal(rng), standard_normal(rng), standard_normal(rng)};
        const std::vector<double> y = x;
        EXPECT_EQ(lsh_hash(f, x), lsh_hash(f, y));
    }
}

TEST(LshHash, DimensionMismatchAndSaturation) {
    E2LSHFunction f{{1.0, 0.0}, 0.0, 1e-9};
    EXPECT_THROW(lsh_hash(f, std::vector<double>{1.0}), DataError);
    EXPECT_EQ(lsh_hash(f, std::vector<double>{1e300, 0.0}), static_cast<std::int64_t>(9.2e18));
    EXPECT_EQ(lsh_hash(f, std::vector<double>{-1e300, 0.0}), static_cast<std::int64_t>(-9.2e18));
}

TEST(BuildLshTree, SingleInstanceIsLeaf) {
    const auto d = gaussian(1, 3, 1);
    Rng rng(1);
    const auto t = build_lsh_tree(d, all_rows(d), rng);
    ASSERT_EQ(t.tree.size(), 1u);
    const auto& root = t.tree.node(0);
    EXPECT_TRUE(root.is_leaf());
    EXPECT_EQ(std::get<Leaf>(root.router).count, 1u);
    EXPECT_EQ(root.depth, 0u);
}

TEST(BuildLshTree, IdenticalRowsStayTogether) {
    const DataMatrix d(6, 2, std::vector<double>(12, 3.25));
    Rng rng(2);
    const auto t = build_lsh_tree(d, all_rows(d), rng);
    ASSERT_EQ(t.tree.size(), 1u);
    EXPECT_EQ(std::get<Leaf>(t.tree.node(0).router).count, 6u);
}

TEST(BuildLshTree, SeparatedInstancesIsolate) {
    // 3x3 grid with wide spacing.
    std::vector<double> v;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            v.push_back(100.0 * i);
            v.push_back(100.0 * j);
        }
    const DataMatrix d(9, 2, v);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto t = build_lsh_tree(d, all_rows(d), rng);
        EXPECT_EQ(leaf_count_sum(t.tree), 9u);
        for (const auto& n : t.tree.nodes) {
            if (n.is_leaf()) { EXPECT_EQ(n.size, 1u); }
        }
    }
}

TEST(BuildLshTree, ConservesInstances) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const auto d = gaussian(40 + seed % 60, 1 + seed % 5, seed * 31 + 1);
        const auto t = build_lsh_tree(d, all_rows(d), rng);
        ASSERT_EQ(leaf_count_sum(t.tree), d.rows()) << "seed " << seed;
        for (const auto& n : t.tree.nodes) {
            if (n.is_leaf()) continue;
            std::size_t sum = 0;
            for (NodeId c : n.children()) {
                EXPECT_GE(t.tree.node(c).size, 1u);
                sum += t.tree.node(c).size;
            }
            EXPECT_EQ(sum, n.size);
            EXPECT_GE(n.children().size(), 2u);
        }
    }
}

TEST(BuildLshTree, DeterministicForSeed) {
    const auto d = gaussian(200, 4, 11);
    Rng a(5), b(5);
    const auto ta = build_lsh_tree(d, all_rows(d), a);
    const auto tb = build_lsh_tree(d, all_rows(d), b);
    EXPECT_EQ(ta.tree, tb.tree);
    EXPECT_EQ(ta.rows, tb.rows);
}

TEST(BuildLshTree, BucketFidelity) {
    const auto d = gaussian(300, 3, 12);
    Rng rng(6);
    const auto t = build_lsh_tree(d, all_rows(d), rng);
    for (NodeId id = 0; id < t.tree.size(); ++id) {
        const auto* r = std::get_if<LshRouter>(&t.tree.node(id).router);
        if (!r) continue;
        EXPECT_TRUE(std::is_sorted(r->keys.begin(), r->keys.end()));
        for (std::size_t k = 0; k < r->children.size(); ++k) {
            for (std::size_t row : t.members(r->children[k])) {
                EXPECT_EQ(lsh_hash(r->fn, d.row(row)), r->keys[k]);
            }
        }
    }
}

TEST(BuildLshTree, DepthCapAndBranching) {
    const auto d = gaussian(512, 2, 13);
    Rng rng(7);
    const auto t = build_lsh_tree(d, all_rows(d), rng);
    const auto cap = lsh_depth_cap(512);
    EXPECT_EQ(cap, 18u);
    double children = 0.0;
    std::size_t internal = 0;
    for (const auto& n : t.tree.nodes) {
        EXPECT_LE(n.depth, cap);
        if (!n.is_leaf()) {
            children += static_cast<double>(n.children().size());
            ++internal;
        }
    }
    ASSERT_GT(internal, 0u);
    EXPECT_GE(children / static_cast<double>(internal), 2.0);
}

TEST(BuildLshTree, ArityOptionBoundsChildCount) {
    const auto d = gaussian(256, 3, 14);
    for (std::int64_t arity : {2, 3, 5, 8}) {
        Rng rng(static_cast<std::uint64_t>(arity));
        const auto t = build_lsh_tree(d, all_rows(d), rng, LshOptions::for_arity(arity));
        for (const auto& n : t.tree.nodes) {
            if (!n.is_leaf()) { EXPECT_LE(n.children().size(), static_cast<std::size_t>(arity)); }
        }
        if (arity == 2) {
            for (const auto& n : t.tree.nodes) {
                if (!n.is_leaf()) { EXPECT_EQ(n.children().size(), 2u); }
            }
        }
    }
}

// Points that differ by less than the minimum bucket width can only be
// separated by the forced median split.
TEST(BuildLshTree, ForcedSplitSeparatesNearDuplicates) {
    const DataMatrix d(4, 1, {0.0, 1e-12, 2e-12, 3e-12});
    Rng rng(9);
    const auto t = build_lsh_tree(d, all_rows(d), rng);
    EXPECT_EQ(leaf_count_sum(t.tree), 4u);
    EXPECT_GT(t.tree.size(), 1u);
    const auto& root = std::get<LshRouter>(t.tree.node(0).router);
    EXPECT_EQ(root.children.size(), 2u);
    EXPECT_EQ(t.tree.node(root.children[0]).size, 2u);
}

TEST(BuildLshTree, RejectsEmptySubsample) {
    const auto d = gaussian(5, 2, 1);
    Rng rng(1);
    EXPECT_THROW(build_lsh_tree(d, Subsample{}, rng), ConfigError);
}

TEST(TreeCompact, PreservesStructure) {
    const auto d = gaussian(100, 2, 15);
    Rng rng(10);
    const auto t = build_lsh_tree(d, all_rows(d), rng);
    // The builder already emits pre-order, so compaction is the identity.
    EXPECT_EQ(t.tree.compact(), t.tree);
}

} // namespace
