#include <cmath>
#include <variant>
#include <vector>

#include <gtest/gtest.h>

#include "optiforest/opt_tree.hpp"
#include "test_util.hpp"

using namespace optiforest;
using optiforest::testing::all_rows;
using optiforest::testing::brute_force_merge;
using optiforest::testing::gaussian;
using optiforest::testing::leaf_count_sum;

namespace {

Cluster cluster(std::vector<double> centre, std::size_t size) { return Cluster{std::move(centre), size, 0}; }

// Nine points in three tight groups, arranged as a two-level ternary tree:
// the root splits into three groups of three, each group into singletons.
struct TernaryFixture {
    DataMatrix data;
    LshTree lsh;
};

TernaryFixture ternary_tree() {
    std::vector<double> v;
    for (int g = 0; g < 3; ++g)
        for (int k = 0; k < 3; ++k) {
            v.push_back(10.0 * g + k);
            v.push_back(0.0);
        }
    TernaryFixture f{DataMatrix(9, 2, v), {}};
    auto& t = f.lsh.tree;
    const auto router = [](std::vector<NodeId> kids, std::uint32_t size, std::uint32_t depth) {
        LshRouter r;
        for (std::int64_t k = 0; k < static_cast<std::int64_t>(kids.size()); ++k) r.keys.push_back(k);
        r.children = std::move(kids);
        TreeNode n;
        n.router = std::move(r);
        n.size = size;
        n.depth = depth;
        return n;
    };
    const auto leaf = [] {
        TreeNode n;
        n.router = Leaf{1};
        n.size = 1;
        n.depth = 2;
        return n;
    };
    t.add(router({1, 5, 9}, 9, 0));
    for (int g = 0; g < 3; ++g) {
        const auto base = static_cast<NodeId>(1 + 4 * g);
        t.add(router({base + 1, base + 2, base + 3}, 3, 1));
        for (int k = 0; k < 3; ++k) t.add(leaf());
    }
    for (std::size_t i = 0; i < 9; ++i) f.lsh.rows.push_back(i);
    f.lsh.offset = {0, 0, 0, 1, 2, 3, 3, 4, 5, 6, 6, 7, 8};
    return f;
}

TEST(EpsilonCut, TernaryTreeAtThree) {
    const auto f = ternary_tree();
    const auto cut = epsilon_cut(f.lsh, f.data, 3);
    ASSERT_EQ(cut.clusters.size(), 3u);
    for (std::size_t g = 0; g < 3; ++g) {
        EXPECT_EQ(cut.clusters[g].size, 3u);
        EXPECT_DOUBLE_EQ(cut.clusters[g].centre[0], 10.0 * static_cast<double>(g) + 1.0);
        EXPECT_EQ(cut.clusters[g].centre[1], 0.0);
    }
    EXPECT_EQ(cut.clusters[1].node, 5u);
}

TEST(EpsilonCut, BoundaryThresholds) {
    const auto f = ternary_tree();
    EXPECT_EQ(epsilon_cut(f.lsh, f.data, 1).clusters.size(), 9u);
    EXPECT_EQ(epsilon_cut(f.lsh, f.data, 2).clusters.size(), 9u);
    const auto whole = epsilon_cut(f.lsh, f.data, 9);
    ASSERT_EQ(whole.clusters.size(), 1u);
    EXPECT_EQ(whole.clusters[0].node, 0u);
    EXPECT_DOUBLE_EQ(whole.clusters[0].centre[0], 11.0);
    EXPECT_THROW(epsilon_cut(f.lsh, f.data, 0), ConfigError);
    EXPECT_THROW(epsilon_cut(f.lsh, f.data, 10), ConfigError);
}

TEST(EpsilonCut, PartitionsRandomSubsample) {
    const auto d = gaussian(300, 3, 21);
    for (std::size_t eps : {1u, 5u, 55u, 300u}) {
        Rng rng(eps);
        const auto lsh = build_lsh_tree(d, all_rows(d), rng);
        const auto cut = epsilon_cut(lsh, d, eps);
        std::size_t total = 0;
        for (const auto& c : cut.clusters) {
            total += c.size;
            const auto& node = lsh.tree.node(c.node);
            if (!node.is_leaf()) { EXPECT_LE(c.size, eps); }
        }
        EXPECT_EQ(total, 300u);
    }
}

TEST(MergedCentre, Examples) {
    const std::vector<Cluster> a{cluster({0, 0}, 2), cluster({3, 3}, 1)};
    EXPECT_EQ(merged_centre(a), (std::vector<double>{1.0, 1.0}));
    const std::vector<Cluster> b{cluster({0, 0}, 1), cluster({2, 0}, 1)};
    EXPECT_EQ(merged_centre(b), (std::vector<double>{1.0, 0.0}));
    const std::vector<Cluster> same{cluster({1.5, -2}, 4), cluster({1.5, -2}, 1), cluster({1.5, -2}, 7)};
    EXPECT_EQ(merged_centre(same), (std::vector<double>{1.5, -2.0}));
}

TEST(MergedCentre, Errors) {
    const std::vector<Cluster> one{cluster({0, 0}, 1)};
    EXPECT_THROW(merged_centre(one), ConfigError);
    const std::vector<Cluster> mixed{cluster({0, 0}, 1), cluster({0}, 1)};
    EXPECT_THROW(merged_centre(mixed), DataError);
    EXPECT_THROW(distortion(mixed), DataError);
}

TEST(Distortion, Examples) {
    EXPECT_DOUBLE_EQ(distortion(std::vector<Cluster>{cluster({0, 0}, 1), cluster({2, 0}, 1)}), 2.0);
    EXPECT_EQ(distortion(std::vector<Cluster>{cluster({4, 4}, 2), cluster({4, 4}, 5)}), 0.0);
    EXPECT_DOUBLE_EQ(distortion(std::vector<Cluster>{cluster({0, 0}, 3), cluster({4, 0}, 1)}), 6.0);
}

TEST(BestMerge, NearPair) {
    const std::vector<Cluster> pool{cluster({0, 0}, 1), cluster({0.1, 0}, 1), cluster({9, 9}, 1)};
    EXPECT_EQ(best_merge(pool, 2), (std::vector<std::size_t>{0, 1}));
}

TEST(BestMerge, TiesGoToFirstTuple) {
    // Unit vectors are pairwise equidistant.
    const std::vector<Cluster> pool{cluster({1, 0, 0}, 1), cluster({0, 1, 0}, 1), cluster({0, 0, 1}, 1)};
    EXPECT_EQ(best_merge(pool, 2), (std::vector<std::size_t>{0, 1}));
    const std::vector<Cluster> same{cluster({2, 2}, 1), cluster({2, 2}, 1), cluster({2, 2}, 1), cluster({2, 2}, 1)};
    EXPECT_EQ(best_merge(same, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(BestMerge, Errors) {
    const std::vector<Cluster> pool{cluster({0}, 1), cluster({1}, 1)};
    EXPECT_THROW(best_merge(pool, 2), ConfigError);
    EXPECT_THROW(best_merge(pool, 1), ConfigError);
}

TEST(BestMerge, MatchesBruteForce) {
    Rng rng(31);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t v = 2 + uniform_index(rng, 2);
        const std::size_t n = v + 1 + uniform_index(rng, 8 - v);
        const std::size_t dim = 1 + uniform_index(rng, 3);
        std::vector<Cluster> pool;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> c(dim);
            // Coarse integer grid so exact ties occur regularly.
            for (double& x : c) x = static_cast<double>(uniform_index(rng, 4));
            pool.push_back(cluster(std::move(c), 1 + uniform_index(rng, 3)));
        }
        ASSERT_EQ(best_merge(pool, v), brute_force_merge(pool, v)) << "trial " << trial;
    }
}

TEST(LearnedRoute, Examples) {
    LearnedRouter two{2, {0, 0, 10, 10}, {7, 8}};
    EXPECT_EQ(learned_route(two, std::vector<double>{1, 1}), 0u);
    EXPECT_EQ(learned_route(two, std::vector<double>{5, 5}), 0u);
    EXPECT_EQ(learned_route(two, std::vector<double>{6, 5}), 1u);
    LearnedRouter three{2, {0, 0, 2, 0, 4, 0}, {1, 2, 3}};
    EXPECT_EQ(learned_route(three, std::vector<double>{2.9, 0}), 1u);
    EXPECT_EQ(learned_route(three, std::vector<double>{3.0, 0}), 1u);
    EXPECT_THROW(learned_route(three, std::vector<double>{1.0}), DataError);
}

TEST(BuildOptimalTree, FourPointsPairNeighbours) {
    const DataMatrix d(4, 2, {0, 0, 0.1, 0, 10, 10, 10.1, 10});
    const auto dist = theory::BranchingDistribution::fixed(2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::vector<std::vector<double>> merged_pairs;
        const auto t = build_optimal_tree(d, all_rows(d), 1, dist, rng, {},
                                          [&](std::span<const Cluster> pool, std::size_t, std::span<const std::size_t> chosen) {
                                              ASSERT_EQ(chosen.size(), 2u);
                                              const auto& a = pool[chosen[0]].centre;
                                              const auto& b = pool[chosen[1]].centre;
                                              merged_pairs.push_back({a[0], a[1], b[0], b[1]});
                                          });
        ASSERT_EQ(merged_pairs.size(), 2u);
        for (const auto& p : merged_pairs) {
            EXPECT_NEAR(std::hypot(p[0] - p[2], p[1] - p[3]), 0.1, 1e-12);
        }
        EXPECT_NE(merged_pairs[0][0] < 5.0, merged_pairs[1][0] < 5.0);

        const auto& root = std::get<LearnedRouter>(t.node(t.root).router);
        ASSERT_EQ(root.children.size(), 2u);
        for (NodeId c : root.children) {
            const auto& child = std::get<LearnedRouter>(t.node(c).router);
            EXPECT_EQ(child.children.size(), 2u);
            EXPECT_EQ(t.node(c).size, 2u);
        }
        EXPECT_EQ(leaf_count_sum(t), 4u);
    }
}

TEST(BuildOptimalTree, FullThresholdReproducesLshTree) {
    const auto d = gaussian(128, 3, 41);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng a(seed), b(seed);
        const auto lsh = build_lsh_tree(d, all_rows(d), a);
        const auto opt = build_optimal_tree(d, all_rows(d), 128, theory::BranchingDistribution::finite23(), b);
        EXPECT_EQ(opt, lsh.tree);
    }
}

TEST(BuildOptimalTree, RejectsUnsupportedSettings) {
    const auto d = gaussian(16, 2, 1);
    Rng rng(1);
    EXPECT_THROW(build_optimal_tree(d, all_rows(d), 1, theory::BranchingDistribution::geometric(), rng), ConfigError);
    EXPECT_THROW(build_optimal_tree(d, all_rows(d), 1, theory::BranchingDistribution::factorial(), rng), ConfigError);
    EXPECT_THROW(build_optimal_tree(d, all_rows(d), 1, theory::BranchingDistribution::fixed(9), rng), ConfigError);
    EXPECT_THROW(build_optimal_tree(d, all_rows(d), 0, theory::BranchingDistribution::finite23(), rng), ConfigError);
    EXPECT_THROW(build_optimal_tree(d, all_rows(d), 17, theory::BranchingDistribution::finite23(), rng), ConfigError);
}

void check_stratified(const Tree& t, NodeId id, bool below_lsh) {
    const auto& n = t.node(id);
    if (std::holds_alternative<LearnedRouter>(n.router)) { EXPECT_FALSE(below_lsh); }
    const bool lsh = below_lsh || std::holds_alternative<LshRouter>(n.router);
    for (NodeId c : n.children()) check_stratified(t, c, lsh);
}

TEST(BuildOptimalTree, StructuralInvariants) {
    const auto dist = theory::BranchingDistribution::finite23();
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto d = gaussian(40 + seed, 2 + seed % 3, seed + 100);
        const std::size_t eps = 1 + seed % 12;
        Rng rng(seed);
        std::vector<std::size_t> pool_sizes, draws;
        const auto t = build_optimal_tree(d, all_rows(d), eps, dist, rng, {},
                                          [&](std::span<const Cluster> pool, std::size_t v, std::span<const std::size_t>) {
                                              pool_sizes.push_back(pool.size());
                                              draws.push_back(v);
                                          });
        EXPECT_EQ(leaf_count_sum(t), d.rows());
        check_stratified(t, t.root, false);
        for (std::size_t i = 1; i < pool_sizes.size(); ++i) {
            EXPECT_EQ(pool_sizes[i], pool_sizes[i - 1] - (draws[i - 1] - 1));
        }
        std::size_t learned = 0;
        for (NodeId id = 0; id < t.size(); ++id) {
            const auto* r = std::get_if<LearnedRouter>(&t.node(id).router);
            if (!r) continue;
            ++learned;
            EXPECT_EQ(r->centres.size(), r->children.size() * r->dim);
            std::size_t sum = 0;
            for (NodeId c : r->children) sum += t.node(c).size;
            EXPECT_EQ(sum, t.node(id).size);
            if (id != t.root) {
                EXPECT_TRUE(r->children.size() == 2 || r->children.size() == 3);
            } else {
                EXPECT_GE(r->children.size(), 2u);
                EXPECT_LE(r->children.size(), 3u);
            }
        }
        // Every observed merge made one learned router; the final merge made the root.
        EXPECT_EQ(learned, draws.size() + (std::holds_alternative<LearnedRouter>(t.node(t.root).router) ? 1 : 0));
    }
}

TEST(BuildOptimalTree, RootCentrePreservesMean) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto d = gaussian(64, 3, seed + 7, 5.0);
        Rng rng(seed);
        const auto t = build_optimal_tree(d, all_rows(d), 1 + seed % 4, theory::BranchingDistribution::finite23(), rng);
        const auto& root = std::get<LearnedRouter>(t.node(t.root).router);
        std::vector<Cluster> top;
        for (std::size_t k = 0; k < root.children.size(); ++k) {
            const auto c = root.centre(k);
            top.push_back(cluster({c.begin(), c.end()}, t.node(root.children[k]).size));
        }
        const auto mu = merged_centre(top);
        for (std::size_t j = 0; j < d.cols(); ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < d.rows(); ++i) mean += d(i, j);
            mean /= static_cast<double>(d.rows());
            EXPECT_NEAR(mu[j], mean, 1e-9 * std::max(1.0, std::abs(mean)));
        }
    }
}

TEST(BuildOptimalTree, EveryMergeIsExhaustiveMinimum) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto d = gaussian(5 + seed % 8, 2, seed + 500);
        Rng rng(seed);
        build_optimal_tree(d, all_rows(d), 1, theory::BranchingDistribution::finite23(), rng, {},
                           [&](std::span<const Cluster> pool, std::size_t v, std::span<const std::size_t> chosen) {
                               const auto expected = brute_force_merge(pool, v);
                               EXPECT_TRUE(std::equal(chosen.begin(), chosen.end(), expected.begin(), expected.end()));
                           });
    }
}

// Draws that trigger the final merge are excluded, which biases the mean
// slightly toward 2; with ~45 merges per tree the effect is below 0.005.
TEST(BuildOptimalTree, Finite23MergeArityMeanIsE) {
    const auto dist = theory::BranchingDistribution::finite23();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; count < 10000; ++seed) {
        const auto d = gaussian(64, 2, seed + 9000);
        Rng rng(seed);
        const auto t = build_optimal_tree(d, all_rows(d), 1, dist, rng);
        for (NodeId id = 0; id < t.size(); ++id) {
            if (id == t.root) continue;
            if (const auto* r = std::get_if<LearnedRouter>(&t.node(id).router)) {
                sum += static_cast<double>(r->children.size());
                ++count;
            }
        }
    }
    EXPECT_NEAR(sum / static_cast<double>(count), theory::kE, 0.02);
}

} // namespace
