#pragma once

// Pre-training isolation tree: recursive partitioning of a subsample with
// fresh Euclidean LSH functions, one child per non-empty hash bucket.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "optiforest/data.hpp"
#include "optiforest/error.hpp"
#include "optiforest/random.hpp"
#include "optiforest/tree.hpp"

namespace optiforest {

struct LshOptions {
    /// Bucket width is (projected range) / width_divisor. A divisor of k spans
    /// exactly k+1 buckets over the node's instances.
    double width_divisor = 2.0;
    double min_width = 1e-9;
    /// Redraws of (a, b) when every instance lands in one bucket.
    std::size_t max_redraws = 8;

    /// Options whose draws span exactly `arity` buckets (some may be empty).
    static LshOptions for_arity(std::int64_t arity) {
        if (arity < 2) throw ConfigError("LSH arity must be >= 2, got " + std::to_string(arity));
        LshOptions o;
        o.width_divisor = static_cast<double>(arity - 1);
        return o;
    }
};

/// Height limit 2*ceil(log2(psi)); 0 for a single instance.
inline std::uint32_t lsh_depth_cap(std::size_t psi) {
    if (psi <= 1) return 0;
    return 2u * static_cast<std::uint32_t>(std::ceil(std::log2(static_cast<double>(psi))));
}

/// An LSH tree together with the training rows each node holds. Node `id`
/// owns rows[offset[id] .. offset[id] + size).
struct LshTree {
    Tree tree;
    std::vector<std::size_t> rows;
    std::vector<std::size_t> offset;

    std::span<const std::size_t> members(NodeId id) const {
        return {rows.data() + offset.at(id), tree.node(id).size};
    }
};

namespace detail {

template <class URBG>
class LshBuilder {
public:
    LshBuilder(const DataMatrix& data, const LshOptions& opts, URBG& rng, std::uint32_t depth_cap)
        : data_(data), opts_(opts), rng_(rng), cap_(depth_cap) {}

    LshTree run(std::vector<std::size_t> rows) {
        out_.rows = std::move(rows);
        grow(0, out_.rows.size(), 0);
        out_.tree.root = 0;
        return std::move(out_);
    }

private:
    NodeId make_leaf(std::size_t begin, std::size_t end, std::uint32_t depth) {
        TreeNode n;
        n.router = Leaf{static_cast<std::uint32_t>(end - begin)};
        n.depth = depth;
        n.size = static_cast<std::uint32_t>(end - begin);
        out_.offset.push_back(begin);
        return out_.tree.add(std::move(n));
    }

    bool all_identical(std::size_t begin, std::size_t end) const {
        const auto first = data_.row(out_.rows[begin]);
        for (std::size_t i = begin + 1; i < end; ++i) {
            const auto r = data_.row(out_.rows[i]);
            if (!std::equal(first.begin(), first.end(), r.begin())) return false;
        }
        return true;
    }

    E2LSHFunction draw_direction() {
        E2LSHFunction f;
        f.a.resize(data_.cols());
        for (double& x : f.a) x = standard_normal(rng_);
        return f;
    }

    void project(const E2LSHFunction& f, std::size_t begin, std::size_t end) {
        proj_.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) proj_[i - begin] = f.project(data_.row(out_.rows[i]));
    }

    std::size_t bucketize(const E2LSHFunction& f) {
        hashes_.resize(proj_.size());
        for (std::size_t i = 0; i < proj_.size(); ++i) hashes_[i] = f.bucket(proj_[i]);
        std::vector<std::int64_t> distinct(hashes_);
        std::sort(distinct.begin(), distinct.end());
        return static_cast<std::size_t>(std::unique(distinct.begin(), distinct.end()) - distinct.begin());
    }

    // Splits at a threshold between two distinct projected values near the
    // median, encoded as an E2LSH function with w > range so exactly two
    // buckets appear.
    bool forced_split(E2LSHFunction& f) {
        std::vector<double> sorted(proj_);
        std::sort(sorted.begin(), sorted.end());
        const double range = sorted.back() - sorted.front();
        if (!(range > 0.0)) return false;
        const std::size_t mid = sorted.size() / 2;
        std::size_t cut = sorted.size();
        for (std::size_t step = 0; step < sorted.size(); ++step) {
            const std::size_t hi = mid + step;
            if (hi >= 1 && hi < sorted.size() && sorted[hi - 1] < sorted[hi]) {
                cut = hi;
                break;
            }
            if (mid >= step + 1 && mid - step < sorted.size() && sorted[mid - step - 1] < sorted[mid - step]) {
                cut = mid - step;
                break;
            }
        }
        if (cut == sorted.size()) return false;
        const double threshold = 0.5 * (sorted[cut - 1] + sorted[cut]);
        f.w = 2.0 * range;
        double b = std::ceil(threshold / f.w) * f.w - threshold;
        if (b >= f.w) b -= f.w;
        if (b < 0.0) b = 0.0;
        f.b = b;
        return bucketize(f) >= 2;
    }

    NodeId grow(std::size_t begin, std::size_t end, std::uint32_t depth) {
        const std::size_t size = end - begin;
        if (size <= 1 || depth >= cap_ || all_identical(begin, end)) return make_leaf(begin, end, depth);

        E2LSHFunction f;
        bool split = false;
        bool have_range = false;
        E2LSHFunction ranged;
        std::vector<double> ranged_proj;
        for (std::size_t attempt = 0; attempt <= opts_.max_redraws && !split; ++attempt) {
            f = draw_direction();
            project(f, begin, end);
            const auto [lo, hi] = std::minmax_element(proj_.begin(), proj_.end());
            const double range = *hi - *lo;
            f.w = std::max(opts_.min_width, range / opts_.width_divisor);
            f.b = uniform01(rng_) * f.w;
            split = bucketize(f) >= 2;
            if (range > 0.0) {
                have_range = true;
                ranged = f;
                ranged_proj = proj_;
            }
        }
        if (!split) {
            // Degenerate draws: fall back to a binary median split.
            for (std::size_t attempt = 0; attempt < opts_.max_redraws && !have_range; ++attempt) {
                ranged = draw_direction();
                project(ranged, begin, end);
                const auto [lo, hi] = std::minmax_element(proj_.begin(), proj_.end());
                if (*hi - *lo > 0.0) {
                    have_range = true;
                    ranged_proj = proj_;
                }
            }
            if (!have_range) return make_leaf(begin, end, depth);
            f = ranged;
            proj_ = ranged_proj;
            if (!forced_split(f)) return make_leaf(begin, end, depth);
        }

        // Stable partition by ascending hash.
        std::vector<std::pair<std::int64_t, std::size_t>> keyed(size);
        for (std::size_t i = 0; i < size; ++i) keyed[i] = {hashes_[i], out_.rows[begin + i]};
        std::stable_sort(keyed.begin(), keyed.end(),
                         [](const auto& x, const auto& y) { return x.first < y.first; });
        for (std::size_t i = 0; i < size; ++i) out_.rows[begin + i] = keyed[i].second;

        TreeNode n;
        n.depth = depth;
        n.size = static_cast<std::uint32_t>(size);
        out_.offset.push_back(begin);
        const NodeId id = out_.tree.add(std::move(n));

        LshRouter router;
        router.fn = std::move(f);
        std::size_t start = 0;
        while (start < size) {
            std::size_t stop = start + 1;
            while (stop < size && keyed[stop].first == keyed[start].first) ++stop;
            router.keys.push_back(keyed[start].first);
            router.children.push_back(grow(begin + start, begin + stop, depth + 1));
            start = stop;
        }
        out_.tree.nodes[id].router = std::move(router);
        return id;
    }

    const DataMatrix& data_;
    LshOptions opts_;
    URBG& rng_;
    std::uint32_t cap_;
    LshTree out_;
    std::vector<double> proj_;
    std::vector<std::int64_t> hashes_;
};

} // namespace detail

/// Grows an LSH isolation tree over the subsample. Nodes stop splitting when
/// they hold one instance, only identical instances, or reach the depth cap.
template <class URBG>
LshTree build_lsh_tree(const DataMatrix& data, const Subsample& sub, URBG& rng, const LshOptions& opts = {}) {
    if (sub.size() == 0) throw ConfigError("cannot build a tree over an empty subsample");
    for (std::size_t r : sub.indices) {
        if (r >= data.rows()) throw DataError("subsample index " + std::to_string(r) + " out of range");
    }
    if (!(opts.width_divisor > 0.0)) throw ConfigError("LSH width divisor must be positive");
    detail::LshBuilder<URBG> builder(data, opts, rng, lsh_depth_cap(sub.size()));
    return builder.run(sub.indices);
}

} // namespace optiforest
