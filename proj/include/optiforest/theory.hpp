#pragma once

// Isolation-efficiency mathematics and branching-factor distributions.
//
// A tree with branching factor v and depth d isolates psi = v^d instances
// (capacity) using an area phi = v*d. Efficiency eta = psi/phi. For a fixed
// area Phi the efficiency (1/Phi) v^(Phi/v) peaks at v = e, which motivates
// drawing branching factors from laws whose mean is e.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "optiforest/error.hpp"
#include "optiforest/random.hpp"

namespace optiforest::theory {

inline constexpr double kE = std::numbers::e;

/// Largest exponent accepted before v^d is considered an overflow.
inline constexpr double kMaxLogCapacity = 700.0;

struct EfficiencyPoint {
    double v = 0.0;   // branching factor
    double d = 0.0;   // depth
    double psi = 0.0; // capacity, v^d
    double phi = 0.0; // area, v*d
    double eta = 0.0; // efficiency, psi/phi
};

namespace detail {

inline void check_branching(double v) {
    if (!(v > 1.0) || !std::isfinite(v)) {
        throw std::domain_error("branching factor must be a finite real > 1, got " + std::to_string(v));
    }
}

inline void check_positive(double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw std::domain_error(std::string(what) + " must be a finite real > 0, got " + std::to_string(x));
    }
}

inline void check_capacity(double log_capacity) {
    if (log_capacity > kMaxLogCapacity) {
        throw std::overflow_error("isolation capacity overflows (log capacity " +
                                  std::to_string(log_capacity) + " > 700)");
    }
}

} // namespace detail

inline EfficiencyPoint efficiency_point(double v, double d) {
    detail::check_branching(v);
    detail::check_positive(d, "depth");
    detail::check_capacity(d * std::log(v));
    EfficiencyPoint p;
    p.v = v;
    p.d = d;
    p.psi = std::pow(v, d);
    p.phi = v * d;
    p.eta = p.psi / p.phi;
    return p;
}

/// v^d / (v*d).
inline double isolation_efficiency(double v, double d) {
    return efficiency_point(v, d).eta;
}

/// Efficiency of a tree whose area is pinned to Phi: (1/Phi) v^(Phi/v).
inline double efficiency_at_fixed_area(double v, double area) {
    detail::check_branching(v);
    detail::check_positive(area, "isolation area");
    detail::check_capacity(area / v * std::log(v));
    return std::pow(v, area / v) / area;
}

/// Derivative in the closed form v^(Phi/v - 2) (1 - ln v).
///
/// This is the published form; it differs from d/dv of efficiency_at_fixed_area
/// by a positive factor, so only its sign and zero (v = e) are meaningful.
inline double efficiency_derivative(double v, double area) {
    detail::check_branching(v);
    detail::check_positive(area, "isolation area");
    detail::check_capacity((area / v - 2.0) * std::log(v));
    return std::pow(v, area / v - 2.0) * (1.0 - std::log(v));
}

/// Golden-section maximization of efficiency_at_fixed_area over [1+tol, 32].
/// The log of the objective is maximized so large areas cannot overflow.
inline double optimal_branching(double area, double tol) {
    detail::check_positive(area, "isolation area");
    if (!(tol > 0.0 && tol < 0.1)) {
        throw std::domain_error("tolerance must lie in (0, 0.1), got " + std::to_string(tol));
    }
    const auto log_eta = [area](double v) { return area / v * std::log(v) - std::log(area); };
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 1.0 + tol;
    double hi = 32.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = log_eta(x1);
    double f2 = log_eta(x2);
    // Stop well below tol; the flat peak limits attainable accuracy to ~1e-8.
    const double stop = std::max(tol * 1e-2, 1e-9);
    while (hi - lo > stop) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = log_eta(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = log_eta(x1);
        }
    }
    return 0.5 * (lo + hi);
}

/// Upper bound (e-2)/(v-2) on Pr(V >= v) for any law with mean e.
inline double tail_bound(std::int64_t v) {
    if (v < 3) {
        throw std::domain_error("tail bound requires v >= 3, got " + std::to_string(v));
    }
    return (kE - 2.0) / static_cast<double>(v - 2);
}

enum class DistributionKind { Finite23, Geometric, Factorial, Fixed };

/// Probability law over integer branching factors v >= 2.
///
/// The sampling table is built once at construction: exact for the finite
/// kinds, and for the unbounded kinds truncated at v = 64 or where the
/// normalized cumulative mass exceeds 1 - 1e-12, with the residual mass given
/// to the last value kept.
class BranchingDistribution {
public:
    static constexpr std::int64_t kSampleHorizon = 64;
    static constexpr double kSampleMassCutoff = 1.0 - 1e-12;

    static BranchingDistribution finite23() { return BranchingDistribution(DistributionKind::Finite23, 0); }
    static BranchingDistribution geometric() { return BranchingDistribution(DistributionKind::Geometric, 0); }
    static BranchingDistribution factorial() { return BranchingDistribution(DistributionKind::Factorial, 0); }
    static BranchingDistribution fixed(std::int64_t v) {
        if (v < 2) {
            throw ConfigError("fixed branching factor must be >= 2, got " + std::to_string(v));
        }
        return BranchingDistribution(DistributionKind::Fixed, v);
    }

    DistributionKind kind() const noexcept { return kind_; }
    /// Branching factor of a Fixed law; 0 for the other kinds.
    std::int64_t fixed_value() const noexcept { return fixed_; }

    /// Largest value with non-zero probability, or 0 when unbounded.
    std::int64_t max_support() const noexcept {
        switch (kind_) {
        case DistributionKind::Finite23: return 3;
        case DistributionKind::Fixed: return fixed_;
        default: return 0;
        }
    }

    /// Closed-form p_v. Zero outside the support, including v < 2.
    double pmf(std::int64_t v) const {
        if (v < 2) {
            return 0.0;
        }
        switch (kind_) {
        case DistributionKind::Finite23:
            if (v == 2) return 3.0 - kE;
            if (v == 3) return kE - 2.0;
            return 0.0;
        case DistributionKind::Geometric:
            // Sums to e(e-1)/(2e-1) ~= 1.0528 rather than 1; the sampler normalizes.
            return (kE - 1.0) * (kE - 1.0) / (2.0 * kE - 1.0) * std::exp(2.0 - static_cast<double>(v));
        case DistributionKind::Factorial: {
            if (v > 170) return 0.0;
            double factorial = 1.0;
            for (std::int64_t k = 2; k <= v; ++k) factorial *= static_cast<double>(k);
            return static_cast<double>(v - 1) / factorial;
        }
        case DistributionKind::Fixed:
            return v == fixed_ ? 1.0 : 0.0;
        }
        return 0.0;
    }

    template <class URBG>
    std::int64_t sample(URBG& rng) const {
        const double u = uniform01(rng);
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
        return values_[idx];
    }

    /// Values and their sampling probabilities (normalized, truncated).
    const std::vector<std::int64_t>& sample_values() const noexcept { return values_; }
    std::vector<double> sample_probabilities() const {
        std::vector<double> out(cdf_.size());
        double prev = 0.0;
        for (std::size_t i = 0; i < cdf_.size(); ++i) {
            out[i] = cdf_[i] - prev;
            prev = cdf_[i];
        }
        return out;
    }

    std::string name() const {
        switch (kind_) {
        case DistributionKind::Finite23: return "finite23";
        case DistributionKind::Geometric: return "geometric";
        case DistributionKind::Factorial: return "factorial";
        case DistributionKind::Fixed: return "fixed:" + std::to_string(fixed_);
        }
        return "unknown";
    }

    /// Inverse of name(): finite23, geometric, factorial, fixed:<v>.
    static BranchingDistribution parse(const std::string& text) {
        if (text == "finite23") return finite23();
        if (text == "geometric") return geometric();
        if (text == "factorial") return factorial();
        if (text.rfind("fixed:", 0) == 0) {
            const std::string digits = text.substr(6);
            if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
                throw ConfigError("malformed fixed distribution '" + text + "', expected fixed:<v>");
            }
            if (digits.size() > 9) {
                throw ConfigError("fixed branching factor too large: " + digits);
            }
            return fixed(std::stoll(digits));
        }
        throw ConfigError("unknown distribution '" + text + "' (expected finite23, geometric, factorial, fixed:<v>)");
    }

    friend bool operator==(const BranchingDistribution& a, const BranchingDistribution& b) noexcept {
        return a.kind_ == b.kind_ && a.fixed_ == b.fixed_;
    }

private:
    BranchingDistribution(DistributionKind kind, std::int64_t fixed) : kind_(kind), fixed_(fixed) { build_table(); }

    void build_table() {
        const std::int64_t bound = max_support();
        if (bound != 0) {
            for (std::int64_t v = 2; v <= bound; ++v) {
                const double p = pmf(v);
                if (p > 0.0) {
                    values_.push_back(v);
                    cdf_.push_back(p);
                }
            }
        } else {
            // Mass beyond the horizon is below 1e-26 for both unbounded kinds.
            double total = 0.0;
            for (std::int64_t v = 2; v <= kSampleHorizon; ++v) total += pmf(v);
            double cum = 0.0;
            for (std::int64_t v = 2; v <= kSampleHorizon; ++v) {
                const double p = pmf(v) / total;
                values_.push_back(v);
                cdf_.push_back(p);
                cum += p;
                if (cum > kSampleMassCutoff) break;
            }
        }
        double cum = 0.0;
        for (double& c : cdf_) {
            cum += c;
            c = cum;
        }
        cdf_.back() = 1.0;
    }

    DistributionKind kind_;
    std::int64_t fixed_;
    std::vector<std::int64_t> values_;
    std::vector<double> cdf_;
};

inline double pmf(const BranchingDistribution& dist, std::int64_t v) { return dist.pmf(v); }

template <class URBG>
std::int64_t sample_branching(const BranchingDistribution& dist, URBG& rng) {
    return dist.sample(rng);
}

/// Outcome of checking a law against the mean-e requirement and its corollaries.
struct DistributionReport {
    std::string distribution;
    double mass = 0.0;               // sum_{v=2}^{50} p_v
    double mean = 0.0;               // sum_{v=2}^{50} v p_v
    double p2 = 0.0;
    double max_bound_violation = 0.0; // max over v in [3,20] of Pr(V>=v) - (e-2)/(v-2)
    std::vector<double> tail;         // Pr(V>=v) for v = 3..20
    bool mass_ok = false;
    bool mean_ok = false;
    bool bound_ok = false;
    bool p2_ok = false;
    std::vector<std::string> failures;

    bool passed() const noexcept { return failures.empty(); }
};

inline constexpr std::int64_t kValidationTerms = 50;
inline constexpr double kMassTolerance = 1e-10;
inline constexpr double kMeanTolerance = 1e-10;
inline constexpr double kBoundSlack = 1e-12;

inline DistributionReport validate_distribution(const BranchingDistribution& dist) {
    DistributionReport r;
    r.distribution = dist.name();
    std::vector<double> p(kValidationTerms + 1, 0.0);
    for (std::int64_t v = 2; v <= kValidationTerms; ++v) {
        p[static_cast<std::size_t>(v)] = dist.pmf(v);
        r.mass += p[static_cast<std::size_t>(v)];
        r.mean += static_cast<double>(v) * p[static_cast<std::size_t>(v)];
    }
    r.p2 = p[2];

    // Allow a few ulps above 1 for sums that are 1 in exact arithmetic.
    r.mass_ok = r.mass >= 1.0 - kMassTolerance && r.mass <= 1.0 + 4 * std::numeric_limits<double>::epsilon();
    r.mean_ok = std::abs(r.mean - kE) <= kMeanTolerance;
    r.p2_ok = r.p2 >= 3.0 - kE;

    r.max_bound_violation = -std::numeric_limits<double>::infinity();
    for (std::int64_t v = 3; v <= 20; ++v) {
        double tail = 0.0;
        for (std::int64_t i = kValidationTerms; i >= v; --i) tail += p[static_cast<std::size_t>(i)];
        r.tail.push_back(tail);
        r.max_bound_violation = std::max(r.max_bound_violation, tail - tail_bound(v));
    }
    r.bound_ok = r.max_bound_violation <= kBoundSlack;

    if (!r.mass_ok) r.failures.push_back("mass " + std::to_string(r.mass) + " outside [1-1e-10, 1]");
    if (!r.mean_ok) r.failures.push_back("mean " + std::to_string(r.mean) + " differs from e by more than 1e-10");
    if (!r.bound_ok) r.failures.push_back("tail exceeds (e-2)/(v-2) by " + std::to_string(r.max_bound_violation));
    if (!r.p2_ok) r.failures.push_back("p_2 = " + std::to_string(r.p2) + " below 3-e");
    return r;
}

} // namespace optiforest::theory
