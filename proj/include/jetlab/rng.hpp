#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "jetlab/errors.hpp"

namespace jetlab {

/// splitmix64 step; used to derive independent sub-seeds from (seed, tag) pairs.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ tag);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b) {
    return derive_seed(derive_seed(seed, tag_a), tag_b);
}

/// Deterministic random stream. mt19937_64 output is pinned by the standard and
/// all transformations below are plain IEEE arithmetic, so identical seeds give
/// identical draws on every conforming platform (std::*_distribution is
/// implementation-defined and deliberately avoided).
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    /// uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// uniform in [lo, hi)
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// integer uniform in [lo, hi] inclusive
    long uniform_int(long lo, long hi) {
        if (hi < lo) throw ContractError("uniform_int: hi < lo");
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<long>(gen_() % span);
    }

    /// standard normal via inverse-CDF (rational approximation, |rel err| ~ 1e-9);
    /// chosen over Box-Muller to avoid libm trig in the reproducibility path
    double normal() {
        double p = uniform();
        if (p <= 0.0) p = 0x1.0p-53;
        return inverse_normal_cdf(p);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// +1 or -1 with equal probability
    double rademacher() { return (gen_() & 1u) ? 1.0 : -1.0; }

    static double inverse_normal_cdf(double p) {
        // Acklam's rational approximation in three regimes.
        static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                        -2.759285104469687e+02, 1.383577518672690e+02,
                                        -3.066479806614716e+01, 2.506628277459239e+00};
        static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                        -1.556989798598866e+02, 6.680131188771972e+01,
                                        -1.328068155288572e+01};
        static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                        -2.400758277161838e+00, -2.549732539343734e+00,
                                        4.374664141464968e+00,  2.938163982698783e+00};
        static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                        2.445134137142996e+00, 3.754408661907416e+00};
        constexpr double p_low = 0.02425;
        constexpr double p_high = 1.0 - p_low;

        if (p < p_low) {
            const double q = std::sqrt(-2.0 * std::log(p));
            return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
                   ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
        }
        if (p <= p_high) {
            const double q = p - 0.5;
            const double r = q * q;
            return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
                   (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
        }
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

private:
    std::mt19937_64 gen_;
};

} // namespace jetlab
