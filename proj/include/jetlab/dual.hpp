#pragma once

#include <cmath>
#include <ostream>

namespace jetlab::ad {

/// First-order dual number a + b*eps with eps^2 = 0. Running the tape with
/// Dual scalars turns a reverse pass into forward-over-reverse, which is how
/// Hessian-vector products are produced without materialising the Hessian.
struct Dual {
    double v = 0.0; // value
    double d = 0.0; // directional derivative

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value) {}
    constexpr Dual(double value, double deriv) : v(value), d(deriv) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) { d = (d * o.v - v * o.d) / (o.v * o.v); v /= o.v; return *this; }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }

inline Dual exp(const Dual& a) { const double e = std::exp(a.v); return {e, a.d * e}; }
inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(const Dual& a) { const double s = std::sqrt(a.v); return {s, a.d / (2.0 * s)}; }

inline std::ostream& operator<<(std::ostream& os, const Dual& a) {
    return os << a.v << "+" << a.d << "e";
}

/// Scalar access helpers so templated kernels can be written once.
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Dual& x) { return std::isfinite(x.v) && std::isfinite(x.d); }

} // namespace jetlab::ad
