#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "jetlab/errors.hpp"
#include "jetlab/rng.hpp"

namespace jetlab {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Wrap an angle into (-pi, pi].
inline double wrap_phi(double phi) {
    double d = std::remainder(phi, 2.0 * kPi); // [-pi, pi], ties to even
    if (d <= -kPi) d += 2.0 * kPi;
    return d;
}

/// Energy-momentum four-vector (E, px, py, pz) in GeV.
struct FourVector {
    double E = 0.0, px = 0.0, py = 0.0, pz = 0.0;

    double pt() const { return std::hypot(px, py); }
    double p2() const { return px * px + py * py + pz * pz; }
    double p() const { return std::sqrt(p2()); }
    double mass2() const { return E * E - p2(); }
    /// Invariant mass; tiny negative mass^2 from rounding is clamped to zero.
    double mass() const { return std::sqrt(std::max(0.0, mass2())); }
    double eta() const { return std::asinh(pz / pt()); }
    double phi() const { return std::atan2(py, px); }

    FourVector& operator+=(const FourVector& o) {
        E += o.E; px += o.px; py += o.py; pz += o.pz;
        return *this;
    }
    friend FourVector operator+(FourVector a, const FourVector& b) { return a += b; }

    static FourVector massless(double pt, double eta, double phi) {
        FourVector v;
        v.px = pt * std::cos(phi);
        v.py = pt * std::sin(phi);
        v.pz = pt * std::sinh(eta);
        v.E = pt * std::cosh(eta);
        return v;
    }

    static FourVector from_mass(double m, double px, double py, double pz) {
        FourVector v;
        v.px = px; v.py = py; v.pz = pz;
        v.E = std::sqrt(m * m + px * px + py * py + pz * pz);
        return v;
    }
};

/// Pure Lorentz boost given by a unit direction and a rapidity y >= 0.
/// Parameterising by rapidity makes same-axis composition additive.
struct BoostVector {
    double nx = 0.0, ny = 0.0, nz = 1.0;
    double y = 0.0;

    BoostVector() = default;
    BoostVector(double nx_, double ny_, double nz_, double y_) : nx(nx_), ny(ny_), nz(nz_), y(y_) {
        if (y < 0.0) { nx = -nx; ny = -ny; nz = -nz; y = -y; }
        const double n = std::sqrt(nx * nx + ny * ny + nz * nz);
        if (!(n > 0.0)) throw ConfigError("BoostVector: direction must be non-zero");
        if (std::abs(n - 1.0) > 1e-12) { nx /= n; ny /= n; nz /= n; }
    }

    double beta() const { return std::tanh(y); }

    /// The inverse boost: same rapidity, opposite direction.
    BoostVector inverse() const {
        BoostVector b(*this);
        b.nx = -nx; b.ny = -ny; b.nz = -nz;
        return b;
    }
};

/// Active pure boost of v along b: E' = ch*E + sh*(p.n), p' = p + ((ch-1)(p.n) + sh*E) n.
/// Preserves the invariant mass exactly (up to rounding).
inline FourVector boost(const FourVector& v, const BoostVector& b) {
    const double ch = std::cosh(b.y);
    const double sh = std::sinh(b.y);
    const double pn = v.px * b.nx + v.py * b.ny + v.pz * b.nz;
    FourVector out;
    out.E = ch * v.E + sh * pn;
    const double coef = (ch - 1.0) * pn + sh * v.E;
    out.px = v.px + coef * b.nx;
    out.py = v.py + coef * b.ny;
    out.pz = v.pz + coef * b.nz;
    return out;
}

/// Direction uniform on the unit sphere, rapidity uniform on [0, y_max].
/// Draw order (cos-theta, phi, y) is part of the reproducibility contract.
inline BoostVector sample_boost(RngStream& rng, double y_max) {
    if (!(y_max > 0.0)) throw ConfigError("sample_boost: y_max must be > 0");
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double y = rng.uniform(0.0, y_max);
    BoostVector b;
    b.nx = r * std::cos(phi);
    b.ny = r * std::sin(phi);
    b.nz = z;
    b.y = y;
    return b;
}

/// The seven-feature representation of one constituent relative to its jet.
struct FeatureRow {
    double d_eta = 0.0;
    double d_phi = 0.0;      // wrapped into (-pi, pi]
    double log_pt_rel = 0.0; // log(pT / pT_jet)
    double log_pt = 0.0;
    double log_e_rel = 0.0;  // log(E / E_jet)
    double log_e = 0.0;
    double d_r = 0.0;

    static constexpr int kDim = 7;

    void write_to(double* dst) const {
        dst[0] = d_eta; dst[1] = d_phi; dst[2] = log_pt_rel; dst[3] = log_pt;
        dst[4] = log_e_rel; dst[5] = log_e; dst[6] = d_r;
    }
};

enum class PtFloorPolicy {
    kReject, // pT or E <= 0 anywhere is a domain error naming the offending index
    kClamp,  // clamp to the floor and count; used for boosted views where large
             // boosts can push pT towards zero and the log features diverge
};

inline constexpr double kPtFloor = 1e-6; // GeV
inline constexpr double kEnergyFloor = 1e-12;

/// Per-constituent features against the jet axis. Returns the rows; when
/// policy is kClamp, *clamp_count (if given) receives the number of floored values.
inline std::vector<FeatureRow> jet_features(const std::vector<FourVector>& constituents,
                                            const FourVector& jet,
                                            PtFloorPolicy policy = PtFloorPolicy::kReject,
                                            long* clamp_count = nullptr) {
    long clamps = 0;
    auto floored = [&](double x, double floor, const char* what, long index) {
        if (x > floor) return x;
        if (policy == PtFloorPolicy::kReject) {
            throw DomainError(std::string("jet_features: non-positive ") + what +
                              (index < 0 ? " of jet" : " of constituent " + std::to_string(index)));
        }
        ++clamps;
        return floor;
    };

    const double jet_pt = floored(jet.pt(), kPtFloor, "pT", -1);
    const double jet_e = floored(jet.E, kEnergyFloor, "E", -1);
    const double jet_eta = std::asinh(jet.pz / jet_pt);
    const double jet_phi = jet.phi();

    std::vector<FeatureRow> rows;
    rows.reserve(constituents.size());
    for (long i = 0; i < static_cast<long>(constituents.size()); ++i) {
        const FourVector& c = constituents[i];
        const double pt = floored(c.pt(), kPtFloor, "pT", i);
        const double e = floored(c.E, kEnergyFloor, "E", i);
        FeatureRow r;
        r.d_eta = std::asinh(c.pz / pt) - jet_eta;
        r.d_phi = wrap_phi(std::atan2(c.py, c.px) - jet_phi);
        r.log_pt_rel = std::log(pt / jet_pt);
        r.log_pt = std::log(pt);
        r.log_e_rel = std::log(e / jet_e);
        r.log_e = std::log(e);
        r.d_r = std::sqrt(r.d_eta * r.d_eta + r.d_phi * r.d_phi);
        rows.push_back(r);
    }
    if (clamp_count) *clamp_count += clamps;
    return rows;
}

} // namespace jetlab
