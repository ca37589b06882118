#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <json.hpp>

#include "jetlab/batches.hpp"
#include "jetlab/model.hpp"
#include "jetlab/params.hpp"
#include "jetlab/rng.hpp"

namespace jetlab {

namespace detail {

/// Eigen decomposition of a symmetric tridiagonal matrix by the implicit-shift
/// QL iteration. d holds the diagonal (eigenvalues on exit), e the
/// sub-diagonal in e[0..n-2]; z (row-major n*n, identity on entry) accumulates
/// the eigenvectors in its columns.
inline void tridiag_eig(int n, std::vector<double>& d, std::vector<double>& e,
                        std::vector<double>& z) {
    if (n <= 1) return;
    e[n - 1] = 0.0;
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m = l;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= std::numeric_limits<double>::epsilon() * dd) break;
            }
            if (m != l) {
                if (iter++ == 64) throw NumericError("tridiag_eig: QL iteration did not converge");
                double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                double r = std::hypot(g, 1.0);
                g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
                double s = 1.0, c = 1.0, p = 0.0;
                int i = m - 1;
                for (; i >= l; --i) {
                    double f = s * e[i];
                    const double b = c * e[i];
                    r = std::hypot(f, g);
                    e[i + 1] = r;
                    if (r == 0.0) {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    for (int k = 0; k < n; ++k) {
                        f = z[static_cast<long>(k) * n + i + 1];
                        z[static_cast<long>(k) * n + i + 1] = s * z[static_cast<long>(k) * n + i] + c * f;
                        z[static_cast<long>(k) * n + i] = c * z[static_cast<long>(k) * n + i] - s * f;
                    }
                }
                if (r == 0.0 && i >= l) continue;
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        } while (m != l);
    }
}

inline double quantile_sorted(const std::vector<double>& v, double p) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = p * static_cast<double>(v.size() - 1);
    const long lo = static_cast<long>(std::floor(h));
    const long hi = static_cast<long>(std::ceil(h));
    return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

} // namespace detail

/// Dominant eigenpair of the operator: eigenvalue of largest magnitude, sign
/// preserved, with the unit Ritz vector and the true residual |H v - l v|.
struct EigenResult {
    double lambda_1 = 0.0;
    std::vector<double> nu_1;
    double residual = 0.0;
    long iterations = 0; // operator applications spent in the Krylov build
    bool converged = false;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"lambda_1", lambda_1}, {"residual", residual},
                {"iterations", iterations}, {"converged", converged}, {"seed", seed}};
    }
};

/// Lanczos with full reorthogonalisation from a seeded random start.
/// Convergence: residual < tol * max(1, |lambda_1|). A zero Lanczos vector
/// before convergence triggers a restart with a fresh seeded vector (at most
/// three restarts), unless the Krylov space is already exhausted.
inline EigenResult top_eigenpair(const HvpOperator& op, long max_iter, double tol,
                                 std::uint64_t seed) {
    if (op.dim < 1) throw ContractError("top_eigenpair: empty operator");
    if (!(tol > 0.0)) throw ConfigError("top_eigenpair: tol must be > 0");
    const long dim = op.dim;
    max_iter = std::min(max_iter, dim);
    if (max_iter < 1) throw ConfigError("top_eigenpair: max_iter must be >= 1");

    long total_matvecs = 0;
    for (int restart = 0; restart < 4; ++restart) {
        RngStream rng(derive_seed(seed, 0x1a2c, restart));
        std::vector<std::vector<double>> basis;
        std::vector<double> alpha, beta;

        std::vector<double> v(dim);
        for (auto& x : v) x = rng.normal();
        const double n0 = vnorm(v);
        if (n0 == 0.0) continue;
        vscale(v, 1.0 / n0);
        basis.push_back(v);

        // Ritz pair of the current k-step tridiagonal; est is the standard
        // residual bound |beta_next| * |last eigenvector component|.
        auto ritz = [&](double beta_next, double& theta, std::vector<double>& y, double& est) {
            const int k = static_cast<int>(alpha.size());
            std::vector<double> d = alpha, e(k, 0.0), z(static_cast<long>(k) * k, 0.0);
            for (int i = 0; i + 1 < k; ++i) e[i] = beta[i];
            for (int i = 0; i < k; ++i) z[static_cast<long>(i) * k + i] = 1.0;
            detail::tridiag_eig(k, d, e, z);
            int best = 0;
            for (int i = 1; i < k; ++i)
                if (std::abs(d[i]) > std::abs(d[best])) best = i;
            theta = d[best];
            y.assign(dim, 0.0);
            for (int i = 0; i < k; ++i) vaxpy(y, z[static_cast<long>(i) * k + best], basis[i]);
            const double yn = vnorm(y);
            if (yn > 0.0) vscale(y, 1.0 / yn);
            est = std::abs(beta_next) * std::abs(z[static_cast<long>(k - 1) * k + best]);
        };

        auto finish = [&](double beta_next) {
            double theta = 0.0, est = 0.0;
            std::vector<double> y;
            ritz(beta_next, theta, y, est);
            std::vector<double> hy = op.apply(y);
            vaxpy(hy, -theta, y);
            EigenResult r;
            r.lambda_1 = theta;
            r.nu_1 = std::move(y);
            r.residual = vnorm(hy);
            r.iterations = total_matvecs;
            r.seed = seed;
            r.converged = r.residual <= tol * std::max(1.0, std::abs(theta));
            return r;
        };

        bool breakdown = false;
        std::vector<double> w = op.apply(basis[0]);
        ++total_matvecs;
        alpha.push_back(vdot(w, basis[0]));
        vaxpy(w, -alpha[0], basis[0]);

        while (true) {
            // full reorthogonalisation pass
            for (const auto& u : basis) vaxpy(w, -vdot(u, w), u);
            const double b = vnorm(w);
            const long k = static_cast<long>(alpha.size());

            double theta = 0.0, est = 0.0;
            std::vector<double> y;
            ritz(b, theta, y, est);
            if (est <= tol * std::max(1.0, std::abs(theta))) {
                auto r = finish(b);
                if (r.converged) return r;
            }
            if (b <= 1e-12) {
                if (k >= dim) return finish(b); // Krylov space exhausted: Ritz pair is exact
                breakdown = true;               // unlucky start vector; try a fresh one
                break;
            }
            if (k >= max_iter) return finish(b);

            beta.push_back(b);
            vscale(w, 1.0 / b);
            basis.push_back(w);
            w = op.apply(basis.back());
            ++total_matvecs;
            alpha.push_back(vdot(w, basis.back()));
            vaxpy(w, -alpha.back(), basis.back());
            vaxpy(w, -beta.back(), basis[basis.size() - 2]);
        }
        if (!breakdown) break;
    }
    throw NumericError("top_eigenpair: repeated Lanczos breakdown after 3 restarts");
}

struct TraceResult {
    double estimate = 0.0;
    long n_probes = 0;
    double stderr_ = 0.0; // standard error of the probe mean; 0 when n_probes < 2

    nlohmann::json to_json() const {
        return {{"estimate", estimate}, {"n_probes", n_probes}, {"stderr", stderr_}};
    }
};

/// Hutchinson estimator: mean of z^T (H z) over Rademacher probes.
inline TraceResult hutchinson_trace(const HvpOperator& op, long n_probes, std::uint64_t seed) {
    if (n_probes < 1) throw ConfigError("hutchinson_trace: n_probes must be >= 1");
    RngStream rng(derive_seed(seed, 0x7ace));
    std::vector<double> samples;
    samples.reserve(n_probes);
    std::vector<double> z(op.dim);
    for (long p = 0; p < n_probes; ++p) {
        for (auto& x : z) x = rng.rademacher();
        samples.push_back(vdot(z, op.apply(z)));
    }
    TraceResult r;
    r.n_probes = n_probes;
    for (double s : samples) r.estimate += s;
    r.estimate /= static_cast<double>(n_probes);
    if (n_probes >= 2) {
        double acc = 0.0;
        for (double s : samples) acc += (s - r.estimate) * (s - r.estimate);
        r.stderr_ = std::sqrt(acc / static_cast<double>(n_probes - 1)) /
                    std::sqrt(static_cast<double>(n_probes));
    }
    return r;
}

struct CurvatureSummary {
    EigenResult eig;
    TraceResult trace;
};

struct RatioReport {
    double lambda_ratio = 0.0;
    double trace_ratio = 0.0;
    bool degraded = false; // an input eigenpair had not converged

    nlohmann::json to_json() const {
        return {{"lambda1_con_over_unc", lambda_ratio},
                {"trace_con_over_unc", trace_ratio},
                {"degraded", degraded}};
    }
};

inline RatioReport curvature_ratios(const CurvatureSummary& constrained,
                                    const CurvatureSummary& unconstrained) {
    RatioReport r;
    r.lambda_ratio = constrained.eig.lambda_1 / unconstrained.eig.lambda_1;
    r.trace_ratio = constrained.trace.estimate / unconstrained.trace.estimate;
    r.degraded = !constrained.eig.converged || !unconstrained.eig.converged;
    return r;
}

struct SliceResult {
    std::vector<double> epsilons;
    std::vector<double> losses;
    std::vector<std::uint8_t> missing; // non-finite loss at that grid point
    double base_loss = 0.0;
};

/// Loss along theta + eps * nu_1 for each grid value; parameters restored after
/// each evaluation (we perturb a copy). eps == 0 evaluates at theta exactly.
inline SliceResult loss_slice(const ParamVector& params, const std::vector<double>& nu_1,
                              const std::vector<double>& grid,
                              const std::function<double(const ParamVector&)>& loss) {
    if (static_cast<long>(nu_1.size()) != params.size())
        throw ContractError("loss_slice: eigenvector dimension mismatch");
    const double n = vnorm(nu_1);
    if (std::abs(n - 1.0) > 1e-8) throw ContractError("loss_slice: nu_1 must be unit length");
    if (std::find(grid.begin(), grid.end(), 0.0) == grid.end())
        throw ContractError("loss_slice: grid must contain 0");

    SliceResult out;
    out.epsilons = grid;
    for (double eps : grid) {
        double value = std::numeric_limits<double>::quiet_NaN();
        bool ok = true;
        try {
            if (eps == 0.0) {
                value = loss(params);
            } else {
                ParamVector p = params;
                p.axpy(eps, nu_1);
                value = loss(p);
            }
            ok = std::isfinite(value);
        } catch (const NumericError&) {
            ok = false;
        }
        out.losses.push_back(ok ? value : std::numeric_limits<double>::quiet_NaN());
        out.missing.push_back(ok ? 0 : 1);
        if (eps == 0.0 && ok) out.base_loss = value;
    }
    return out;
}

/// eps scale at which the quadratic model lambda1 * s^2 / 2 equals 10% of the
/// unperturbed loss; used to place slice/ratio grids on comparable footing.
inline double slice_scale(double lambda_1, double base_loss) {
    if (!(lambda_1 > 0.0) || !(base_loss > 0.0)) return 1.0;
    return std::sqrt(0.2 * base_loss / lambda_1);
}

inline std::vector<double> symmetric_grid(double scale, int points) {
    if (points < 3 || points % 2 == 0)
        throw ConfigError("symmetric_grid: points must be odd and >= 3");
    std::vector<double> g(points);
    const int half = points / 2;
    for (int i = 0; i < points; ++i) g[i] = scale * static_cast<double>(i - half) / half;
    g[half] = 0.0;
    return g;
}

struct GoldstoneResult {
    std::vector<double> epsilons;
    std::vector<double> median_ratio; // median over the probe batch of f(x)/f(g.x)
    std::vector<double> iqr;
    std::vector<long> excluded; // jets dropped at that eps (denominator underflow)

    nlohmann::json to_json() const {
        return {{"epsilons", epsilons}, {"median_ratio", median_ratio},
                {"iqr", iqr}, {"excluded", excluded}};
    }
};

/// Output-ratio probe along the leading eigenvector: for each eps and probe
/// jet, the ratio of sigmoid outputs on the nominal and boosted views under
/// theta + eps * nu_1. Ratios are formed in probability space (logits cross
/// zero, which would make the ratio unbounded); the aggregation is median and
/// inter-quartile range, which tolerate the heavy tails near small
/// denominators.
inline GoldstoneResult goldstone_ratio(const ParamVector& params, const std::vector<double>& nu_1,
                                       const std::vector<double>& grid, const ModelConfig& mc,
                                       const std::vector<Jet>& probe_jets, const BoostVector& g,
                                       double denom_floor = 1e-12) {
    if (probe_jets.empty()) throw ContractError("goldstone_ratio: probe batch must be non-empty");
    if (static_cast<long>(nu_1.size()) != params.size())
        throw ContractError("goldstone_ratio: eigenvector dimension mismatch");

    const auto idx = iota_indices(static_cast<long>(probe_jets.size()));
    const Batch nominal = make_batch(probe_jets, idx);
    long clamps = 0;
    std::vector<BoostVector> boosts(probe_jets.size(), g);
    const Batch boosted = make_boosted_batch(probe_jets, idx, boosts, nominal.n, &clamps);

    GoldstoneResult out;
    out.epsilons = grid;
    for (double eps : grid) {
        ParamVector p = params;
        if (eps != 0.0) p.axpy(eps, nu_1);
        const auto z1 = forward_logits(p, mc, nominal);
        const auto z2 = forward_logits(p, mc, boosted);
        std::vector<double> ratios;
        long dropped = 0;
        for (std::size_t i = 0; i < z1.size(); ++i) {
            const double p1 = ad::stable_sigmoid(z1[i]);
            const double p2 = ad::stable_sigmoid(z2[i]);
            if (p2 < denom_floor) {
                ++dropped;
                continue;
            }
            ratios.push_back(p1 / p2);
        }
        std::sort(ratios.begin(), ratios.end());
        out.median_ratio.push_back(detail::quantile_sorted(ratios, 0.5));
        out.iqr.push_back(detail::quantile_sorted(ratios, 0.75) -
                          detail::quantile_sorted(ratios, 0.25));
        out.excluded.push_back(dropped);
    }
    return out;
}

} // namespace jetlab
