#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "jetlab/dual.hpp"
#include "jetlab/errors.hpp"
#include "jetlab/params.hpp"
#include "jetlab/tensor.hpp"

namespace jetlab::ad {

// Scalar math dispatch so templated kernels compile for both double and Dual.
inline double exp_scalar(double x) { return std::exp(x); }
inline Dual exp_scalar(const Dual& x) { return exp(x); }
inline double log_scalar(double x) { return std::log(x); }
inline Dual log_scalar(const Dual& x) { return log(x); }
inline double sqrt_scalar(double x) { return std::sqrt(x); }
inline Dual sqrt_scalar(const Dual& x) { return sqrt(x); }

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Dual stable_sigmoid(const Dual& x) {
    if (x.v >= 0.0) return Dual(1.0) / (Dual(1.0) + exp(-x));
    const Dual e = exp(x);
    return e / (Dual(1.0) + e);
}

/// Boolean mask over a [batch, slots] grid; true marks a real constituent.
struct SlotMask {
    int batch = 0;
    int slots = 0;
    const std::uint8_t* flags = nullptr; // row-major [batch, slots], not owned

    bool on(int b, int n) const { return flags[static_cast<long>(b) * slots + n] != 0; }
};

/// Reverse-mode tape over a fixed primitive set, generic in the scalar type.
/// Instantiated with double for values/gradients and with Dual for
/// forward-over-reverse Hessian-vector products. Evaluation is single-threaded
/// and runs in deterministic order, so fixed inputs give bit-identical results.
template <typename T>
class Graph {
public:
    using Index = int;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;      // allocated on first touch during backward
        Tensor<T> aux;       // op-specific stash (e.g. layer-norm normalised rows)
        Tensor<T> aux2;
        bool needs_grad = false;
        const char* op = "leaf";
    };

    bool check_finite = true;

    Index input(Tensor<T> value, bool needs_grad = false, const char* name = "leaf") {
        nodes_.push_back(Node{std::move(value), {}, {}, {}, needs_grad, name});
        return static_cast<Index>(nodes_.size() - 1);
    }

    const Tensor<T>& value(Index i) const { return nodes_[i].value; }
    const Tensor<T>& grad(Index i) const { return nodes_[i].grad; }
    long num_nodes() const { return static_cast<long>(nodes_.size()); }

    // -- elementwise ---------------------------------------------------------

    Index add(Index a, Index b) { return binary(a, b, "add",
        [](const T& x, const T& y) { return x + y; },
        [](const T&, const T&, const T& g, T& dx, T& dy) { dx += g; dy += g; }); }

    Index sub(Index a, Index b) { return binary(a, b, "sub",
        [](const T& x, const T& y) { return x - y; },
        [](const T&, const T&, const T& g, T& dx, T& dy) { dx += g; dy -= g; }); }

    Index mul(Index a, Index b) { return binary(a, b, "mul",
        [](const T& x, const T& y) { return x * y; },
        [](const T& x, const T& y, const T& g, T& dx, T& dy) { dx += g * y; dy += g * x; }); }

    Index scale(Index a, double c) { return unary(a, "scale",
        [c](const T& x) { return x * T(c); },
        [c](const T&, const T&, const T& g) { return g * T(c); }); }

    Index relu(Index a) { return unary(a, "relu",
        [](const T& x) { return x > T(0.0) ? x : T(0.0); },
        [](const T& x, const T&, const T& g) { return x > T(0.0) ? g : T(0.0); }); }

    Index sigmoid(Index a) { return unary(a, "sigmoid",
        [](const T& x) { return stable_sigmoid(x); },
        [](const T&, const T& y, const T& g) { return g * y * (T(1.0) - y); }); }

    Index log(Index a) { return unary(a, "log",
        [](const T& x) { return log_scalar(x); },
        [](const T& x, const T&, const T& g) { return g / x; }); }

    Index square(Index a) { return unary(a, "square",
        [](const T& x) { return x * x; },
        [](const T& x, const T&, const T& g) { return g * T(2.0) * x; }); }

    // -- reductions ----------------------------------------------------------

    Index sum_all(Index a) { return reduce(a, "sum_all", 1.0); }
    Index mean_all(Index a) { return reduce(a, "mean_all", 1.0 / static_cast<double>(nodes_[a].value.numel())); }

    // -- linear algebra ------------------------------------------------------

    /// y[..., dout] = x[..., din] * w[din, dout] + b[dout]
    Index linear(Index x, Index w, Index b) {
        const auto& xv = nodes_[x].value;
        const auto& wv = nodes_[w].value;
        const auto& bv = nodes_[b].value;
        const int din = xv.last();
        if (wv.rank() != 2 || wv.dim(0) != din)
            throw ContractError("linear: weight shape mismatch");
        const int dout = wv.dim(1);
        if (bv.numel() != dout) throw ContractError("linear: bias shape mismatch");
        const long rows = xv.rows();

        auto out_shape = xv.shape;
        out_shape.back() = dout;
        Tensor<T> out(out_shape);
        for (long r = 0; r < rows; ++r) {
            T* orow = out.ptr() + r * dout;
            for (int o = 0; o < dout; ++o) orow[o] = bv.data[o];
        }
        gemm_nn(xv.ptr(), wv.ptr(), out.ptr(), static_cast<int>(rows), din, dout);

        const Index y = emit("linear", std::move(out), needs(x) || needs(w) || needs(b));
        tape_.push_back([this, x, w, b, y, rows, din, dout] {
            const auto& g = nodes_[y].grad;
            if (needs(x)) {
                auto& dx = ensure_grad(x);
                gemm_nt(g.ptr(), nodes_[w].value.ptr(), dx.ptr(), static_cast<int>(rows), dout, din);
            }
            if (needs(w)) {
                auto& dw = ensure_grad(w);
                gemm_tn(nodes_[x].value.ptr(), g.ptr(), dw.ptr(), static_cast<int>(rows), din, dout);
            }
            if (needs(b)) {
                auto& db = ensure_grad(b);
                for (long r = 0; r < rows; ++r) {
                    const T* grow = g.ptr() + r * dout;
                    for (int o = 0; o < dout; ++o) db.data[o] += grow[o];
                }
            }
        });
        return y;
    }

    /// y[m,n] = a[m,k] * b[k,n]
    Index matmul(Index a, Index b) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
            throw ContractError("matmul: shape mismatch");
        const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        Tensor<T> out({m, n});
        gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
        const Index y = emit("matmul", std::move(out), needs(a) || needs(b));
        tape_.push_back([this, a, b, y, m, k, n] {
            const auto& g = nodes_[y].grad;
            if (needs(a)) gemm_nt(g.ptr(), nodes_[b].value.ptr(), ensure_grad(a).ptr(), m, n, k);
            if (needs(b)) gemm_tn(nodes_[a].value.ptr(), g.ptr(), ensure_grad(b).ptr(), m, k, n);
        });
        return y;
    }

    /// Batched matmul over the leading axis: y[g] = a[g] * b[g] (or b[g]^T).
    Index bmm(Index a, Index b, bool trans_b = false) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0))
            throw ContractError("bmm: rank/groups mismatch");
        const int groups = av.dim(0), m = av.dim(1), k = av.dim(2);
        const int n = trans_b ? bv.dim(1) : bv.dim(2);
        if ((trans_b ? bv.dim(2) : bv.dim(1)) != k) throw ContractError("bmm: inner dim mismatch");
        Tensor<T> out({groups, m, n});
        const long sa = static_cast<long>(m) * k, sb = static_cast<long>(bv.dim(1)) * bv.dim(2);
        const long sy = static_cast<long>(m) * n;
        for (int gi = 0; gi < groups; ++gi) {
            if (trans_b)
                gemm_nt(av.ptr() + gi * sa, bv.ptr() + gi * sb, out.ptr() + gi * sy, m, k, n);
            else
                gemm_nn(av.ptr() + gi * sa, bv.ptr() + gi * sb, out.ptr() + gi * sy, m, k, n);
        }
        const Index y = emit("bmm", std::move(out), needs(a) || needs(b));
        tape_.push_back([this, a, b, y, groups, m, k, n, sa, sb, sy, trans_b] {
            const auto& g = nodes_[y].grad;
            for (int gi = 0; gi < groups; ++gi) {
                const T* gp = g.ptr() + gi * sy;
                if (needs(a)) {
                    T* da = ensure_grad(a).ptr() + gi * sa;
                    if (trans_b) gemm_nn(gp, nodes_[b].value.ptr() + gi * sb, da, m, n, k);
                    else gemm_nt(gp, nodes_[b].value.ptr() + gi * sb, da, m, n, k);
                }
                if (needs(b)) {
                    T* db = ensure_grad(b).ptr() + gi * sb;
                    if (trans_b) gemm_tn(gp, nodes_[a].value.ptr() + gi * sa, db, m, n, k);
                    else gemm_tn(nodes_[a].value.ptr() + gi * sa, gp, db, m, k, n);
                }
            }
        });
        return y;
    }

    // -- attention / set ops ---------------------------------------------------

    /// [B, N, D] -> [B*H, N, D/H]
    Index split_heads(Index x, int heads) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 3 || xv.dim(2) % heads != 0) throw ContractError("split_heads: bad shape");
        const int b = xv.dim(0), n = xv.dim(1), d = xv.dim(2), dh = d / heads;
        Tensor<T> out({b * heads, n, dh});
        for (int bi = 0; bi < b; ++bi)
            for (int h = 0; h < heads; ++h)
                for (int ni = 0; ni < n; ++ni) {
                    const T* src = xv.ptr() + (static_cast<long>(bi) * n + ni) * d + h * dh;
                    T* dst = out.ptr() + ((static_cast<long>(bi) * heads + h) * n + ni) * dh;
                    for (int k = 0; k < dh; ++k) dst[k] = src[k];
                }
        const Index y = emit("split_heads", std::move(out), needs(x));
        tape_.push_back([this, x, y, b, n, d, dh, heads] {
            if (!needs(x)) return;
            const auto& g = nodes_[y].grad;
            auto& dx = ensure_grad(x);
            for (int bi = 0; bi < b; ++bi)
                for (int h = 0; h < heads; ++h)
                    for (int ni = 0; ni < n; ++ni) {
                        const T* src = g.ptr() + ((static_cast<long>(bi) * heads + h) * n + ni) * dh;
                        T* dst = dx.ptr() + (static_cast<long>(bi) * n + ni) * d + h * dh;
                        for (int k = 0; k < dh; ++k) dst[k] += src[k];
                    }
        });
        return y;
    }

    /// [B*H, N, D/H] -> [B, N, D]
    Index merge_heads(Index x, int heads) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 3 || xv.dim(0) % heads != 0) throw ContractError("merge_heads: bad shape");
        const int b = xv.dim(0) / heads, n = xv.dim(1), dh = xv.dim(2), d = dh * heads;
        Tensor<T> out({b, n, d});
        for (int bi = 0; bi < b; ++bi)
            for (int h = 0; h < heads; ++h)
                for (int ni = 0; ni < n; ++ni) {
                    const T* src = xv.ptr() + ((static_cast<long>(bi) * heads + h) * n + ni) * dh;
                    T* dst = out.ptr() + (static_cast<long>(bi) * n + ni) * d + h * dh;
                    for (int k = 0; k < dh; ++k) dst[k] = src[k];
                }
        const Index y = emit("merge_heads", std::move(out), needs(x));
        tape_.push_back([this, x, y, b, n, d, dh, heads] {
            if (!needs(x)) return;
            const auto& g = nodes_[y].grad;
            auto& dx = ensure_grad(x);
            for (int bi = 0; bi < b; ++bi)
                for (int h = 0; h < heads; ++h)
                    for (int ni = 0; ni < n; ++ni) {
                        const T* src = g.ptr() + (static_cast<long>(bi) * n + ni) * d + h * dh;
                        T* dst = dx.ptr() + ((static_cast<long>(bi) * heads + h) * n + ni) * dh;
                        for (int k = 0; k < dh; ++k) dst[k] += src[k];
                    }
        });
        return y;
    }

    /// Row-wise softmax over the key axis of scores [B*H, N, N]; masked key
    /// columns are excluded from the normalisation and get exactly zero weight.
    Index masked_softmax(Index scores, const SlotMask& mask) {
        const auto& sv = nodes_[scores].value;
        if (sv.rank() != 3 || sv.dim(1) != sv.dim(2) || sv.dim(0) % mask.batch != 0)
            throw ContractError("masked_softmax: bad shape");
        const int groups = sv.dim(0), n = sv.dim(1);
        const int heads = groups / mask.batch;
        Tensor<T> out(sv.shape);
        for (int gi = 0; gi < groups; ++gi) {
            const int b = gi / heads;
            for (int i = 0; i < n; ++i) {
                const T* row = sv.ptr() + (static_cast<long>(gi) * n + i) * n;
                T* orow = out.ptr() + (static_cast<long>(gi) * n + i) * n;
                T mx{};
                bool any = false;
                for (int j = 0; j < n; ++j)
                    if (mask.on(b, j) && (!any || row[j] > mx)) { mx = row[j]; any = true; }
                if (!any) throw DomainError("masked_softmax: jet with no unmasked constituents");
                T z{};
                for (int j = 0; j < n; ++j) {
                    if (mask.on(b, j)) {
                        orow[j] = exp_scalar(row[j] - mx);
                        z += orow[j];
                    } else {
                        orow[j] = T(0.0);
                    }
                }
                for (int j = 0; j < n; ++j)
                    if (mask.on(b, j)) orow[j] = orow[j] / z;
            }
        }
        const Index y = emit("masked_softmax", std::move(out), needs(scores));
        tape_.push_back([this, scores, y, groups, n, heads, mask] {
            if (!needs(scores)) return;
            const auto& yv = nodes_[y].value;
            const auto& g = nodes_[y].grad;
            auto& dx = ensure_grad(scores);
            for (int gi = 0; gi < groups; ++gi) {
                const int b = gi / heads;
                for (int i = 0; i < n; ++i) {
                    const long off = (static_cast<long>(gi) * n + i) * n;
                    const T* yrow = yv.ptr() + off;
                    const T* grow = g.ptr() + off;
                    T dot{};
                    for (int j = 0; j < n; ++j)
                        if (mask.on(b, j)) dot += yrow[j] * grow[j];
                    T* drow = dx.ptr() + off;
                    for (int j = 0; j < n; ++j)
                        if (mask.on(b, j)) drow[j] += yrow[j] * (grow[j] - dot);
                }
            }
        });
        return y;
    }

    /// Normalise over the trailing axis: y = (x - mu)/sqrt(var + eps) * gain + bias.
    Index layer_norm(Index x, Index gain, Index bias, double eps = 1e-5) {
        const auto& xv = nodes_[x].value;
        const int d = xv.last();
        const long rows = xv.rows();
        if (nodes_[gain].value.numel() != d || nodes_[bias].value.numel() != d)
            throw ContractError("layer_norm: gain/bias shape mismatch");
        Tensor<T> out(xv.shape);
        Tensor<T> xhat(xv.shape);       // stashed for backward
        Tensor<T> inv({static_cast<int>(rows)});
        const T invd = T(1.0 / static_cast<double>(d));
        const auto& gv = nodes_[gain].value;
        const auto& bv = nodes_[bias].value;
        for (long r = 0; r < rows; ++r) {
            const T* xr = xv.ptr() + r * d;
            T mu{};
            for (int j = 0; j < d; ++j) mu += xr[j];
            mu = mu * invd;
            T var{};
            for (int j = 0; j < d; ++j) {
                const T c = xr[j] - mu;
                var += c * c;
            }
            var = var * invd;
            const T iv = T(1.0) / sqrt_scalar(var + T(eps));
            inv.data[r] = iv;
            T* hr = xhat.ptr() + r * d;
            T* yr = out.ptr() + r * d;
            for (int j = 0; j < d; ++j) {
                hr[j] = (xr[j] - mu) * iv;
                yr[j] = hr[j] * gv.data[j] + bv.data[j];
            }
        }
        const Index y = emit("layer_norm", std::move(out), needs(x) || needs(gain) || needs(bias));
        nodes_[y].aux = std::move(xhat);
        nodes_[y].aux2 = std::move(inv);
        tape_.push_back([this, x, gain, bias, y, rows, d, invd] {
            const auto& g = nodes_[y].grad;
            const auto& xhat = nodes_[y].aux;
            const auto& inv = nodes_[y].aux2;
            const auto& gv = nodes_[gain].value;
            for (long r = 0; r < rows; ++r) {
                const T* grow = g.ptr() + r * d;
                const T* hrow = xhat.ptr() + r * d;
                if (needs(gain)) {
                    auto& dg = ensure_grad(gain);
                    for (int j = 0; j < d; ++j) dg.data[j] += grow[j] * hrow[j];
                }
                if (needs(bias)) {
                    auto& db = ensure_grad(bias);
                    for (int j = 0; j < d; ++j) db.data[j] += grow[j];
                }
                if (needs(x)) {
                    // dx = inv/d * (d*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                    T sum_dh{}, sum_dh_h{};
                    for (int j = 0; j < d; ++j) {
                        const T dh = grow[j] * gv.data[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[j];
                    }
                    auto& dx = ensure_grad(x);
                    T* dxr = dx.ptr() + r * d;
                    const T iv = inv.data[r];
                    for (int j = 0; j < d; ++j) {
                        const T dh = grow[j] * gv.data[j];
                        dxr[j] += iv * (dh - invd * sum_dh - hrow[j] * invd * sum_dh_h);
                    }
                }
            }
        });
        return y;
    }

    /// Mean over unmasked slots: [B, N, D] with mask -> [B, D].
    Index masked_mean_pool(Index x, const SlotMask& mask) {
        const auto& xv = nodes_[x].value;
        if (xv.rank() != 3 || xv.dim(0) != mask.batch || xv.dim(1) != mask.slots)
            throw ContractError("masked_mean_pool: bad shape");
        const int b = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
        Tensor<T> out({b, d});
        std::vector<double> inv_count(b);
        for (int bi = 0; bi < b; ++bi) {
            int cnt = 0;
            T* orow = out.ptr() + static_cast<long>(bi) * d;
            for (int ni = 0; ni < n; ++ni) {
                if (!mask.on(bi, ni)) continue;
                ++cnt;
                const T* src = xv.ptr() + (static_cast<long>(bi) * n + ni) * d;
                for (int j = 0; j < d; ++j) orow[j] += src[j];
            }
            if (cnt == 0) throw DomainError("masked_mean_pool: jet with no unmasked constituents");
            inv_count[bi] = 1.0 / cnt;
            for (int j = 0; j < d; ++j) orow[j] = orow[j] * T(inv_count[bi]);
        }
        const Index y = emit("masked_mean_pool", std::move(out), needs(x));
        tape_.push_back([this, x, y, b, n, d, mask, inv_count = std::move(inv_count)] {
            if (!needs(x)) return;
            const auto& g = nodes_[y].grad;
            auto& dx = ensure_grad(x);
            for (int bi = 0; bi < b; ++bi) {
                const T* grow = g.ptr() + static_cast<long>(bi) * d;
                for (int ni = 0; ni < n; ++ni) {
                    if (!mask.on(bi, ni)) continue;
                    T* dst = dx.ptr() + (static_cast<long>(bi) * n + ni) * d;
                    for (int j = 0; j < d; ++j) dst[j] += grow[j] * T(inv_count[bi]);
                }
            }
        });
        return y;
    }

    /// Copy-reshape to a new shape with the same element count.
    Index reshape(Index x, std::vector<int> shape) {
        const auto& xv = nodes_[x].value;
        if (Tensor<T>::numel_of(shape) != xv.numel()) throw ContractError("reshape: numel mismatch");
        Tensor<T> out(std::move(shape), xv.data);
        const Index y = emit("reshape", std::move(out), needs(x));
        tape_.push_back([this, x, y] {
            if (!needs(x)) return;
            auto& dx = ensure_grad(x);
            const auto& g = nodes_[y].grad;
            for (long i = 0; i < dx.numel(); ++i) dx.data[i] += g.data[i];
        });
        return y;
    }

    // -- running the tape ------------------------------------------------------

    /// Reverse pass from a scalar node; fills .grad of every needs_grad node.
    void backward(Index loss) {
        if (nodes_[loss].value.numel() != 1)
            throw ContractError("backward: loss node must be scalar");
        ensure_grad(loss).data[0] = T(1.0);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::function<void()>> tape_;

    bool needs(Index i) const { return nodes_[i].needs_grad; }

    Tensor<T>& ensure_grad(Index i) {
        auto& n = nodes_[i];
        if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape);
        return n.grad;
    }

    Index emit(const char* op, Tensor<T> value, bool needs_grad) {
        if (check_finite) {
            for (const auto& v : value.data) {
                if (!is_finite(v))
                    throw NumericError(std::string("non-finite value in '") + op + "' node #" +
                                       std::to_string(nodes_.size()));
            }
        }
        nodes_.push_back(Node{std::move(value), {}, {}, {}, needs_grad, op});
        return static_cast<Index>(nodes_.size() - 1);
    }

    template <class F, class B>
    Index unary(Index a, const char* op, F fwd, B bwd) {
        const auto& av = nodes_[a].value;
        Tensor<T> out(av.shape);
        for (long i = 0; i < av.numel(); ++i) out.data[i] = fwd(av.data[i]);
        const Index y = emit(op, std::move(out), needs(a));
        tape_.push_back([this, a, y, bwd] {
            if (!needs(a)) return;
            auto& dx = ensure_grad(a);
            const auto& xv = nodes_[a].value;
            const auto& yv = nodes_[y].value;
            const auto& g = nodes_[y].grad;
            for (long i = 0; i < xv.numel(); ++i) dx.data[i] += bwd(xv.data[i], yv.data[i], g.data[i]);
        });
        return y;
    }

    template <class F, class B>
    Index binary(Index a, Index b, const char* op, F fwd, B bwd) {
        const auto& av = nodes_[a].value;
        const auto& bv = nodes_[b].value;
        if (!same_shape(av.shape, bv.shape)) throw ContractError(std::string(op) + ": shape mismatch");
        Tensor<T> out(av.shape);
        for (long i = 0; i < av.numel(); ++i) out.data[i] = fwd(av.data[i], bv.data[i]);
        const Index y = emit(op, std::move(out), needs(a) || needs(b));
        tape_.push_back([this, a, b, y, bwd] {
            const auto& av = nodes_[a].value;
            const auto& bv = nodes_[b].value;
            const auto& g = nodes_[y].grad;
            const bool na = needs(a), nb = needs(b);
            Tensor<T> dummy({1});
            auto& da = na ? ensure_grad(a) : dummy;
            auto& db = nb ? ensure_grad(b) : dummy;
            T scratch_a{}, scratch_b{};
            for (long i = 0; i < av.numel(); ++i) {
                T& dx = na ? da.data[i] : scratch_a;
                T& dy = nb ? db.data[i] : scratch_b;
                bwd(av.data[i], bv.data[i], g.data[i], dx, dy);
            }
        });
        return y;
    }

    Index reduce(Index a, const char* op, double w) {
        const auto& av = nodes_[a].value;
        T s{};
        for (long i = 0; i < av.numel(); ++i) s += av.data[i];
        Tensor<T> out({1});
        out.data[0] = s * T(w);
        const Index y = emit(op, std::move(out), needs(a));
        tape_.push_back([this, a, y, w] {
            if (!needs(a)) return;
            auto& dx = ensure_grad(a);
            const T g = nodes_[y].grad.data[0] * T(w);
            for (long i = 0; i < dx.numel(); ++i) dx.data[i] += g;
        });
        return y;
    }
};

// ---------------------------------------------------------------------------
// Binding a flat ParamVector into a graph, one leaf node per layout entry.
// With T = Dual, `direction` seeds the dual parts, which turns the reverse
// pass into an exact Hessian-vector product along that direction.
// ---------------------------------------------------------------------------

template <typename T>
struct BoundParams {
    std::vector<typename Graph<T>::Index> nodes;
    const ParamLayout* layout = nullptr;

    typename Graph<T>::Index at(const std::string& name) const {
        for (std::size_t i = 0; i < layout->entries.size(); ++i)
            if (layout->entries[i].name == name) return nodes[i];
        throw ContractError("BoundParams: no parameter named " + name);
    }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const ParamVector& w,
                           const std::vector<double>* direction = nullptr) {
    if (direction && static_cast<long>(direction->size()) != w.size())
        throw ContractError("bind_params: direction length mismatch");
    BoundParams<T> bp;
    bp.layout = w.layout.get();
    bp.nodes.reserve(w.layout->entries.size());
    for (const auto& e : w.layout->entries) {
        Tensor<T> t(e.shape);
        for (long i = 0; i < e.size; ++i) {
            if constexpr (std::is_same_v<T, Dual>) {
                t.data[i] = Dual{w.values[e.offset + i], direction ? (*direction)[e.offset + i] : 0.0};
            } else {
                t.data[i] = w.values[e.offset + i];
            }
        }
        bp.nodes.push_back(g.input(std::move(t), true, e.name.c_str()));
    }
    return bp;
}

/// Collect per-entry gradients back into one flat vector, in layout order.
/// For T = Dual the `.d` components are the Hessian-vector product.
template <typename T>
std::vector<T> gather_param_grads(const Graph<T>& g, const BoundParams<T>& bp) {
    std::vector<T> flat(bp.layout->total, T{});
    for (std::size_t i = 0; i < bp.nodes.size(); ++i) {
        const auto& e = bp.layout->entries[i];
        const auto& grad = g.grad(bp.nodes[i]);
        if (grad.numel() == 0) continue; // parameter unused by this loss
        for (long k = 0; k < e.size; ++k) flat[e.offset + k] = grad.data[k];
    }
    return flat;
}

/// Evaluate a graph-builder loss and its exact reverse-mode gradient.
/// The builder must be generic: callable as build(Graph<T>&, BoundParams<T>&).
template <class Builder>
std::pair<double, ParamVector> value_and_grad(const Builder& build, const ParamVector& w) {
    Graph<double> g;
    auto bp = bind_params(g, w);
    const auto loss = build(g, bp);
    g.backward(loss);
    ParamVector grad(w.layout);
    auto flat = gather_param_grads(g, bp);
    grad.values = std::move(flat);
    return {g.value(loss).data[0], std::move(grad)};
}

template <class Builder>
double loss_value(const Builder& build, const ParamVector& w) {
    Graph<double> g;
    auto bp = bind_params(g, w);
    return g.value(build(g, bp)).data[0];
}

/// Hessian-vector product operator for a builder loss at fixed parameters,
/// computed forward-over-reverse: never materialises the Hessian.
template <class Builder>
HvpOperator make_hvp(Builder build, ParamVector w) {
    HvpOperator op;
    op.dim = w.size();
    op.apply_fn = [build = std::move(build), w = std::move(w)](const std::vector<double>& v) {
        Graph<Dual> g;
        auto bp = bind_params(g, w, &v);
        const auto loss = build(g, bp);
        g.backward(loss);
        auto flat = gather_param_grads(g, bp);
        std::vector<double> hv(flat.size());
        for (std::size_t i = 0; i < flat.size(); ++i) hv[i] = flat[i].d;
        return hv;
    };
    return op;
}

} // namespace jetlab::ad
