#pragma once

#include <numeric>
#include <vector>

#include "jetlab/errors.hpp"

namespace jetlab::ad {

/// Dense row-major tensor of rank <= 4. Rank-0 is represented as shape {1}.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape)) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<long>(data.size()) != numel_of(shape))
            throw ContractError("Tensor: data size does not match shape");
    }

    static long numel_of(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    long numel() const { return static_cast<long>(data.size()); }
    int dim(int i) const { return shape[i]; }
    int rank() const { return static_cast<int>(shape.size()); }
    /// size of the trailing axis
    int last() const { return shape.empty() ? 1 : shape.back(); }
    /// number of rows when viewed as [rows, last()]
    long rows() const { return last() ? numel() / last() : 0; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
};

inline bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

// ---------------------------------------------------------------------------
// Small GEMM kernels shared by the graph primitives. Row-major, accumulate
// into C; loop orders keep the inner loop contiguous for both operands.
// ---------------------------------------------------------------------------

/// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<long>(i) * k;
        T* crow = c + static_cast<long>(i) * n;
        for (int l = 0; l < k; ++l) {
            const T av = arow[l];
            const T* brow = b + static_cast<long>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<long>(i) * k;
        T* crow = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<long>(j) * k;
            T acc{};
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<long>(i) * k;
        const T* brow = b + static_cast<long>(i) * n;
        for (int l = 0; l < k; ++l) {
            const T av = arow[l];
            T* crow = c + static_cast<long>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace jetlab::ad
