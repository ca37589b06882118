#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "jetlab/errors.hpp"
#include "jetlab/tensor.hpp"

namespace jetlab {

/// Ordered inventory of named parameter tensors inside one flat vector.
struct ParamLayout {
    struct Entry {
        std::string name;
        std::vector<int> shape;
        long offset = 0;
        long size = 0;
    };

    std::vector<Entry> entries;
    long total = 0;

    long add(std::string name, std::vector<int> shape) {
        Entry e;
        e.name = std::move(name);
        e.size = ad::Tensor<double>::numel_of(shape);
        e.shape = std::move(shape);
        e.offset = total;
        total += e.size;
        entries.push_back(std::move(e));
        return entries.back().offset;
    }

    bool compatible_with(const ParamLayout& o) const {
        if (total != o.total || entries.size() != o.entries.size()) return false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].name != o.entries[i].name || entries[i].shape != o.entries[i].shape)
                return false;
        }
        return true;
    }
};

/// Flat vector of all trainable parameters plus its layout. Vectors sharing a
/// layout form the space where gradients, HVPs and eigenvector perturbations live.
struct ParamVector {
    std::shared_ptr<const ParamLayout> layout;
    std::vector<double> values;

    ParamVector() = default;
    explicit ParamVector(std::shared_ptr<const ParamLayout> l)
        : layout(std::move(l)), values(layout ? layout->total : 0, 0.0) {}

    long size() const { return static_cast<long>(values.size()); }

    void check_same_layout(const ParamVector& o) const {
        if (!layout || !o.layout || !layout->compatible_with(*o.layout))
            throw ContractError("ParamVector: incompatible layouts");
    }

    ParamVector& operator+=(const ParamVector& o) {
        check_same_layout(o);
        for (long i = 0; i < size(); ++i) values[i] += o.values[i];
        return *this;
    }

    /// this += a * dir (dir given as a raw vector of matching length)
    void axpy(double a, const std::vector<double>& dir) {
        if (static_cast<long>(dir.size()) != size())
            throw ContractError("ParamVector::axpy: length mismatch");
        for (long i = 0; i < size(); ++i) values[i] += a * dir[i];
    }

    double dot(const ParamVector& o) const {
        check_same_layout(o);
        double s = 0.0;
        for (long i = 0; i < size(); ++i) s += values[i] * o.values[i];
        return s;
    }

    double norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }
};

// Basic dense-vector helpers used by the iterative solvers.
inline double vdot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double vnorm(const std::vector<double>& a) { return std::sqrt(vdot(a, a)); }

inline void vaxpy(std::vector<double>& y, double a, const std::vector<double>& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline void vscale(std::vector<double>& y, double a) {
    for (auto& v : y) v *= a;
}

/// Black-box symmetric linear map v -> H*v at fixed parameters and batch.
/// Lanczos and the Hutchinson estimator consume only this interface.
struct HvpOperator {
    long dim = 0;
    std::function<std::vector<double>(const std::vector<double>&)> apply_fn;

    std::vector<double> apply(const std::vector<double>& v) const {
        if (static_cast<long>(v.size()) != dim)
            throw ContractError("HvpOperator: direction has wrong dimension");
        return apply_fn(v);
    }

    /// Operator backed by an explicit dense symmetric matrix (row-major dim*dim).
    static HvpOperator from_dense(std::vector<double> a, long dim) {
        if (static_cast<long>(a.size()) != dim * dim)
            throw ContractError("HvpOperator::from_dense: matrix size mismatch");
        HvpOperator op;
        op.dim = dim;
        op.apply_fn = [a = std::move(a), dim](const std::vector<double>& v) {
            std::vector<double> out(dim, 0.0);
            for (long i = 0; i < dim; ++i) {
                double s = 0.0;
                const double* row = a.data() + i * dim;
                for (long j = 0; j < dim; ++j) s += row[j] * v[j];
                out[i] = s;
            }
            return out;
        };
        return op;
    }
};

} // namespace jetlab
