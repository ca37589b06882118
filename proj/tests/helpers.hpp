#pragma once

// Shared test utilities: finite-difference oracles, an independent dense
// eigensolver, and scratch-directory plumbing. Everything here is test-only
// and deliberately written along different code paths from the library.

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "jetlab/params.hpp"

namespace testutil {

/// Central finite-difference gradient of a scalar function of a ParamVector.
inline std::vector<double> fd_gradient(const std::function<double(const jetlab::ParamVector&)>& f,
                                       const jetlab::ParamVector& w, double h = 1e-5) {
    std::vector<double> g(w.size());
    jetlab::ParamVector p = w;
    for (long i = 0; i < w.size(); ++i) {
        const double orig = p.values[i];
        p.values[i] = orig + h;
        const double up = f(p);
        p.values[i] = orig - h;
        const double dn = f(p);
        p.values[i] = orig;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

/// Cyclic Jacobi eigensolver for symmetric matrices (test oracle; independent
/// of the library's Lanczos + tridiagonal-QL route).
inline void jacobi_eig(std::vector<double> a, int n, std::vector<double>& eigvals,
                       std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<long>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<long>(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<long>(p) * n + q] * a[static_cast<long>(p) * n + q];
        if (off < 1e-26) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<long>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<long>(p) * n + p];
                const double aqq = a[static_cast<long>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<long>(k) * n + p];
                    const double akq = a[static_cast<long>(k) * n + q];
                    a[static_cast<long>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<long>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<long>(p) * n + k];
                    const double aqk = a[static_cast<long>(q) * n + k];
                    a[static_cast<long>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<long>(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs[static_cast<long>(k) * n + p];
                    const double vkq = eigvecs[static_cast<long>(k) * n + q];
                    eigvecs[static_cast<long>(k) * n + p] = c * vkp - s * vkq;
                    eigvecs[static_cast<long>(k) * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = a[static_cast<long>(i) * n + i];
}

/// Random symmetric matrix with a KNOWN spectrum: A = Q diag(lambda) Q^T with
/// Q from Gram-Schmidt on a random Gaussian matrix.
inline std::vector<double> matrix_with_spectrum(const std::vector<double>& lambda,
                                                unsigned rng_seed) {
    const int n = static_cast<int>(lambda.size());
    std::mt19937_64 gen(rng_seed);
    std::vector<double> q(static_cast<long>(n) * n);
    auto unif = [&] { return (static_cast<double>(gen() >> 11) * 0x1.0p-53) * 2.0 - 1.0; };
    for (auto& x : q) x = unif();
    // Gram-Schmidt columns
    for (int j = 0; j < n; ++j) {
        for (int prev = 0; prev < j; ++prev) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += q[static_cast<long>(i) * n + j] * q[static_cast<long>(i) * n + prev];
            for (int i = 0; i < n; ++i) q[static_cast<long>(i) * n + j] -= dot * q[static_cast<long>(i) * n + prev];
        }
        double norm = 0.0;
        for (int i = 0; i < n; ++i) norm += q[static_cast<long>(i) * n + j] * q[static_cast<long>(i) * n + j];
        norm = std::sqrt(norm);
        for (int i = 0; i < n; ++i) q[static_cast<long>(i) * n + j] /= norm;
    }
    std::vector<double> a(static_cast<long>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < n; ++k)
                s += q[static_cast<long>(i) * n + k] * lambda[k] * q[static_cast<long>(j) * n + k];
            a[static_cast<long>(i) * n + j] = s;
        }
    return a;
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() /
               ("jetlab_test_" + name + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

} // namespace testutil
