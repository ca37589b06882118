#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "jetlab/graph.hpp"
#include "jetlab/rng.hpp"

using namespace jetlab;
using ad::Graph;

namespace {

ParamVector make_params(const std::vector<std::pair<std::string, std::vector<int>>>& tensors,
                        std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    auto layout = std::make_shared<ParamLayout>();
    for (const auto& [name, shape] : tensors) layout->add(name, shape);
    ParamVector w(layout);
    RngStream rng(seed);
    for (auto& v : w.values) v = rng.uniform(lo, hi);
    return w;
}

/// FD-checks one builder against reverse mode at the given tolerance.
template <class Builder>
void check_gradient(const Builder& build, const ParamVector& w, double tol, double h = 1e-6) {
    auto [val, grad] = ad::value_and_grad(build, w);
    REQUIRE(std::isfinite(val));
    const auto fd = testutil::fd_gradient(
        [&](const ParamVector& p) { return ad::loss_value(build, p); }, w, h);
    REQUIRE(testutil::max_rel_err(grad.values, fd, 1e-6) < tol);
}

// weights every output element differently so reductions do not hide errors
template <typename T>
typename Graph<T>::Index weighted_sum(Graph<T>& g, typename Graph<T>::Index x) {
    const auto& xv = g.value(x);
    ad::Tensor<T> wts(xv.shape);
    for (long i = 0; i < wts.numel(); ++i)
        wts.data[i] = T(0.3 + 0.17 * static_cast<double>(i % 11));
    return g.sum_all(g.mul(x, g.input(std::move(wts), false, "wts")));
}

} // namespace

TEST_CASE("per-primitive gradients match central finite differences") {
    SECTION("add / sub / mul") {
        auto w = make_params({{"a", {3, 4}}, {"b", {3, 4}}}, 1);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.mul(g.add(bp.nodes[0], bp.nodes[1]),
                                         g.sub(bp.nodes[0], bp.nodes[1])));
        }, w, 1e-6);
    }
    SECTION("scale") {
        auto w = make_params({{"a", {5}}}, 2);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.scale(bp.nodes[0], -2.5));
        }, w, 1e-6);
    }
    SECTION("relu away from the kink") {
        auto w = make_params({{"a", {4, 3}}}, 3);
        for (auto& v : w.values) if (std::abs(v) < 0.05) v += 0.1; // keep clear of 0
        check_gradient([](auto& g, auto& bp) { return weighted_sum(g, g.relu(bp.nodes[0])); },
                       w, 1e-6);
    }
    SECTION("sigmoid") {
        auto w = make_params({{"a", {6}}}, 4, -3.0, 3.0);
        check_gradient([](auto& g, auto& bp) { return weighted_sum(g, g.sigmoid(bp.nodes[0])); },
                       w, 1e-6);
    }
    SECTION("log") {
        auto w = make_params({{"a", {6}}}, 5, 0.5, 3.0);
        check_gradient([](auto& g, auto& bp) { return weighted_sum(g, g.log(bp.nodes[0])); },
                       w, 1e-6);
    }
    SECTION("square") {
        auto w = make_params({{"a", {7}}}, 6);
        check_gradient([](auto& g, auto& bp) { return weighted_sum(g, g.square(bp.nodes[0])); },
                       w, 1e-6);
    }
    SECTION("matmul") {
        auto w = make_params({{"a", {3, 4}}, {"b", {4, 2}}}, 7);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.matmul(bp.nodes[0], bp.nodes[1]));
        }, w, 1e-6);
    }
    SECTION("linear") {
        auto w = make_params({{"x", {2, 3, 4}}, {"w", {4, 5}}, {"b", {5}}}, 8);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.linear(bp.nodes[0], bp.nodes[1], bp.nodes[2]));
        }, w, 1e-6);
    }
    SECTION("bmm both orientations") {
        auto w = make_params({{"a", {2, 3, 4}}, {"b", {2, 4, 3}}}, 9);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.bmm(bp.nodes[0], bp.nodes[1], false));
        }, w, 1e-6);
        auto w2 = make_params({{"a", {2, 3, 4}}, {"b", {2, 5, 4}}}, 10);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.bmm(bp.nodes[0], bp.nodes[1], true));
        }, w2, 1e-6);
    }
    SECTION("split/merge heads round trip") {
        auto w = make_params({{"x", {2, 3, 4}}}, 11);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.merge_heads(g.split_heads(bp.nodes[0], 2), 2));
        }, w, 1e-6);
    }
    SECTION("masked softmax") {
        auto w = make_params({{"s", {2, 3, 3}}}, 12);
        static const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1}; // [B=2, N=3]
        check_gradient([](auto& g, auto& bp) {
            ad::SlotMask m{2, 3, mask.data()};
            return weighted_sum(g, g.masked_softmax(bp.nodes[0], m));
        }, w, 1e-6);
    }
    SECTION("layer norm") {
        auto w = make_params({{"x", {3, 5}}, {"g", {5}}, {"b", {5}}}, 13);
        check_gradient([](auto& g, auto& bp) {
            return weighted_sum(g, g.layer_norm(bp.nodes[0], bp.nodes[1], bp.nodes[2]));
        }, w, 1e-6);
    }
    SECTION("masked mean pool") {
        auto w = make_params({{"x", {2, 3, 4}}}, 14);
        static const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 1, 1};
        check_gradient([](auto& g, auto& bp) {
            ad::SlotMask m{2, 3, mask.data()};
            return weighted_sum(g, g.masked_mean_pool(bp.nodes[0], m));
        }, w, 1e-6);
    }
    SECTION("mean_all and reshape") {
        auto w = make_params({{"x", {2, 6}}}, 15);
        check_gradient([](auto& g, auto& bp) {
            return g.mean_all(g.square(g.reshape(bp.nodes[0], {3, 4})));
        }, w, 1e-6);
    }
}

TEST_CASE("loss 0.5*|w|^2 has gradient exactly w") {
    auto w = make_params({{"w", {9}}}, 20, -2.0, 2.0);
    auto [val, grad] = ad::value_and_grad(
        [](auto& g, auto& bp) { return g.scale(g.sum_all(g.square(bp.nodes[0])), 0.5); }, w);
    for (long i = 0; i < w.size(); ++i) REQUIRE(grad.values[i] == w.values[i]);
    double expect = 0.0;
    for (double v : w.values) expect += v * v;
    REQUIRE(val == Catch::Approx(0.5 * expect).epsilon(1e-15));
}

TEST_CASE("a loss that ignores the parameters has zero gradient") {
    auto w = make_params({{"w", {4}}}, 21);
    Graph<double> g;
    auto bp = ad::bind_params(g, w);
    ad::Tensor<double> c({1});
    c.data[0] = 3.25;
    const auto loss = g.sum_all(g.input(std::move(c), false, "const"));
    g.backward(loss);
    const auto flat = ad::gather_param_grads(g, bp);
    for (double v : flat) REQUIRE(v == 0.0);
}

TEST_CASE("toy MLP gradient matches finite differences below 1e-6") {
    // two samples through an 8->3->1 ReLU net folded into a scalar loss
    auto w = make_params({{"w1", {2, 3}}, {"b1", {3}}, {"w2", {3, 1}}}, 22, -0.8, 0.8);
    static const std::vector<double> xdata = {0.3, -0.7, 1.1, 0.9};
    check_gradient([](auto& g, auto& bp) {
        using T = std::decay_t<decltype(g.value(0).data[0])>;
        ad::Tensor<T> x({2, 2});
        for (int i = 0; i < 4; ++i) x.data[i] = T(xdata[i]);
        auto h = g.relu(g.linear(g.input(std::move(x), false, "x"), bp.nodes[0], bp.nodes[1]));
        return g.mean_all(g.square(g.matmul(h, bp.nodes[2])));
    }, w, 1e-6, 1e-5);
}

TEST_CASE("non-finite intermediates raise a diagnostic naming the node") {
    auto w = make_params({{"w", {3}}}, 23, -2.0, -1.0); // negative values
    try {
        ad::loss_value([](auto& g, auto& bp) { return g.sum_all(g.log(bp.nodes[0])); }, w);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("log") != std::string::npos);
        REQUIRE(std::string(e.what()).find("node #") != std::string::npos);
    }
}

TEST_CASE("gradients are bit-identical across repeated evaluations") {
    auto w = make_params({{"a", {4, 4}}, {"b", {4, 4}}}, 24);
    auto build = [](auto& g, auto& bp) {
        return g.mean_all(g.square(g.matmul(bp.nodes[0], bp.nodes[1])));
    };
    auto [v1, g1] = ad::value_and_grad(build, w);
    auto [v2, g2] = ad::value_and_grad(build, w);
    REQUIRE(v1 == v2);
    REQUIRE(g1.values == g2.values);
}

TEST_CASE("HVP of a fixed quadratic is exactly A*v") {
    // loss = 0.5 * w^T A w with integer-valued symmetric A: exact arithmetic
    const int n = 4;
    static const std::vector<double> A = {2, 1, 0, -1,
                                          1, 3, 2, 0,
                                          0, 2, 5, 1,
                                          -1, 0, 1, 4};
    auto w = make_params({{"w", {1, n}}}, 25, -2.0, 2.0);
    auto build = [](auto& g, auto& bp) {
        using T = std::decay_t<decltype(g.value(0).data[0])>;
        ad::Tensor<T> at({n, n});
        for (int i = 0; i < n * n; ++i) at.data[i] = T(A[i]);
        auto aw = g.matmul(bp.nodes[0], g.input(std::move(at), false, "A")); // w^T A (A symmetric)
        return g.scale(g.sum_all(g.mul(bp.nodes[0], aw)), 0.5);
    };
    const auto op = ad::make_hvp(build, w);
    const std::vector<double> v = {1.0, -2.0, 0.5, 3.0};
    const auto hv = op.apply(v);
    for (int i = 0; i < n; ++i) {
        double expect = 0.0;
        for (int j = 0; j < n; ++j) expect += A[i * n + j] * v[j];
        REQUIRE(hv[i] == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("assembled dense Hessian matches finite differences of the gradient") {
    // small nonlinear net, ~30 parameters
    auto w = make_params({{"w1", {3, 4}}, {"b1", {4}}, {"w2", {4, 2}}, {"b2", {2}}}, 26, -0.7, 0.7);
    static const std::vector<double> xdata = {0.2, -0.5, 0.9, 1.2, 0.1, -0.8};
    auto build = [](auto& g, auto& bp) {
        using T = std::decay_t<decltype(g.value(0).data[0])>;
        ad::Tensor<T> x({2, 3});
        for (int i = 0; i < 6; ++i) x.data[i] = T(xdata[i]);
        auto h = g.sigmoid(g.linear(g.input(std::move(x), false, "x"), bp.nodes[0], bp.nodes[1]));
        return g.mean_all(g.square(g.linear(h, bp.nodes[2], bp.nodes[3])));
    };
    const long dim = w.size();
    const auto op = ad::make_hvp(build, w);

    // dense H by applying to unit vectors
    std::vector<std::vector<double>> H(dim);
    for (long i = 0; i < dim; ++i) {
        std::vector<double> e(dim, 0.0);
        e[i] = 1.0;
        H[i] = op.apply(e);
    }
    // FD of gradients: H[:,i] ~ (grad(w + h e_i) - grad(w - h e_i)) / 2h
    const double h = 1e-4;
    double worst = 0.0;
    for (long i = 0; i < dim; ++i) {
        ParamVector up = w, dn = w;
        up.values[i] += h;
        dn.values[i] -= h;
        const auto gu = ad::value_and_grad(build, up).second;
        const auto gd = ad::value_and_grad(build, dn).second;
        for (long j = 0; j < dim; ++j) {
            const double fd = (gu.values[j] - gd.values[j]) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(H[i][j]), 1e-4});
            worst = std::max(worst, std::abs(fd - H[i][j]) / denom);
        }
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("HVP operator is linear and symmetric") {
    auto w = make_params({{"w1", {4, 5}}, {"b1", {5}}, {"w2", {5, 1}}}, 27, -0.6, 0.6);
    static const std::vector<double> xdata = {0.3, 0.1, -0.4, 0.8, -0.2, 0.5, 0.7, -0.9};
    auto build = [](auto& g, auto& bp) {
        using T = std::decay_t<decltype(g.value(0).data[0])>;
        ad::Tensor<T> x({2, 4});
        for (int i = 0; i < 8; ++i) x.data[i] = T(xdata[i]);
        auto h = g.sigmoid(g.linear(g.input(std::move(x), false, "x"), bp.nodes[0], bp.nodes[1]));
        return g.mean_all(g.square(g.matmul(h, bp.nodes[2])));
    };
    const auto op = ad::make_hvp(build, w);
    RngStream rng(99);
    double worst_sym = 0.0, worst_lin = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> u(w.size()), v(w.size());
        for (auto& x : u) x = rng.normal();
        for (auto& x : v) x = rng.normal();
        const auto hu = op.apply(u);
        const auto hv = op.apply(v);
        const double uhv = vdot(u, hv), vhu = vdot(v, hu);
        worst_sym = std::max(worst_sym, std::abs(uhv - vhu) / std::max(1e-8, std::abs(uhv)));

        std::vector<double> lin(w.size());
        for (long i = 0; i < w.size(); ++i) lin[i] = 2.0 * u[i] - 0.5 * v[i];
        const auto hlin = op.apply(lin);
        for (long i = 0; i < w.size(); ++i) {
            const double expect = 2.0 * hu[i] - 0.5 * hv[i];
            worst_lin = std::max(worst_lin,
                                 std::abs(hlin[i] - expect) / std::max(1e-8, std::abs(expect)));
        }
    }
    REQUIRE(worst_sym < 1e-7);
    REQUIRE(worst_lin < 1e-8);
}

TEST_CASE("HVP agrees with finite differences of the gradient along a direction") {
    auto w = make_params({{"w1", {5, 6}}, {"b1", {6}}, {"w2", {6, 3}}, {"b2", {3}}}, 28, -0.5, 0.5);
    static std::vector<double> xdata;
    xdata.clear();
    RngStream xr(123);
    for (int i = 0; i < 15; ++i) xdata.push_back(xr.uniform(-1, 1));
    auto build = [](auto& g, auto& bp) {
        using T = std::decay_t<decltype(g.value(0).data[0])>;
        ad::Tensor<T> x({3, 5});
        for (int i = 0; i < 15; ++i) x.data[i] = T(xdata[i]);
        auto h = g.relu(g.linear(g.input(std::move(x), false, "x"), bp.nodes[0], bp.nodes[1]));
        return g.mean_all(g.square(g.linear(h, bp.nodes[2], bp.nodes[3])));
    };
    const auto op = ad::make_hvp(build, w);
    RngStream rng(7);
    std::vector<double> v(w.size());
    for (auto& x : v) x = rng.normal();
    const auto hv = op.apply(v);

    const double h = 1e-4;
    ParamVector up = w, dn = w;
    up.axpy(h, v);
    dn.axpy(-h, v);
    const auto gu = ad::value_and_grad(build, up).second;
    const auto gd = ad::value_and_grad(build, dn).second;
    double worst = 0.0;
    for (long i = 0; i < w.size(); ++i) {
        const double fd = (gu.values[i] - gd.values[i]) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - hv[i]) / std::max({std::abs(fd), std::abs(hv[i]), 1e-4}));
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("incompatible layouts are rejected") {
    auto a = make_params({{"w", {3}}}, 30);
    auto b = make_params({{"w", {4}}}, 31);
    REQUIRE_THROWS_AS(a.dot(b), ContractError);
    auto c = make_params({{"x", {3}}}, 32);
    REQUIRE_THROWS_AS(a.check_same_layout(c), ContractError);
}
