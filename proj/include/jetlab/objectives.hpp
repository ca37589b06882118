#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "jetlab/batches.hpp"
#include "jetlab/graph.hpp"
#include "jetlab/model.hpp"

namespace jetlab {

/// Training-objective knobs. lambda == 0 recovers the unconstrained model and
/// skips the boosted forward pass entirely.
struct LossConfig {
    double lambda = 0.1;      // weight of the boost-consistency penalty
    double boost_y_max = 0.35; // rapidity cap for sampled view boosts
    int views_per_sample = 1;

    void validate() const {
        if (lambda < 0.0) throw ConfigError("LossConfig: lambda must be >= 0");
        if (boost_y_max < 0.0) throw ConfigError("LossConfig: boost_y_max must be >= 0");
        if (views_per_sample < 1) throw ConfigError("LossConfig: views_per_sample must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"lambda", lambda}, {"boost_y_max", boost_y_max}, {"views_per_sample", views_per_sample}};
    }

    static LossConfig from_json(const nlohmann::json& j) {
        LossConfig c;
        c.lambda = j.value("lambda", 0.1);
        c.boost_y_max = j.value("boost_y_max", 0.35);
        c.views_per_sample = j.value("views_per_sample", 1);
        c.validate();
        return c;
    }
};

/// Numerically stable binary cross-entropy on the tape:
/// mean over the batch of relu(z) - z*y - log(sigmoid(|z|)), with |z| built
/// from two relus; identical to max(z,0) - z*y + log(1+exp(-|z|)).
template <typename T>
typename ad::Graph<T>::Index bce_graph(ad::Graph<T>& g, typename ad::Graph<T>::Index logits,
                                       const std::vector<double>& labels) {
    const auto& zv = g.value(logits);
    if (zv.numel() != static_cast<long>(labels.size()))
        throw ContractError("bce_graph: logits/labels length mismatch");
    ad::Tensor<T> y(zv.shape);
    for (long i = 0; i < y.numel(); ++i) y.data[i] = T(labels[i]);
    const auto yn = g.input(std::move(y), false, "labels");
    const auto zy = g.mul(logits, yn);
    const auto abs_z = g.add(g.relu(logits), g.relu(g.scale(logits, -1.0)));
    const auto log_sig = g.log(g.sigmoid(abs_z));
    return g.mean_all(g.sub(g.sub(g.relu(logits), zy), log_sig));
}

/// Stable BCE on plain doubles (evaluation path, no tape).
inline double bce_loss(const std::vector<double>& logits, const std::vector<double>& labels) {
    if (logits.size() != labels.size()) throw ContractError("bce_loss: length mismatch");
    if (logits.empty()) throw ContractError("bce_loss: empty batch");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        s += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
    }
    return s / static_cast<double>(logits.size());
}

/// Mean squared error between two logit vectors on the tape.
template <typename T>
typename ad::Graph<T>::Index mse_graph(ad::Graph<T>& g, typename ad::Graph<T>::Index a,
                                       typename ad::Graph<T>::Index b) {
    return g.mean_all(g.square(g.sub(a, b)));
}

/// Distillation loss (1/B) sum (s_i - t_i)^2 against fixed teacher logits.
template <typename T>
typename ad::Graph<T>::Index distill_graph(ad::Graph<T>& g, typename ad::Graph<T>::Index student,
                                           const std::vector<double>& teacher) {
    const auto& sv = g.value(student);
    if (sv.numel() != static_cast<long>(teacher.size()))
        throw ContractError("distill_graph: student/teacher length mismatch");
    ad::Tensor<T> t(sv.shape);
    for (long i = 0; i < t.numel(); ++i) t.data[i] = T(teacher[i]);
    return mse_graph(g, student, g.input(std::move(t), false, "teacher_logits"));
}

inline double distill_loss(const std::vector<double>& student, const std::vector<double>& teacher) {
    if (student.size() != teacher.size()) throw ContractError("distill_loss: length mismatch");
    if (student.empty()) throw ContractError("distill_loss: empty batch");
    double s = 0.0;
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double d = student[i] - teacher[i];
        s += d * d;
    }
    return s / static_cast<double>(student.size());
}

/// One fixed differentiable scalar objective: the model's total training loss
/// (BCE, plus lambda times the boost-consistency penalty when lambda > 0)
/// at a frozen batch and frozen boosted views. This is the function whose
/// gradient, Hessian-vector products and parameter slices the diagnostics use.
struct LossContext {
    ModelConfig model;
    LossConfig loss;
    Batch nominal;
    std::vector<Batch> boosted_views; // one per view when loss.lambda > 0

    template <typename T>
    typename ad::Graph<T>::Index build(ad::Graph<T>& g, const ad::BoundParams<T>& bp) const {
        const auto logits = model_forward(g, bp, model, nominal);
        auto total = bce_graph(g, logits, nominal.labels);
        if (loss.lambda > 0.0 && !boosted_views.empty()) {
            const double w = loss.lambda / static_cast<double>(boosted_views.size());
            for (const auto& view : boosted_views) {
                const auto view_logits = model_forward(g, bp, model, view);
                total = g.add(total, g.scale(mse_graph(g, logits, view_logits), w));
            }
        }
        return total;
    }

    double value(const ParamVector& w) const {
        return ad::loss_value([this](auto& g, auto& bp) { return build(g, bp); }, w);
    }

    std::pair<double, ParamVector> value_and_grad(const ParamVector& w) const {
        return ad::value_and_grad([this](auto& g, auto& bp) { return build(g, bp); }, w);
    }

    HvpOperator hvp(const ParamVector& w) const {
        return ad::make_hvp([ctx = *this](auto& g, auto& bp) { return ctx.build(g, bp); }, w);
    }
};

/// Draw one boost per jet; with y_max == 0 every view is the identity and no
/// randomness is consumed.
inline std::vector<BoostVector> sample_view_boosts(RngStream& rng, double y_max, std::size_t count) {
    std::vector<BoostVector> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(y_max > 0.0 ? sample_boost(rng, y_max) : BoostVector{});
    return out;
}

/// Boost-consistency penalty for a jet list: mean squared difference between
/// the logits of the nominal view and one freshly boosted view per jet.
inline double symmetry_penalty(const ParamVector& w, const ModelConfig& mc,
                               const std::vector<Jet>& jets, RngStream& rng,
                               const LossConfig& lc, long* clamp_count = nullptr) {
    lc.validate();
    const auto idx = iota_indices(static_cast<long>(jets.size()));
    const Batch nominal = make_batch(jets, idx);
    const auto z1 = forward_logits(w, mc, nominal);
    double total = 0.0;
    for (int v = 0; v < lc.views_per_sample; ++v) {
        const auto boosts = sample_view_boosts(rng, lc.boost_y_max, jets.size());
        const Batch view = make_boosted_batch(jets, idx, boosts, nominal.n, clamp_count);
        const auto z2 = forward_logits(w, mc, view);
        total += distill_loss(z1, z2); // same MSE form
    }
    return total / lc.views_per_sample;
}

/// Total training objective evaluated on a jet list (convenience, no tape).
inline double total_loss(const ParamVector& w, const ModelConfig& mc, const std::vector<Jet>& jets,
                         RngStream& rng, const LossConfig& lc) {
    const auto idx = iota_indices(static_cast<long>(jets.size()));
    const Batch nominal = make_batch(jets, idx);
    const auto z = forward_logits(w, mc, nominal);
    const double bce = bce_loss(z, nominal.labels);
    if (lc.lambda == 0.0) return bce;
    return bce + lc.lambda * symmetry_penalty(w, mc, jets, rng, lc);
}

} // namespace jetlab
