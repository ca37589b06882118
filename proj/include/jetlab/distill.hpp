#pragma once

#include <numeric>
#include <vector>

#include <json.hpp>

#include "jetlab/trainer.hpp"

namespace jetlab {

/// Distillation trajectory: per-epoch train and held-out MSE between student
/// and teacher logits. Labels are never read anywhere in this module.
struct DistillRecord {
    std::string teacher_id;
    std::uint64_t seed = 0;
    double initial_heldout_mse = 0.0; // before the first update
    double initial_train_mse = 0.0;
    std::vector<double> train_mse;    // one entry per epoch
    std::vector<double> heldout_mse;  // one entry per epoch
    nlohmann::json student_config;

    nlohmann::json to_json() const {
        return {{"teacher_id", teacher_id},
                {"seed", seed},
                {"initial_heldout_mse", initial_heldout_mse},
                {"initial_train_mse", initial_train_mse},
                {"train_mse", train_mse},
                {"heldout_mse", heldout_mse},
                {"student_config", student_config}};
    }
};

struct DistillResult {
    ParamVector student_params;
    DistillRecord record;
};

namespace detail {

inline std::vector<double> logits_for(const ParamVector& w, const ModelConfig& mc,
                                      const std::vector<Jet>& jets) {
    std::vector<double> out;
    out.reserve(jets.size());
    const long n = static_cast<long>(jets.size());
    for (long start = 0; start < n; start += kEvalBatch) {
        const long stop = std::min(n, start + kEvalBatch);
        std::vector<long> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        for (double z : forward_logits(w, mc, make_batch(jets, idx))) out.push_back(z);
    }
    return out;
}

} // namespace detail

/// Train a student to match a frozen teacher's logits on the training split;
/// held-out MSE is tracked on the test split each epoch. The student may start
/// from explicit parameters (used by the self-distillation fixed-point check).
inline DistillResult distill(const ParamVector& teacher, const ModelConfig& teacher_mc,
                             const ModelConfig& student_mc, const DatasetSplit& data,
                             const TrainConfig& tc, std::uint64_t seed,
                             const std::string& teacher_id = "",
                             const ParamVector* student_start = nullptr) {
    teacher_mc.validate();
    student_mc.validate();
    tc.validate();
    if (data.train.empty() || data.test.empty())
        throw ConfigError("distill: train and test splits must be non-empty");

    const auto teacher_train = detail::logits_for(teacher, teacher_mc, data.train);
    const auto teacher_test = detail::logits_for(teacher, teacher_mc, data.test);

    ParamVector student = student_start ? *student_start : init_params(student_mc, seed);
    AdamState adam(student.size());

    const long n_train = static_cast<long>(data.train.size());
    std::vector<JetFeatures> feats(n_train);
    for (long i = 0; i < n_train; ++i) feats[i] = features_of(data.train[i]);

    DistillRecord rec;
    rec.teacher_id = teacher_id;
    rec.seed = seed;
    rec.student_config = student_mc.to_json();
    rec.initial_heldout_mse =
        distill_loss(detail::logits_for(student, student_mc, data.test), teacher_test);
    rec.initial_train_mse =
        distill_loss(detail::logits_for(student, student_mc, data.train), teacher_train);

    std::vector<long> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    for (long epoch = 0; epoch < tc.epochs; ++epoch) {
        RngStream shuffle_rng(derive_seed(seed, 0xD157, epoch));
        detail::fisher_yates(order, shuffle_rng);

        double epoch_mse = 0.0;
        for (long start = 0; start < n_train; start += tc.batch_size) {
            const long stop = std::min(n_train, start + tc.batch_size);
            std::vector<const JetFeatures*> fp;
            std::vector<double> targets, dummy_labels;
            for (long k = start; k < stop; ++k) {
                fp.push_back(&feats[order[k]]);
                targets.push_back(teacher_train[order[k]]);
                dummy_labels.push_back(0.0);
            }
            const Batch batch = assemble_batch(fp, dummy_labels);

            ad::Graph<double> g;
            auto bp = ad::bind_params(g, student);
            const auto loss = distill_graph(g, model_forward(g, bp, student_mc, batch), targets);
            g.backward(loss);
            ParamVector grad(student.layout);
            grad.values = ad::gather_param_grads(g, bp);
            adam_step(student, grad, adam, tc);
            epoch_mse += g.value(loss).data[0] * static_cast<double>(stop - start);
        }
        rec.train_mse.push_back(epoch_mse / static_cast<double>(n_train));
        rec.heldout_mse.push_back(
            distill_loss(detail::logits_for(student, student_mc, data.test), teacher_test));
    }
    return {std::move(student), std::move(rec)};
}

struct DistillComparison {
    double final_ratio = 0.0;  // a's final held-out MSE over b's
    long crossing_a = -1;      // first epoch with held-out MSE below threshold
    long crossing_b = -1;
    double threshold = 0.0;

    nlohmann::json to_json() const {
        return {{"final_heldout_mse_ratio", final_ratio},
                {"crossing_epoch_a", crossing_a},
                {"crossing_epoch_b", crossing_b},
                {"threshold", threshold}};
    }
};

/// Final-MSE ratio plus threshold-crossing epochs as a convergence-speed proxy.
/// Records must come from the same student config and epoch count.
inline DistillComparison compare_distillation(const DistillRecord& a, const DistillRecord& b,
                                              double threshold) {
    if (a.heldout_mse.size() != b.heldout_mse.size())
        throw ContractError("compare_distillation: epoch counts differ");
    if (a.student_config != b.student_config)
        throw ContractError("compare_distillation: student configs differ");
    auto crossing = [&](const std::vector<double>& xs) -> long {
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (xs[i] < threshold) return static_cast<long>(i);
        return -1;
    };
    DistillComparison c;
    c.threshold = threshold;
    c.final_ratio = a.heldout_mse.back() / b.heldout_mse.back();
    c.crossing_a = crossing(a.heldout_mse);
    c.crossing_b = crossing(b.heldout_mse);
    return c;
}

} // namespace jetlab
