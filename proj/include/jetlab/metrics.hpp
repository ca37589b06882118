#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "jetlab/batches.hpp"
#include "jetlab/model.hpp"

namespace jetlab {

/// ROC-AUC via the rank-statistic (Mann-Whitney U) formulation, ties counted
/// as one half. Algebraically identical to enumerating all positive-negative
/// score pairs.
inline double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size()) throw ContractError("roc_auc: length mismatch");
    const long n = static_cast<long>(scores.size());
    long n_pos = 0;
    for (double y : labels) n_pos += (y > 0.5);
    const long n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DomainError("roc_auc: both classes must be present");

    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](long a, long b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    long i = 0;
    while (i < n) {
        long j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>((i + 1) + (j + 1)); // 1-based
        for (long k = i; k <= j; ++k)
            if (labels[order[k]] > 0.5) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct MetricReport {
    double accuracy = 0.0;
    double roc_auc = 0.0;
    long n_samples = 0;
    double positive_fraction = 0.0;
    std::string checkpoint_id;
    std::string dataset_tag;
    double sigma = 0.0; // smearing strength, 0 when unsmeared

    nlohmann::json to_json() const {
        return {{"accuracy", accuracy},       {"roc_auc", roc_auc},
                {"n_samples", n_samples},     {"positive_fraction", positive_fraction},
                {"checkpoint_id", checkpoint_id}, {"dataset_tag", dataset_tag},
                {"sigma", sigma}};
    }
};

inline constexpr int kEvalBatch = 256;

/// Sigmoid scores for a jet list, evaluated in fixed-size batches.
inline std::vector<double> score_jets(const ParamVector& w, const ModelConfig& mc,
                                      const std::vector<Jet>& jets) {
    std::vector<double> scores;
    scores.reserve(jets.size());
    const long n = static_cast<long>(jets.size());
    for (long start = 0; start < n; start += kEvalBatch) {
        const long stop = std::min(n, start + kEvalBatch);
        std::vector<long> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch batch = make_batch(jets, idx);
        for (double z : forward_logits(w, mc, batch)) scores.push_back(ad::stable_sigmoid(z));
    }
    return scores;
}

/// Accuracy at probability threshold and ROC-AUC over a jet list.
inline MetricReport evaluate(const ParamVector& w, const ModelConfig& mc,
                             const std::vector<Jet>& jets, double threshold = 0.5) {
    if (jets.empty()) throw DomainError("evaluate: empty dataset");
    const auto scores = score_jets(w, mc, jets);
    std::vector<double> labels;
    labels.reserve(jets.size());
    for (const auto& j : jets) labels.push_back(static_cast<double>(j.label));

    MetricReport r;
    r.n_samples = static_cast<long>(jets.size());
    long correct = 0, pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > threshold;
        correct += (pred == (labels[i] > 0.5));
        pos += (labels[i] > 0.5);
    }
    r.accuracy = static_cast<double>(correct) / r.n_samples;
    r.positive_fraction = static_cast<double>(pos) / r.n_samples;
    r.roc_auc = roc_auc(scores, labels);
    return r;
}

/// Evaluate under progressively stronger momentum smearing. Each sigma gets a
/// fresh seeded noise realisation; sigma == 0 reproduces evaluate() exactly.
inline std::vector<MetricReport> robustness_sweep(const ParamVector& w, const ModelConfig& mc,
                                                  const std::vector<Jet>& jets,
                                                  const std::vector<double>& sigmas,
                                                  std::uint64_t seed) {
    for (double s : sigmas)
        if (s < 0.0) throw ConfigError("robustness_sweep: sigma must be >= 0");
    std::vector<MetricReport> out;
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        RngStream rng(derive_seed(seed, 0x5EA2, si));
        std::vector<Jet> smeared;
        smeared.reserve(jets.size());
        for (const auto& j : jets) smeared.push_back(smear_pt(j, sigmas[si], rng));
        MetricReport r = evaluate(w, mc, smeared);
        r.sigma = sigmas[si];
        out.push_back(std::move(r));
    }
    return out;
}

/// Frozen-checkpoint evaluation on out-of-distribution pairings (test splits).
inline std::vector<MetricReport> ood_eval(const ParamVector& w, const ModelConfig& mc,
                                          const DatasetSplit& near, const DatasetSplit& far) {
    MetricReport rn = evaluate(w, mc, near.test);
    rn.dataset_tag = "near_ood";
    MetricReport rf = evaluate(w, mc, far.test);
    rf.dataset_tag = "far_ood";
    return {rn, rf};
}

} // namespace jetlab
