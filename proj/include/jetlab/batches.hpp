#pragma once

#include <vector>

#include "jetlab/jets.hpp"
#include "jetlab/kinematics.hpp"
#include "jetlab/model.hpp"

namespace jetlab {

/// Feature matrix of one jet (n x 7), computed against the jet axis taken as
/// the four-vector sum of its constituents.
struct JetFeatures {
    int n = 0;
    std::vector<double> rows; // n * FeatureRow::kDim
};

inline JetFeatures features_of(const Jet& jet, PtFloorPolicy policy = PtFloorPolicy::kReject,
                               long* clamp_count = nullptr) {
    const auto rows = jet_features(jet.constituents, jet.total(), policy, clamp_count);
    JetFeatures f;
    f.n = static_cast<int>(rows.size());
    f.rows.resize(static_cast<long>(f.n) * FeatureRow::kDim);
    for (int i = 0; i < f.n; ++i) rows[i].write_to(f.rows.data() + static_cast<long>(i) * FeatureRow::kDim);
    return f;
}

/// Features of the boosted view: every constituent is boosted by b before
/// feature computation; the boosted jet axis equals the boost of the original
/// axis because pure boosts are linear. pT values that the boost drives below
/// the floor are clamped (and counted) so the log features stay finite.
inline JetFeatures boosted_features_of(const Jet& jet, const BoostVector& b,
                                       long* clamp_count = nullptr) {
    Jet view;
    view.constituents.reserve(jet.constituents.size());
    for (const auto& c : jet.constituents) view.constituents.push_back(boost(c, b));
    view.label = jet.label;
    return features_of(view, PtFloorPolicy::kClamp, clamp_count);
}

/// Pad per-jet features into one Batch; slot count is the largest jet in the set.
inline Batch assemble_batch(const std::vector<const JetFeatures*>& feats,
                            const std::vector<double>& labels) {
    if (feats.empty() || feats.size() != labels.size())
        throw ContractError("assemble_batch: empty batch or label mismatch");
    Batch batch;
    batch.b = static_cast<int>(feats.size());
    batch.n = 1;
    for (const auto* f : feats) batch.n = std::max(batch.n, f->n);
    batch.features.assign(static_cast<long>(batch.b) * batch.n * FeatureRow::kDim, 0.0);
    batch.mask.assign(static_cast<long>(batch.b) * batch.n, 0);
    batch.labels = labels;
    for (int i = 0; i < batch.b; ++i) {
        const auto* f = feats[i];
        std::copy(f->rows.begin(), f->rows.end(),
                  batch.features.begin() + (static_cast<long>(i) * batch.n) * FeatureRow::kDim);
        for (int j = 0; j < f->n; ++j) batch.mask[static_cast<long>(i) * batch.n + j] = 1;
    }
    return batch;
}

/// Nominal-feature batch for a list of jets (by index into `jets`).
inline Batch make_batch(const std::vector<Jet>& jets, const std::vector<long>& indices) {
    std::vector<JetFeatures> owned;
    owned.reserve(indices.size());
    std::vector<const JetFeatures*> ptrs;
    std::vector<double> labels;
    for (long idx : indices) {
        owned.push_back(features_of(jets[idx]));
        labels.push_back(static_cast<double>(jets[idx].label));
    }
    for (const auto& f : owned) ptrs.push_back(&f);
    return assemble_batch(ptrs, labels);
}

/// Boosted-view batch for the same jets with one boost per jet. The slot count
/// is forced to match `like` so the two views pair up row for row.
inline Batch make_boosted_batch(const std::vector<Jet>& jets, const std::vector<long>& indices,
                                const std::vector<BoostVector>& boosts, int pad_to,
                                long* clamp_count = nullptr) {
    if (indices.size() != boosts.size())
        throw ContractError("make_boosted_batch: one boost per jet required");
    std::vector<JetFeatures> owned;
    owned.reserve(indices.size());
    std::vector<const JetFeatures*> ptrs;
    std::vector<double> labels;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        owned.push_back(boosted_features_of(jets[indices[i]], boosts[i], clamp_count));
        labels.push_back(static_cast<double>(jets[indices[i]].label));
    }
    for (const auto& f : owned) ptrs.push_back(&f);
    Batch batch = assemble_batch(ptrs, labels);
    if (batch.n > pad_to) throw ContractError("make_boosted_batch: pad_to too small");
    if (batch.n < pad_to) {
        Batch wide;
        wide.b = batch.b;
        wide.n = pad_to;
        wide.labels = batch.labels;
        wide.features.assign(static_cast<long>(wide.b) * pad_to * FeatureRow::kDim, 0.0);
        wide.mask.assign(static_cast<long>(wide.b) * pad_to, 0);
        for (int i = 0; i < batch.b; ++i) {
            std::copy_n(batch.features.begin() + (static_cast<long>(i) * batch.n) * FeatureRow::kDim,
                        static_cast<long>(batch.n) * FeatureRow::kDim,
                        wide.features.begin() + (static_cast<long>(i) * pad_to) * FeatureRow::kDim);
            std::copy_n(batch.mask.begin() + static_cast<long>(i) * batch.n, batch.n,
                        wide.mask.begin() + static_cast<long>(i) * pad_to);
        }
        return wide;
    }
    return batch;
}

inline std::vector<long> iota_indices(long n) {
    std::vector<long> idx(n);
    for (long i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

} // namespace jetlab
