#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jetlab/metrics.hpp"
#include "jetlab/objectives.hpp"

namespace jetlab {

struct TrainConfig {
    long epochs = 25;
    double lr = 0.005;
    double weight_decay = 0.0005;
    long batch_size = 128;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool decoupled_decay = false; // default couples L2 into the gradient

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be > 0");
        if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (seeds.empty()) throw ConfigError("TrainConfig: seeds must be non-empty");
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},       {"lr", lr},
                {"weight_decay", weight_decay}, {"batch_size", batch_size},
                {"seeds", seeds},         {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2}, {"adam_eps", adam_eps},
                {"decoupled_decay", decoupled_decay}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.epochs = j.value("epochs", 25L);
        c.lr = j.value("lr", 0.005);
        c.weight_decay = j.value("weight_decay", 0.0005);
        c.batch_size = j.value("batch_size", 128L);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        c.adam_beta1 = j.value("adam_beta1", 0.9);
        c.adam_beta2 = j.value("adam_beta2", 0.999);
        c.adam_eps = j.value("adam_eps", 1e-8);
        c.decoupled_decay = j.value("decoupled_decay", false);
        c.validate();
        return c;
    }
};

struct AdamState {
    std::vector<double> m, v;
    long t = 0;

    explicit AdamState(long dim = 0) : m(dim, 0.0), v(dim, 0.0) {}
};

/// One Adam update with bias correction. By default the L2 term enters the
/// gradient (grad + weight_decay * theta) before the moment updates; the
/// decoupled variant is one config switch away.
inline void adam_step(ParamVector& w, const ParamVector& grad, AdamState& st,
                      const TrainConfig& tc) {
    w.check_same_layout(grad);
    if (static_cast<long>(st.m.size()) != w.size())
        throw ContractError("adam_step: state dimension mismatch");
    for (double g : grad.values)
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");

    ++st.t;
    const double bc1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(st.t));
    for (long i = 0; i < w.size(); ++i) {
        const double g = tc.decoupled_decay ? grad.values[i]
                                            : grad.values[i] + tc.weight_decay * w.values[i];
        st.m[i] = tc.adam_beta1 * st.m[i] + (1.0 - tc.adam_beta1) * g;
        st.v[i] = tc.adam_beta2 * st.v[i] + (1.0 - tc.adam_beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        double step = tc.lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
        if (tc.decoupled_decay) step += tc.lr * tc.weight_decay * w.values[i];
        w.values[i] -= step;
    }
}

/// Per-run results bundle; serialisation is canonical and timing-free so
/// reruns with the same seeds produce byte-identical files (wall time goes
/// to a separate sidecar).
struct RunRecord {
    std::string variant;
    std::uint64_t seed = 0;
    std::vector<double> train_losses;
    std::vector<double> val_losses;
    long selected_epoch = -1;
    double best_val_loss = 0.0;
    double final_accuracy = -1.0; // -1 when no test split was provided
    double final_auc = -1.0;
    long clamp_events = 0;       // pT-floor triggers in boosted views
    std::uint64_t diag_batch_seed = 0; // seed of the frozen diagnostic boosts
    nlohmann::json config_snapshot;
    double wall_time_s = 0.0;

    nlohmann::json to_json() const {
        return {{"variant", variant},
                {"seed", seed},
                {"train_losses", train_losses},
                {"val_losses", val_losses},
                {"selected_epoch", selected_epoch},
                {"best_val_loss", best_val_loss},
                {"final_accuracy", final_accuracy},
                {"final_auc", final_auc},
                {"clamp_events", clamp_events},
                {"diag_batch_seed", diag_batch_seed},
                {"config", config_snapshot}};
    }
};

struct TrainResult {
    ParamVector best_params;
    RunRecord record;
};

namespace detail {

inline void fisher_yates(std::vector<long>& idx, RngStream& rng) {
    for (long i = static_cast<long>(idx.size()) - 1; i > 0; --i) {
        const long j = rng.uniform_int(0, i);
        std::swap(idx[i], idx[j]);
    }
}

/// Fixed validation batches: nominal plus (for the constrained model) one
/// boosted view per jet drawn once per run, so epoch-to-epoch validation
/// losses are comparable and argmin selection is meaningful.
struct ValSet {
    std::vector<Batch> nominal;
    std::vector<Batch> views;
    long total = 0;

    double loss(const ParamVector& w, const ModelConfig& mc, const LossConfig& lc) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < nominal.size(); ++i) {
            const auto z1 = forward_logits(w, mc, nominal[i]);
            double part = bce_loss(z1, nominal[i].labels);
            if (lc.lambda > 0.0) {
                const auto z2 = forward_logits(w, mc, views[i]);
                part += lc.lambda * distill_loss(z1, z2);
            }
            acc += part * nominal[i].b;
        }
        return acc / static_cast<double>(total);
    }
};

inline ValSet make_val_set(const std::vector<Jet>& val, const ModelConfig& mc,
                           const LossConfig& lc, long batch_size, std::uint64_t boost_seed,
                           long* clamp_count) {
    ValSet vs;
    vs.total = static_cast<long>(val.size());
    RngStream boost_rng(boost_seed);
    for (long start = 0; start < vs.total; start += batch_size) {
        const long stop = std::min(vs.total, start + batch_size);
        std::vector<long> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Batch nom = make_batch(val, idx);
        if (lc.lambda > 0.0) {
            const auto boosts = sample_view_boosts(boost_rng, lc.boost_y_max, idx.size());
            vs.views.push_back(make_boosted_batch(val, idx, boosts, nom.n, clamp_count));
        }
        vs.nominal.push_back(std::move(nom));
    }
    return vs;
}

} // namespace detail

/// Full optimisation protocol: Adam with L2 decay at a fixed learning rate,
/// shuffled mini-batches, per-epoch validation, checkpoint of the epoch with
/// the lowest validation loss.
inline TrainResult train(const ModelConfig& mc, const LossConfig& lc, const TrainConfig& tc,
                         std::uint64_t seed, const DatasetSplit& data) {
    mc.validate();
    lc.validate();
    tc.validate();
    if (data.train.empty() || data.val.empty())
        throw ConfigError("train: train and val splits must be non-empty");

    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.seed = seed;
    rec.variant = lc.lambda > 0.0 ? "constrained" : "unconstrained";
    rec.diag_batch_seed = derive_seed(seed, 0xD1A6);
    rec.config_snapshot = {{"model", mc.to_json()}, {"loss", lc.to_json()}, {"train", tc.to_json()}};

    ParamVector params = init_params(mc, seed);
    AdamState adam(params.size());

    const long n_train = static_cast<long>(data.train.size());
    std::vector<JetFeatures> feats(n_train);
    for (long i = 0; i < n_train; ++i) feats[i] = features_of(data.train[i]);

    long clamp_events = 0;
    const auto val_set = detail::make_val_set(data.val, mc, lc, tc.batch_size,
                                              derive_seed(seed, 0x7A11), &clamp_events);

    ParamVector best = params;
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<long> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    for (long epoch = 0; epoch < tc.epochs; ++epoch) {
        RngStream shuffle_rng(derive_seed(seed, 0x50FF, epoch));
        RngStream boost_rng(derive_seed(seed, 0xB005, epoch));
        detail::fisher_yates(order, shuffle_rng);

        double epoch_loss = 0.0;
        for (long start = 0; start < n_train; start += tc.batch_size) {
            const long stop = std::min(n_train, start + tc.batch_size);
            const std::vector<long> idx(order.begin() + start, order.begin() + stop);

            std::vector<const JetFeatures*> fp;
            std::vector<double> labels;
            fp.reserve(idx.size());
            for (long i : idx) {
                fp.push_back(&feats[i]);
                labels.push_back(static_cast<double>(data.train[i].label));
            }
            Batch nominal = assemble_batch(fp, labels);
            std::vector<Batch> views;
            if (lc.lambda > 0.0) {
                for (int v = 0; v < lc.views_per_sample; ++v) {
                    const auto boosts = sample_view_boosts(boost_rng, lc.boost_y_max, idx.size());
                    views.push_back(make_boosted_batch(data.train, idx, boosts, nominal.n,
                                                       &clamp_events));
                }
            }

            double batch_loss = 0.0;
            ParamVector grad(params.layout);
            try {
                ad::Graph<double> g;
                auto bp = ad::bind_params(g, params);
                const auto logits = model_forward(g, bp, mc, nominal);
                auto total = bce_graph(g, logits, nominal.labels);
                if (!views.empty()) {
                    const double w = lc.lambda / static_cast<double>(views.size());
                    for (const auto& view : views) {
                        const auto vlogits = model_forward(g, bp, mc, view);
                        total = g.add(total, g.scale(mse_graph(g, logits, vlogits), w));
                    }
                }
                g.backward(total);
                batch_loss = g.value(total).data[0];
                grad.values = ad::gather_param_grads(g, bp);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(start / tc.batch_size) + ")");
            }
            adam_step(params, grad, adam, tc);
            epoch_loss += batch_loss * static_cast<double>(stop - start);
        }
        rec.train_losses.push_back(epoch_loss / static_cast<double>(n_train));

        const double val_loss = val_set.loss(params, mc, lc);
        rec.val_losses.push_back(val_loss);
        if (val_loss < best_val) {
            best_val = val_loss;
            best = params;
            rec.selected_epoch = epoch;
        }
    }
    rec.best_val_loss = best_val;
    rec.clamp_events = clamp_events;

    if (!data.test.empty()) {
        const MetricReport m = evaluate(best, mc, data.test);
        rec.final_accuracy = m.accuracy;
        rec.final_auc = m.roc_auc;
    }
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best), std::move(rec)};
}

/// Recompute the frozen-boost validation loss that `train` used for selection
/// (for checkpoint verification).
inline double validation_loss(const ParamVector& w, const ModelConfig& mc, const LossConfig& lc,
                              const TrainConfig& tc, std::uint64_t seed, const DatasetSplit& data) {
    long clamps = 0;
    const auto vs = detail::make_val_set(data.val, mc, lc, tc.batch_size,
                                         derive_seed(seed, 0x7A11), &clamps);
    return vs.loss(w, mc, lc);
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    RunRecord record;
    ParamVector params;
};

struct EnsembleSummary {
    std::string variant;
    std::vector<SeedOutcome> runs;
    long champion = -1; // index into runs; the per-triplet lowest validation loss

    struct Stat {
        double mean = 0.0, stddev = 0.0;
        long n = 0;
    };

    static Stat stat_of(const std::vector<double>& xs) {
        Stat s;
        s.n = static_cast<long>(xs.size());
        if (s.n == 0) return s;
        s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / s.n;
        if (s.n > 1) {
            double acc = 0.0;
            for (double x : xs) acc += (x - s.mean) * (x - s.mean);
            s.stddev = std::sqrt(acc / static_cast<double>(s.n - 1));
        }
        return s;
    }

    nlohmann::json to_json() const {
        std::vector<double> accs, aucs, vals;
        nlohmann::json failed = nlohmann::json::array();
        for (const auto& r : runs) {
            if (r.ok) {
                accs.push_back(r.record.final_accuracy);
                aucs.push_back(r.record.final_auc);
                vals.push_back(r.record.best_val_loss);
            } else {
                failed.push_back({{"seed", r.seed}, {"error", r.error}});
            }
        }
        auto stat_json = [](const Stat& s) {
            return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}, {"n", s.n},
                                  {"single_run", s.n == 1}};
        };
        nlohmann::json j;
        j["variant"] = variant;
        j["accuracy"] = stat_json(stat_of(accs));
        j["roc_auc"] = stat_json(stat_of(aucs));
        j["best_val_loss"] = stat_json(stat_of(vals));
        j["failed"] = failed;
        j["champion_seed"] = champion >= 0 ? nlohmann::json(runs[champion].seed) : nlohmann::json();
        return j;
    }
};

/// Train one model per seed (optionally in parallel), report mean and sample
/// standard deviation per metric, and flag the best-validation model for the
/// downstream Hessian/distillation/robustness analyses.
inline EnsembleSummary run_ensemble(const ModelConfig& mc, const LossConfig& lc,
                                    const TrainConfig& tc, const DatasetSplit& data,
                                    int jobs = 1) {
    tc.validate();
    EnsembleSummary summary;
    summary.variant = lc.lambda > 0.0 ? "constrained" : "unconstrained";
    summary.runs.resize(tc.seeds.size());
    for (std::size_t i = 0; i < tc.seeds.size(); ++i) summary.runs[i].seed = tc.seeds[i];

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tc.seeds.size()) return;
            auto& out = summary.runs[i];
            try {
                TrainResult res = train(mc, lc, tc, tc.seeds[i], data);
                out.record = std::move(res.record);
                out.params = std::move(res.best_params);
                out.ok = true;
            } catch (const std::exception& e) {
                out.ok = false;
                out.error = e.what();
            }
        }
    };
    const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(tc.seeds.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (std::size_t i = 0; i < summary.runs.size(); ++i) {
        const auto& r = summary.runs[i];
        if (!r.ok) continue;
        if (summary.champion < 0 ||
            r.record.best_val_loss < summary.runs[summary.champion].record.best_val_loss)
            summary.champion = static_cast<long>(i);
    }
    return summary;
}

} // namespace jetlab
