#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jetlab/artifacts.hpp"
#include "jetlab/checkpoint.hpp"
#include "jetlab/curvature.hpp"
#include "jetlab/distill.hpp"
#include "jetlab/metrics.hpp"
#include "jetlab/trainer.hpp"

namespace jetlab {

inline const char* kVariants[2] = {"unconstrained", "constrained"};

struct DiagnosticsConfig {
    long diag_batch = 256;       // jets from the train split the Hessian sees
    std::uint64_t seed = 99;     // Lanczos/Hutchinson randomness
    long lanczos_max_iter = 96;
    double lanczos_tol = 1e-3;
    long trace_probes = 64;
    int slice_points = 21;
    int goldstone_points = 9;
    long goldstone_probe = 128;  // jets from the test split
    double goldstone_y = 0.3;    // rapidity of the fixed probe boost
    std::vector<double> sigma_grid = {0.0, 0.05, 0.1, 0.2, 0.3, 0.5};
    std::uint64_t smear_seed = 17;
    long distill_epochs = 30;
    std::uint64_t distill_seed = 5;
    double distill_threshold = 0.02;

    nlohmann::json to_json() const {
        return {{"diag_batch", diag_batch},         {"seed", seed},
                {"lanczos_max_iter", lanczos_max_iter}, {"lanczos_tol", lanczos_tol},
                {"trace_probes", trace_probes},     {"slice_points", slice_points},
                {"goldstone_points", goldstone_points}, {"goldstone_probe", goldstone_probe},
                {"goldstone_y", goldstone_y},       {"sigma_grid", sigma_grid},
                {"smear_seed", smear_seed},         {"distill_epochs", distill_epochs},
                {"distill_seed", distill_seed},     {"distill_threshold", distill_threshold}};
    }

    static DiagnosticsConfig from_json(const nlohmann::json& j) {
        DiagnosticsConfig c;
        c.diag_batch = j.value("diag_batch", 256L);
        c.seed = j.value("seed", 99UL);
        c.lanczos_max_iter = j.value("lanczos_max_iter", 96L);
        c.lanczos_tol = j.value("lanczos_tol", 1e-3);
        c.trace_probes = j.value("trace_probes", 64L);
        c.slice_points = j.value("slice_points", 21);
        c.goldstone_points = j.value("goldstone_points", 9);
        c.goldstone_probe = j.value("goldstone_probe", 128L);
        c.goldstone_y = j.value("goldstone_y", 0.3);
        if (j.contains("sigma_grid")) c.sigma_grid = j.at("sigma_grid").get<std::vector<double>>();
        c.smear_seed = j.value("smear_seed", 17UL);
        c.distill_epochs = j.value("distill_epochs", 30L);
        c.distill_seed = j.value("distill_seed", 5UL);
        c.distill_threshold = j.value("distill_threshold", 0.02);
        return c;
    }
};

inline nlohmann::json toy_spec_json(const ToyClassSpec& s) {
    return {{"name", s.name},       {"n_prongs", s.n_prongs},
            {"mass_peak", s.mass_peak}, {"width", s.width},
            {"radiation_softness", s.radiation_softness}};
}

inline ToyClassSpec toy_spec_from_json(const nlohmann::json& j) {
    ToyClassSpec s;
    s.name = j.value("name", std::string("class"));
    s.n_prongs = j.value("n_prongs", 1);
    s.mass_peak = j.value("mass_peak", 0.0);
    s.width = j.value("width", 10.0);
    s.radiation_softness = j.value("radiation_softness", 0.1);
    return s;
}

/// The resolved, frozen description of one experiment. Every artifact the
/// pipeline emits embeds this config's content hash.
struct ExperimentConfig {
    std::string tag = "desk";
    std::filesystem::path out_root = "runs";

    // dataset
    long n_per_class = 6000;
    std::uint64_t data_seed = 7;
    int n_max = kDefaultNMax;
    std::string data_path; // optional external jetlines directory for the in-distribution set
    ToyClassSpec class_a{"gluon", 1, 0.0, 10.0, 0.45};
    ToyClassSpec class_b{"wboson", 2, 80.0, 5.0, 0.04};
    ToyClassSpec near_ood{"zboson", 2, 91.2, 5.0, 0.04};
    ToyClassSpec far_ood{"top", 3, 173.0, 8.0, 0.04};

    ModelConfig model{7, 32, 2, 2, 32, {16}, kDefaultNMax};
    ModelConfig student{7, 16, 2, 2, 16, {8}, kDefaultNMax};
    LossConfig loss;     // lambda used by the constrained variant
    TrainConfig train;
    DiagnosticsConfig diag;

    nlohmann::json to_json() const {
        nlohmann::json dataset = {{"kind", data_path.empty() ? "toy" : "file"},
                                  {"n_per_class", n_per_class},
                                  {"seed", data_seed},
                                  {"n_max", n_max},
                                  {"path", data_path},
                                  {"class_a", toy_spec_json(class_a)},
                                  {"class_b", toy_spec_json(class_b)},
                                  {"near_ood", toy_spec_json(near_ood)},
                                  {"far_ood", toy_spec_json(far_ood)}};
        return {{"tag", tag},         {"out_root", out_root.string()},
                {"dataset", dataset}, {"model", model.to_json()},
                {"student", student.to_json()}, {"loss", loss.to_json()},
                {"train", train.to_json()},     {"diagnostics", diag.to_json()}};
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        c.tag = j.value("tag", std::string("desk"));
        c.out_root = j.value("out_root", std::string("runs"));
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            c.n_per_class = d.value("n_per_class", 6000L);
            c.data_seed = d.value("seed", 7UL);
            c.n_max = d.value("n_max", kDefaultNMax);
            c.data_path = d.value("path", std::string());
            if (d.contains("class_a")) c.class_a = toy_spec_from_json(d.at("class_a"));
            if (d.contains("class_b")) c.class_b = toy_spec_from_json(d.at("class_b"));
            if (d.contains("near_ood")) c.near_ood = toy_spec_from_json(d.at("near_ood"));
            if (d.contains("far_ood")) c.far_ood = toy_spec_from_json(d.at("far_ood"));
        }
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("student")) c.student = ModelConfig::from_json(j.at("student"));
        if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
        if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
        if (j.contains("diagnostics")) c.diag = DiagnosticsConfig::from_json(j.at("diagnostics"));
        return c;
    }

    /// Content hash of the experiment substance; tag and output location are
    /// excluded so the same experiment hashes identically wherever it runs.
    std::string hash() const {
        nlohmann::json j = to_json();
        j.erase("tag");
        j.erase("out_root");
        return content_hash(j.dump());
    }

    std::filesystem::path run_dir() const { return out_root / tag; }
    std::filesystem::path data_dir(const std::string& which = "data") const {
        return run_dir() / which;
    }
    std::filesystem::path seed_dir(const std::string& variant, std::uint64_t seed) const {
        return run_dir() / variant / std::to_string(seed);
    }
    std::filesystem::path analysis_dir() const { return run_dir() / "analysis"; }

    LossConfig variant_loss(const std::string& variant) const {
        LossConfig lc = loss;
        if (variant == "unconstrained") lc.lambda = 0.0;
        return lc;
    }
};

/// Default output root comes from JETLAB_OUT when set.
inline std::filesystem::path default_out_root() {
    if (const char* env = std::getenv("JETLAB_OUT")) return env;
    return "runs";
}

// ---------------------------------------------------------------------------
// Pipeline stages. Each writes deterministic artifacts under the run directory
// and embeds the resolved-config hash.
// ---------------------------------------------------------------------------

inline void write_resolved_config(const ExperimentConfig& cfg) {
    nlohmann::json j = cfg.to_json();
    j["config_hash"] = cfg.hash();
    write_json_file(cfg.run_dir() / "config.json", j);
}

/// Generate (or copy-load) the in-distribution and OOD datasets.
inline void run_gen_data(const ExperimentConfig& cfg, bool force = false) {
    const auto marker = cfg.data_dir() / "train.jsonl";
    if (std::filesystem::exists(marker) && !force) {
        std::string note;
        const auto cpath = cfg.run_dir() / "config.json";
        if (std::filesystem::exists(cpath))
            note = read_json_file(cpath).value("config_hash", "") == cfg.hash()
                       ? " (config hash matches; use --force to regenerate)"
                       : " (config hash differs; use --force)";
        throw ConfigError("refusing to overwrite " + marker.string() + note);
    }
    std::filesystem::create_directories(cfg.run_dir());
    write_resolved_config(cfg);
    if (!cfg.data_path.empty()) {
        // external data: validate it loads, then reference it in place
        LoadReport rep;
        (void)load_jets(cfg.data_path, cfg.n_max, &rep);
    } else {
        save_dataset(cfg.data_dir(), generate_toy(cfg.class_a, cfg.class_b, cfg.n_per_class,
                                                  cfg.data_seed, cfg.n_max));
    }
    save_dataset(cfg.data_dir("data_near"),
                 generate_toy(cfg.class_a, cfg.near_ood, cfg.n_per_class,
                              derive_seed(cfg.data_seed, 0x0EAD), cfg.n_max));
    save_dataset(cfg.data_dir("data_far"),
                 generate_toy(cfg.class_a, cfg.far_ood, cfg.n_per_class,
                              derive_seed(cfg.data_seed, 0xFA2), cfg.n_max));
}

inline DatasetSplit load_main_dataset(const ExperimentConfig& cfg) {
    const auto path = cfg.data_path.empty() ? cfg.data_dir() : std::filesystem::path(cfg.data_path);
    if (!std::filesystem::exists(path))
        throw DataError("dataset not found at " + path.string() + "; run `jetlab gen-data` first");
    return load_jets(path, cfg.n_max);
}

struct TrainOutcome {
    std::map<std::string, EnsembleSummary> by_variant;
};

/// Train the requested variants (ensemble over seeds); writes per-run
/// checkpoints, RunRecords and timing sidecars plus a cross-variant summary.
inline TrainOutcome run_train(const ExperimentConfig& cfg, const std::vector<std::string>& variants,
                              bool force, int jobs) {
    const DatasetSplit data = load_main_dataset(cfg);
    const std::string hash = cfg.hash();

    for (const auto& variant : variants) {
        for (auto seed : cfg.train.seeds) {
            const auto dir = cfg.seed_dir(variant, seed);
            if (std::filesystem::exists(dir / "run_record.json") && !force) {
                const auto old = read_json_file(dir / "run_record.json");
                const std::string old_hash = old.value("config_hash", "");
                throw ConfigError("refusing to overwrite " + (dir / "run_record.json").string() +
                                  (old_hash == hash ? " (config hash matches; use --force to redo)"
                                                    : " (config hash differs; use --force)"));
            }
        }
    }

    TrainOutcome out;
    for (const auto& variant : variants) {
        const LossConfig lc = cfg.variant_loss(variant);
        EnsembleSummary summary = run_ensemble(cfg.model, lc, cfg.train, data, jobs);
        for (const auto& run : summary.runs) {
            const auto dir = cfg.seed_dir(variant, run.seed);
            std::filesystem::create_directories(dir);
            if (!run.ok) {
                write_json_file(dir / "failed.json",
                                {{"seed", run.seed}, {"error", run.error}, {"config_hash", hash}});
                continue;
            }
            nlohmann::json rj = run.record.to_json();
            rj["config_hash"] = hash;
            write_json_file(dir / "run_record.json", rj);
            write_json_file(dir / "timing.json", {{"wall_time_s", run.record.wall_time_s}});
            save_checkpoint(dir / "checkpoint.bin", run.params, cfg.model);
            write_json_file(dir / "checkpoint.json",
                            {{"seed", run.seed},
                             {"variant", variant},
                             {"selected_epoch", run.record.selected_epoch},
                             {"best_val_loss", run.record.best_val_loss},
                             {"final_accuracy", run.record.final_accuracy},
                             {"final_auc", run.record.final_auc},
                             {"config_hash", hash}});
        }
        out.by_variant.emplace(variant, std::move(summary));
    }

    nlohmann::json sj;
    sj["config_hash"] = hash;
    for (const auto& [variant, summary] : out.by_variant) sj[variant] = summary.to_json();
    // merge with an existing summary when only one variant was trained
    const auto spath = cfg.run_dir() / "summary.json";
    if (std::filesystem::exists(spath)) {
        auto old = read_json_file(spath);
        if (old.value("config_hash", "") == hash) {
            for (auto& [k, v] : sj.items()) old[k] = v;
            write_json_file(spath, old);
            return out;
        }
    }
    write_json_file(spath, sj);
    return out;
}

struct ChampionRef {
    std::string variant;
    std::uint64_t seed = 0;
    Checkpoint ckpt;
    RunRecord record;
};

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.variant = j.value("variant", "");
    r.seed = j.value("seed", 0UL);
    r.train_losses = j.value("train_losses", std::vector<double>{});
    r.val_losses = j.value("val_losses", std::vector<double>{});
    r.selected_epoch = j.value("selected_epoch", -1L);
    r.best_val_loss = j.value("best_val_loss", 0.0);
    r.final_accuracy = j.value("final_accuracy", -1.0);
    r.final_auc = j.value("final_auc", -1.0);
    r.clamp_events = j.value("clamp_events", 0L);
    r.diag_batch_seed = j.value("diag_batch_seed", 0UL);
    if (j.contains("config")) r.config_snapshot = j.at("config");
    return r;
}

/// Locate the flagged best-validation model of a variant.
inline ChampionRef load_champion(const ExperimentConfig& cfg, const std::string& variant) {
    const auto spath = cfg.run_dir() / "summary.json";
    if (!std::filesystem::exists(spath))
        throw ConfigError("no summary.json under " + cfg.run_dir().string() +
                          "; run `jetlab train` (run_ensemble flags champions there)");
    const auto summary = read_json_file(spath);
    if (!summary.contains(variant) || summary[variant]["champion_seed"].is_null())
        throw ConfigError("summary.json has no champion for variant '" + variant +
                          "'; run `jetlab train --variant " + variant + "'");
    ChampionRef ref;
    ref.variant = variant;
    ref.seed = summary[variant]["champion_seed"].get<std::uint64_t>();
    const auto dir = cfg.seed_dir(variant, ref.seed);
    ref.ckpt = load_checkpoint(dir / "checkpoint.bin");
    ref.record = run_record_from_json(read_json_file(dir / "run_record.json"));
    return ref;
}

/// The fixed objective the Hessian diagnostics differentiate: the champion's
/// own training loss on a frozen diagnostic batch (and frozen view boosts).
inline LossContext diagnostic_loss_context(const ExperimentConfig& cfg, const ChampionRef& ref,
                                           const DatasetSplit& data) {
    LossContext ctx;
    ctx.model = ref.ckpt.model;
    ctx.loss = cfg.variant_loss(ref.variant);
    const long n = std::min<long>(cfg.diag.diag_batch, static_cast<long>(data.train.size()));
    if (n < 1) throw DataError("diagnostic batch is empty");
    std::vector<long> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    ctx.nominal = make_batch(data.train, idx);
    if (ctx.loss.lambda > 0.0) {
        RngStream rng(ref.record.diag_batch_seed);
        const auto boosts = sample_view_boosts(rng, ctx.loss.boost_y_max, idx.size());
        ctx.boosted_views.push_back(make_boosted_batch(data.train, idx, boosts, ctx.nominal.n));
    }
    return ctx;
}

/// Top eigenpair, Hutchinson trace and the loss slice for both champions, on a
/// common eps grid scaled from the unconstrained champion; emits curvature
/// JSONs, eigenvector files, slice CSVs and the ratio report.
inline void run_hessian(const ExperimentConfig& cfg, int jobs = 1) {
    const DatasetSplit data = load_main_dataset(cfg);
    const std::string hash = cfg.hash();
    std::filesystem::create_directories(cfg.analysis_dir());

    std::map<std::string, CurvatureSummary> summaries;
    std::map<std::string, LossContext> contexts;
    std::map<std::string, ChampionRef> champions;
    for (const auto* variant : kVariants) {
        champions.emplace(variant, load_champion(cfg, variant));
        contexts.emplace(variant, diagnostic_loss_context(cfg, champions.at(variant), data));
        summaries.emplace(variant, CurvatureSummary{});
    }
    auto one = [&](const std::string& variant) {
        const HvpOperator op = contexts.at(variant).hvp(champions.at(variant).ckpt.params);
        auto& cs = summaries.at(variant);
        cs.eig = top_eigenpair(op, cfg.diag.lanczos_max_iter, cfg.diag.lanczos_tol, cfg.diag.seed);
        cs.trace = hutchinson_trace(op, cfg.diag.trace_probes, cfg.diag.seed);
    };
    if (jobs >= 2) {
        std::thread t(one, "unconstrained");
        one("constrained");
        t.join();
    } else {
        one("unconstrained");
        one("constrained");
    }

    // common slice grid, scaled from the (sharper) unconstrained champion
    const auto& unc = summaries.at("unconstrained");
    const double base_unc = contexts.at("unconstrained").value(champions.at("unconstrained").ckpt.params);
    const double s_ref = slice_scale(unc.eig.lambda_1, base_unc);
    const auto grid = symmetric_grid(s_ref, cfg.diag.slice_points);

    for (const auto* variant : kVariants) {
        const auto& ref = champions.at(variant);
        const auto& ctx = contexts.at(variant);
        const auto& cs = summaries.at(variant);
        const SliceResult slice = loss_slice(ref.ckpt.params, cs.eig.nu_1, grid,
                                             [&](const ParamVector& p) { return ctx.value(p); });

        nlohmann::json cj;
        cj["config_hash"] = hash;
        cj["variant"] = variant;
        cj["champion_seed"] = ref.seed;
        cj["eigen"] = cs.eig.to_json();
        cj["trace"] = cs.trace.to_json();
        cj["base_loss"] = slice.base_loss;
        cj["slice_scale_ref"] = s_ref;
        cj["diag"] = {{"batch", cfg.diag.diag_batch},
                      {"batch_seed", ref.record.diag_batch_seed},
                      {"lanczos_seed", cfg.diag.seed}};
        nlohmann::json st;
        st["epsilons"] = slice.epsilons;
        st["losses"] = slice.losses;
        st["missing"] = slice.missing;
        cj["slice"] = st;
        write_json_file(cfg.analysis_dir() / ("curvature_" + std::string(variant) + ".json"), cj);
        save_vector(cfg.analysis_dir() / ("nu1_" + std::string(variant) + ".bin"), cs.eig.nu_1);

        CsvWriter csv(hash, {"epsilon", "loss", "missing"});
        for (std::size_t i = 0; i < slice.epsilons.size(); ++i)
            csv.row({double_str(slice.epsilons[i]), double_str(slice.losses[i]),
                     std::to_string(static_cast<int>(slice.missing[i]))});
        csv.save(cfg.analysis_dir() / ("slice_" + std::string(variant) + ".csv"));
    }

    RatioReport ratios = curvature_ratios(summaries.at("constrained"), summaries.at("unconstrained"));
    nlohmann::json rr = ratios.to_json();
    rr["config_hash"] = hash;
    rr["lambda1"] = {{"constrained", summaries.at("constrained").eig.lambda_1},
                     {"unconstrained", summaries.at("unconstrained").eig.lambda_1}};
    rr["trace"] = {{"constrained", summaries.at("constrained").trace.estimate},
                   {"unconstrained", summaries.at("unconstrained").trace.estimate}};
    write_json_file(cfg.analysis_dir() / "hessian_ratios.json", rr);
}

/// Output-ratio probe for both champions on the slice grid; appends the
/// goldstone section to each curvature JSON and writes the plot CSVs.
inline void run_goldstone(const ExperimentConfig& cfg) {
    const DatasetSplit data = load_main_dataset(cfg);
    const std::string hash = cfg.hash();

    // one probe boost, shared by both models and the whole grid
    RngStream grng(derive_seed(cfg.diag.seed, 0x60D5));
    BoostVector g = sample_boost(grng, cfg.diag.goldstone_y);
    g.y = cfg.diag.goldstone_y; // fixed magnitude, sampled direction

    const long n_probe = std::min<long>(cfg.diag.goldstone_probe, static_cast<long>(data.test.size()));
    const std::vector<Jet> probe(data.test.begin(), data.test.begin() + n_probe);

    for (const auto* variant : kVariants) {
        const auto cpath = cfg.analysis_dir() / ("curvature_" + std::string(variant) + ".json");
        if (!std::filesystem::exists(cpath))
            throw ConfigError("missing " + cpath.string() + "; run `jetlab hessian` first");
        auto cj = read_json_file(cpath);
        const double s_ref = cj.at("slice_scale_ref").get<double>();
        const auto grid = symmetric_grid(s_ref, cfg.diag.goldstone_points);

        ChampionRef ref = load_champion(cfg, variant);
        const auto nu1 = load_vector(cfg.analysis_dir() / ("nu1_" + std::string(variant) + ".bin"));
        const GoldstoneResult gr =
            goldstone_ratio(ref.ckpt.params, nu1, grid, ref.ckpt.model, probe, g);

        cj["goldstone"] = gr.to_json();
        cj["goldstone"]["boost"] = {{"nx", g.nx}, {"ny", g.ny}, {"nz", g.nz}, {"y", g.y}};
        write_json_file(cpath, cj);

        CsvWriter csv(hash, {"epsilon", "median_ratio", "iqr", "excluded"});
        for (std::size_t i = 0; i < gr.epsilons.size(); ++i)
            csv.row({double_str(gr.epsilons[i]), double_str(gr.median_ratio[i]),
                     double_str(gr.iqr[i]), std::to_string(gr.excluded[i])});
        csv.save(cfg.analysis_dir() / ("goldstone_" + std::string(variant) + ".csv"));
    }
}

/// Smearing sweep for both champions; writes the long-format metrics.csv
/// (sigma = 0 row is the plain in-distribution test evaluation).
inline void run_robustness(const ExperimentConfig& cfg) {
    const DatasetSplit data = load_main_dataset(cfg);
    const std::string hash = cfg.hash();
    std::filesystem::create_directories(cfg.analysis_dir());

    CsvWriter csv(hash, {"variant", "seed", "dataset", "sigma", "accuracy", "auc"});
    for (const auto* variant : kVariants) {
        ChampionRef ref = load_champion(cfg, variant);
        const auto reports = robustness_sweep(ref.ckpt.params, ref.ckpt.model, data.test,
                                              cfg.diag.sigma_grid, cfg.diag.smear_seed);
        for (const auto& r : reports)
            csv.row({variant, std::to_string(ref.seed), "test", double_str(r.sigma),
                     double_str(r.accuracy), double_str(r.roc_auc)});
    }
    csv.save(cfg.analysis_dir() / "metrics.csv");
}

/// Near/far OOD evaluation of both champions; same long format as metrics.csv.
inline void run_ood(const ExperimentConfig& cfg) {
    const std::string hash = cfg.hash();
    std::filesystem::create_directories(cfg.analysis_dir());
    const DatasetSplit near = load_jets(cfg.data_dir("data_near"), cfg.n_max);
    const DatasetSplit far = load_jets(cfg.data_dir("data_far"), cfg.n_max);

    CsvWriter csv(hash, {"variant", "seed", "dataset", "sigma", "accuracy", "auc"});
    for (const auto* variant : kVariants) {
        ChampionRef ref = load_champion(cfg, variant);
        for (const auto& r : ood_eval(ref.ckpt.params, ref.ckpt.model, near, far))
            csv.row({variant, std::to_string(ref.seed), r.dataset_tag, "0",
                     double_str(r.accuracy), double_str(r.roc_auc)});
    }
    csv.save(cfg.analysis_dir() / "metrics_ood.csv");
}

/// Distill both champion teachers into the identical student (same init, same
/// optimisation); emits one trajectory CSV per teacher plus the comparison.
inline void run_distill(const ExperimentConfig& cfg, int jobs = 1) {
    const DatasetSplit data = load_main_dataset(cfg);
    const std::string hash = cfg.hash();
    std::filesystem::create_directories(cfg.analysis_dir());

    TrainConfig dtc = cfg.train;
    dtc.epochs = cfg.diag.distill_epochs;
    dtc.seeds = {cfg.diag.distill_seed};

    std::map<std::string, DistillRecord> records;
    std::mutex mu;
    auto one = [&](const std::string& variant) {
        ChampionRef ref = load_champion(cfg, variant);
        DistillResult res = distill(ref.ckpt.params, ref.ckpt.model, cfg.student, data, dtc,
                                    cfg.diag.distill_seed,
                                    variant + ":" + std::to_string(ref.seed));
        CsvWriter csv(hash, {"epoch", "train_mse", "heldout_mse", "teacher", "seed"});
        csv.row({"0", double_str(res.record.initial_train_mse),
                 double_str(res.record.initial_heldout_mse), res.record.teacher_id,
                 std::to_string(cfg.diag.distill_seed)});
        for (std::size_t e = 0; e < res.record.train_mse.size(); ++e)
            csv.row({std::to_string(e + 1), double_str(res.record.train_mse[e]),
                     double_str(res.record.heldout_mse[e]), res.record.teacher_id,
                     std::to_string(cfg.diag.distill_seed)});
        csv.save(cfg.analysis_dir() / ("distill_" + variant + ".csv"));
        std::lock_guard<std::mutex> lock(mu);
        records.emplace(variant, std::move(res.record));
    };
    if (jobs >= 2) {
        std::thread t1(one, "unconstrained");
        one("constrained");
        t1.join();
    } else {
        one("unconstrained");
        one("constrained");
    }

    const DistillComparison cmp = compare_distillation(records.at("constrained"),
                                                       records.at("unconstrained"),
                                                       cfg.diag.distill_threshold);
    nlohmann::json cj = cmp.to_json();
    cj["config_hash"] = hash;
    cj["final_heldout_mse"] = {{"constrained", records.at("constrained").heldout_mse.back()},
                               {"unconstrained", records.at("unconstrained").heldout_mse.back()}};
    write_json_file(cfg.analysis_dir() / "distill_compare.json", cj);
}

} // namespace jetlab
