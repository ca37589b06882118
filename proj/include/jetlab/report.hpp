#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jetlab/experiment.hpp"

namespace jetlab {

namespace detail {

struct MetricsRow {
    std::string variant, dataset;
    std::uint64_t seed = 0;
    double sigma = 0.0, accuracy = 0.0, auc = 0.0;
};

inline std::vector<MetricsRow> parse_metrics_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<MetricsRow> rows;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) { header_seen = true; continue; }
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6) throw DataError(path.string() + ": malformed metrics row: " + line);
        MetricsRow r;
        r.variant = cells[0];
        r.seed = std::stoull(cells[1]);
        r.dataset = cells[2];
        r.sigma = std::stod(cells[3]);
        r.accuracy = std::stod(cells[4]);
        r.auc = std::stod(cells[5]);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace detail

struct ReportResult {
    nlohmann::json report;
    std::string text;
    bool complete = false;
};

/// Consolidate every artifact under a run directory into report.json plus a
/// human-readable summary. Sections whose inputs are missing are listed under
/// "missing"; the caller maps completeness to the exit code.
inline ReportResult build_report(const std::filesystem::path& run_dir, bool allow_mixed = false) {
    const auto analysis = run_dir / "analysis";
    nlohmann::json report;
    std::vector<std::string> missing;
    std::vector<std::string> hashes_seen;

    auto note_hash = [&](const std::string& h, const std::string& where) {
        if (h.empty()) return;
        for (const auto& seen : hashes_seen)
            if (seen != h && !allow_mixed)
                throw ConfigError("config hash mismatch between artifacts (" + where +
                                  "); re-run the pipeline or pass --allow-mixed");
        hashes_seen.push_back(h);
    };

    bool any_artifact = false;

    // --- in-distribution summary (Table 1 analogue) -------------------------
    std::optional<double> auc_gap;
    if (std::filesystem::exists(run_dir / "summary.json")) {
        any_artifact = true;
        const auto sj = read_json_file(run_dir / "summary.json");
        note_hash(sj.value("config_hash", ""), "summary.json");
        report["in_distribution"] = nlohmann::json::object();
        for (const auto* variant : kVariants)
            if (sj.contains(variant)) report["in_distribution"][variant] = sj[variant];
        if (sj.contains("unconstrained") && sj.contains("constrained")) {
            const double a = sj["unconstrained"]["roc_auc"]["mean"].get<double>();
            const double b = sj["constrained"]["roc_auc"]["mean"].get<double>();
            auc_gap = std::abs(a - b);
            report["in_distribution"]["auc_gap"] = *auc_gap;
        }
    } else {
        missing.push_back("in_distribution");
    }

    // --- curvature (Table 2 analogue + Fig. 5/7 tables) ----------------------
    std::optional<bool> verdict_curvature, verdict_flat;
    if (std::filesystem::exists(analysis / "hessian_ratios.json")) {
        any_artifact = true;
        const auto rj = read_json_file(analysis / "hessian_ratios.json");
        note_hash(rj.value("config_hash", ""), "hessian_ratios.json");
        report["curvature_ratios"] = rj;
        verdict_curvature = rj["lambda1_con_over_unc"].get<double>() < 1.0 &&
                            rj["trace_con_over_unc"].get<double>() < 1.0;
    } else {
        missing.push_back("curvature_ratios");
    }

    bool have_slices = true, have_gold = true;
    nlohmann::json slices, golds;
    for (const auto* variant : kVariants) {
        const auto cpath = analysis / ("curvature_" + std::string(variant) + ".json");
        if (!std::filesystem::exists(cpath)) { have_slices = false; have_gold = false; break; }
        any_artifact = true;
        const auto cj = read_json_file(cpath);
        note_hash(cj.value("config_hash", ""), cpath.filename().string());
        slices[variant] = {{"base_loss", cj.value("base_loss", 0.0)}, {"slice", cj.value("slice", nlohmann::json())}};
        if (cj.contains("goldstone")) golds[variant] = cj["goldstone"];
        else have_gold = false;
    }
    if (have_slices) {
        report["loss_slices"] = slices;
        auto max_increase = [&](const std::string& v) {
            const auto& s = slices[v]["slice"];
            const double base = slices[v]["base_loss"].get<double>();
            double worst = 0.0;
            const auto& losses = s.at("losses");
            const auto& miss = s.at("missing");
            for (std::size_t i = 0; i < losses.size(); ++i)
                if (miss[i].get<int>() == 0) worst = std::max(worst, losses[i].get<double>() - base);
            return worst;
        };
        const double inc_con = max_increase("constrained");
        const double inc_unc = max_increase("unconstrained");
        report["loss_slices"]["max_increase"] = {{"constrained", inc_con}, {"unconstrained", inc_unc}};
        if (have_gold) {
            report["goldstone"] = golds;
            bool gold_ok = true;
            const auto& mc = golds["constrained"]["median_ratio"];
            const auto& mu = golds["unconstrained"]["median_ratio"];
            for (std::size_t i = 0; i < mc.size(); ++i)
                gold_ok = gold_ok && std::abs(mc[i].get<double>() - 1.0) <
                                         std::abs(mu[i].get<double>() - 1.0);
            verdict_flat = (inc_con < inc_unc) && gold_ok;
        } else {
            missing.push_back("goldstone");
        }
    } else {
        missing.push_back("loss_slices");
        if (!have_gold) missing.push_back("goldstone");
    }

    // --- robustness sweep (Fig. 6 analogue) ----------------------------------
    std::optional<bool> verdict_robust;
    if (std::filesystem::exists(analysis / "metrics.csv")) {
        any_artifact = true;
        note_hash(csv_config_hash(analysis / "metrics.csv"), "metrics.csv");
        const auto rows = detail::parse_metrics_csv(analysis / "metrics.csv");
        nlohmann::json sweep = nlohmann::json::object();
        double sig_max = 0.0;
        for (const auto& r : rows) sig_max = std::max(sig_max, r.sigma);
        std::map<std::string, std::pair<double, double>> degradation; // auc(0), auc(sig_max)
        for (const auto& r : rows) {
            sweep[r.variant]["sigma"].push_back(r.sigma);
            sweep[r.variant]["auc"].push_back(r.auc);
            sweep[r.variant]["accuracy"].push_back(r.accuracy);
            if (r.sigma == 0.0) degradation[r.variant].first = r.auc;
            if (r.sigma == sig_max) degradation[r.variant].second = r.auc;
        }
        report["robustness"] = sweep;
        if (degradation.count("constrained") && degradation.count("unconstrained")) {
            const double dc = degradation["constrained"].first - degradation["constrained"].second;
            const double du = degradation["unconstrained"].first - degradation["unconstrained"].second;
            report["robustness"]["degradation"] = {{"constrained", dc}, {"unconstrained", du},
                                                   {"sigma_max", sig_max}};
            verdict_robust = dc < du;
        }
    } else {
        missing.push_back("robustness");
    }

    // --- OOD (Table 3 analogue) ----------------------------------------------
    std::optional<bool> verdict_ood;
    if (std::filesystem::exists(analysis / "metrics_ood.csv")) {
        any_artifact = true;
        note_hash(csv_config_hash(analysis / "metrics_ood.csv"), "metrics_ood.csv");
        const auto rows = detail::parse_metrics_csv(analysis / "metrics_ood.csv");
        nlohmann::json ood = nlohmann::json::object();
        std::map<std::string, std::map<std::string, double>> auc;
        for (const auto& r : rows) {
            ood[r.dataset][r.variant] = {{"accuracy", r.accuracy}, {"auc", r.auc}, {"seed", r.seed}};
            auc[r.dataset][r.variant] = r.auc;
        }
        report["ood"] = ood;
        if (auc.count("far_ood") && auc["far_ood"].count("constrained") &&
            auc["far_ood"].count("unconstrained"))
            verdict_ood = auc["far_ood"]["constrained"] >= auc["far_ood"]["unconstrained"];
    } else {
        missing.push_back("ood");
    }

    // --- distillation (Fig. 8 analogue) ---------------------------------------
    std::optional<bool> verdict_distill;
    if (std::filesystem::exists(analysis / "distill_compare.json")) {
        any_artifact = true;
        const auto dj = read_json_file(analysis / "distill_compare.json");
        note_hash(dj.value("config_hash", ""), "distill_compare.json");
        report["distillation"] = dj;
        verdict_distill = dj["final_heldout_mse"]["constrained"].get<double>() <=
                          dj["final_heldout_mse"]["unconstrained"].get<double>();
    } else {
        missing.push_back("distillation");
    }

    if (!any_artifact) throw DataError("no artifacts found under " + run_dir.string());

    nlohmann::json verdicts;
    auto put = [&](const char* k, const std::optional<bool>& v) {
        verdicts[k] = v.has_value() ? nlohmann::json(*v) : nlohmann::json();
    };
    put("curvature_ratios_below_one", verdict_curvature);
    put("constrained_flat_direction", verdict_flat);
    put("smaller_smearing_degradation", verdict_robust);
    put("ood_ordering", verdict_ood);
    put("distillation_ordering", verdict_distill);
    verdicts["in_dist_auc_gap_below_0.02"] =
        auc_gap.has_value() ? nlohmann::json(*auc_gap < 0.02) : nlohmann::json();
    report["verdicts"] = verdicts;
    report["missing"] = missing;
    if (!hashes_seen.empty()) report["config_hash"] = hashes_seen.front();

    ReportResult out;
    out.complete = missing.empty();
    out.report = report;

    std::ostringstream txt;
    txt << "jetlab experiment report\n";
    txt << "========================\n";
    if (!hashes_seen.empty()) txt << "config hash: " << hashes_seen.front() << "\n";
    txt << "\n";
    if (report.contains("in_distribution")) {
        txt << "In-distribution (test):\n";
        for (const auto* v : kVariants)
            if (report["in_distribution"].contains(v)) {
                const auto& s = report["in_distribution"][v];
                txt << "  " << v << ": acc " << s["accuracy"]["mean"].get<double>() << " +- "
                    << s["accuracy"]["std"].get<double>() << ", auc "
                    << s["roc_auc"]["mean"].get<double>() << " +- "
                    << s["roc_auc"]["std"].get<double>() << "\n";
            }
        if (auc_gap) txt << "  AUC gap: " << *auc_gap << "\n";
    }
    if (report.contains("curvature_ratios")) {
        txt << "Curvature ratios (constrained / unconstrained):\n";
        txt << "  lambda1: " << report["curvature_ratios"]["lambda1_con_over_unc"].get<double>()
            << ", trace: " << report["curvature_ratios"]["trace_con_over_unc"].get<double>() << "\n";
    }
    if (report.contains("loss_slices")) {
        txt << "Loss-slice max increase: constrained "
            << report["loss_slices"]["max_increase"]["constrained"].get<double>()
            << ", unconstrained "
            << report["loss_slices"]["max_increase"]["unconstrained"].get<double>() << "\n";
    }
    if (report.contains("robustness") && report["robustness"].contains("degradation")) {
        txt << "Smearing AUC degradation at sigma_max: constrained "
            << report["robustness"]["degradation"]["constrained"].get<double>()
            << ", unconstrained "
            << report["robustness"]["degradation"]["unconstrained"].get<double>() << "\n";
    }
    if (report.contains("distillation")) {
        txt << "Distillation final held-out MSE: constrained "
            << report["distillation"]["final_heldout_mse"]["constrained"].get<double>()
            << ", unconstrained "
            << report["distillation"]["final_heldout_mse"]["unconstrained"].get<double>() << "\n";
    }
    txt << "\nVerdicts:\n";
    for (const auto& [k, v] : verdicts.items())
        txt << "  " << k << ": " << (v.is_null() ? "missing" : (v.get<bool>() ? "yes" : "NO")) << "\n";
    if (!missing.empty()) {
        txt << "\nMissing sections:";
        for (const auto& m : missing) txt << " " << m;
        txt << "\n";
    }
    out.text = txt.str();
    return out;
}

/// Write report.json / report.txt; returns 0 when complete, 5 when partial.
inline int run_report(const std::filesystem::path& run_dir, bool allow_mixed = false) {
    ReportResult res = build_report(run_dir, allow_mixed);
    write_json_file(run_dir / "report.json", res.report);
    write_text_file(run_dir / "report.txt", res.text);
    return res.complete ? 0 : 5;
}

/// Run the whole desk-scale pipeline into cfg.run_dir().
inline int run_all(const ExperimentConfig& cfg, bool force, int jobs) {
    run_gen_data(cfg, force);
    run_train(cfg, {"unconstrained", "constrained"}, force, jobs);
    run_hessian(cfg, jobs);
    run_goldstone(cfg);
    run_robustness(cfg);
    run_ood(cfg);
    run_distill(cfg, jobs);
    return run_report(cfg.run_dir());
}

} // namespace jetlab
