// jetlab: desk-scale laboratory for comparing jet taggers trained with and
// without a soft Lorentz-boost consistency penalty. Subcommands cover data
// generation, ensemble training, Hessian diagnostics, robustness / OOD
// evaluation, distillation, and report consolidation.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jetlab/report.hpp"

namespace {

using jetlab::ExperimentConfig;

struct CommonOpts {
    std::string config_file;
    std::string tag;
    std::string out_root;
    std::vector<std::string> sets; // key.path=value overrides
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file, "experiment config JSON");
    cmd->add_option("--tag", o.tag, "experiment tag (run directory name)");
    cmd->add_option("--out", o.out_root, "output root (default $JETLAB_OUT or ./runs)");
    cmd->add_option("--set", o.sets, "override a config key, e.g. --set train.epochs=10")
        ->take_all();
}

nlohmann::json parse_value(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        return nlohmann::json(text); // plain string
    }
}

ExperimentConfig resolve_config(const CommonOpts& o) {
    nlohmann::json j = ExperimentConfig{}.to_json();
    if (!o.config_file.empty()) {
        const auto file = jetlab::read_json_file(o.config_file);
        j.merge_patch(file);
    }
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw jetlab::ConfigError("--set expects key.path=value, got: " + kv);
        std::string path = kv.substr(0, eq);
        nlohmann::json* node = &j;
        std::size_t pos = 0;
        while (true) {
            const auto dot = path.find('.', pos);
            const std::string key = path.substr(pos, dot - pos);
            if (dot == std::string::npos) {
                (*node)[key] = parse_value(kv.substr(eq + 1));
                break;
            }
            node = &(*node)[key];
            pos = dot + 1;
        }
    }
    ExperimentConfig cfg = ExperimentConfig::from_json(j);
    cfg.out_root = jetlab::default_out_root();
    if (j.contains("out_root")) cfg.out_root = j["out_root"].get<std::string>();
    if (!o.out_root.empty()) cfg.out_root = o.out_root;
    if (!o.tag.empty()) cfg.tag = o.tag;
    return cfg;
}

void print_param_counts(const ExperimentConfig& cfg) {
    using jetlab::param_count;
    auto show = [](const char* name, const jetlab::ModelConfig& mc) {
        std::printf("%-24s d_model=%-4d layers=%d heads=%d ff=%-4d head_dims=[", name,
                    mc.d_model, mc.n_layers, mc.n_heads, mc.ff_dim);
        for (std::size_t i = 0; i < mc.head_dims.size(); ++i)
            std::printf("%s%d", i ? "," : "", mc.head_dims[i]);
        std::printf("]  ->  %ld parameters\n", param_count(mc));
    };
    show("model", cfg.model);
    show("student", cfg.student);

    std::printf("\nfull-scale reference configs:\n");
    jetlab::ModelConfig teacher{7, 256, 3, 4, 256, {128, 128, 128}, 32};
    show("paper-teacher (declared)", teacher);
    jetlab::ModelConfig teacher_exact = teacher;
    teacher_exact.head_dims = {117, 149, 128};
    show("paper-teacher (exact)", teacher_exact);
    jetlab::ModelConfig student{7, 160, 3, 4, 160, {80, 80, 80}, 32};
    show("paper-student (declared)", student);
    jetlab::ModelConfig student_exact = student;
    student_exact.head_dims = {80, 72, 28};
    show("paper-student (exact)", student_exact);
    std::printf("\nsee README.md for the reconciliation notes behind these inventories\n");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"jetlab: soft-symmetry jet-tagging laboratory"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool force = false;
    bool allow_mixed = false;
    int jobs = 2;
    std::string variant = "both";
    std::string report_dir;

    auto* gen = app.add_subcommand("gen-data", "generate toy datasets (in-dist + near/far OOD)");
    add_common(gen, opts);
    gen->add_flag("--force", force, "overwrite existing data");

    auto* train = app.add_subcommand("train", "train the seed ensemble for one or both variants");
    add_common(train, opts);
    train->add_option("--variant", variant, "unconstrained | constrained | both");
    train->add_flag("--force", force, "overwrite existing runs");
    train->add_option("--jobs", jobs, "parallel seed jobs");

    auto* hess = app.add_subcommand("hessian", "top eigenpair, trace and loss slices for champions");
    add_common(hess, opts);
    hess->add_option("--jobs", jobs, "parallel variant jobs");
    auto* gold = app.add_subcommand("goldstone", "output-ratio probe along the leading eigenvector");
    add_common(gold, opts);
    auto* robust = app.add_subcommand("robustness", "momentum-smearing sweep of both champions");
    add_common(robust, opts);
    auto* ood = app.add_subcommand("ood", "near/far out-of-distribution evaluation");
    add_common(ood, opts);
    auto* dist = app.add_subcommand("distill", "distill both champion teachers into the fixed student");
    add_common(dist, opts);
    dist->add_option("--jobs", jobs, "parallel teacher jobs");

    auto* rep = app.add_subcommand("report", "consolidate artifacts into report.json / report.txt");
    add_common(rep, opts);
    rep->add_option("--dir", report_dir, "run directory (default <out>/<tag>)");
    rep->add_flag("--allow-mixed", allow_mixed, "merge artifacts with mismatched config hashes");

    auto* pipe = app.add_subcommand("pipeline", "run the full desk-scale pipeline end to end");
    add_common(pipe, opts);
    pipe->add_flag("--force", force, "overwrite existing artifacts");
    pipe->add_option("--jobs", jobs, "parallel jobs");

    auto* pc = app.add_subcommand("param-count", "print parameter counts and reference configs");
    add_common(pc, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve_config(opts);
        if (gen->parsed()) {
            jetlab::run_gen_data(cfg, force);
            std::printf("datasets written under %s\n", cfg.run_dir().string().c_str());
        } else if (train->parsed()) {
            std::vector<std::string> variants;
            if (variant == "both") variants = {"unconstrained", "constrained"};
            else if (variant == "unconstrained" || variant == "constrained") variants = {variant};
            else throw jetlab::ConfigError("unknown variant: " + variant);
            auto out = jetlab::run_train(cfg, variants, force, jobs);
            for (const auto& [v, summary] : out.by_variant) {
                std::printf("%s: champion seed %s\n", v.c_str(),
                            summary.champion >= 0
                                ? std::to_string(summary.runs[summary.champion].seed).c_str()
                                : "none");
            }
        } else if (hess->parsed()) {
            jetlab::run_hessian(cfg, jobs);
            std::printf("curvature artifacts written under %s\n",
                        cfg.analysis_dir().string().c_str());
        } else if (gold->parsed()) {
            jetlab::run_goldstone(cfg);
            std::printf("goldstone tables written under %s\n", cfg.analysis_dir().string().c_str());
        } else if (robust->parsed()) {
            jetlab::run_robustness(cfg);
            std::printf("metrics.csv written under %s\n", cfg.analysis_dir().string().c_str());
        } else if (ood->parsed()) {
            jetlab::run_ood(cfg);
            std::printf("metrics_ood.csv written under %s\n", cfg.analysis_dir().string().c_str());
        } else if (dist->parsed()) {
            jetlab::run_distill(cfg, jobs);
            std::printf("distillation artifacts written under %s\n",
                        cfg.analysis_dir().string().c_str());
        } else if (rep->parsed()) {
            const auto dir = report_dir.empty() ? cfg.run_dir() : std::filesystem::path(report_dir);
            const int code = jetlab::run_report(dir, allow_mixed);
            std::printf("%s\n", jetlab::read_text_file(dir / "report.txt").c_str());
            return code;
        } else if (pipe->parsed()) {
            const int code = jetlab::run_all(cfg, force, jobs);
            std::printf("%s\n", jetlab::read_text_file(cfg.run_dir() / "report.txt").c_str());
            return code;
        } else if (pc->parsed()) {
            print_param_counts(cfg);
        }
    } catch (const jetlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const jetlab::ContractError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const jetlab::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const jetlab::DomainError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const jetlab::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    }
    return 0;
}
