#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "aptlab/pipeline.hpp"

using namespace aptlab;

static RunConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
    cfg.apply_overrides(overrides);
    if (const char* root = std::getenv("APT_LAB_OUT")) {
        // env var overrides the output root but keeps the configured leaf dir
        std::string leaf = cfg.get_string("out_dir");
        auto slash = leaf.find_last_of('/');
        cfg.set("out_dir", std::string(root) + "/" + (slash == std::string::npos ? leaf : leaf.substr(slash + 1)));
    }
    return cfg;
}

int main(int argc, char** argv) {
    CLI::App app{"apt-lab: flow-matching pretraining, consistency distillation, and adversarial post-training at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::string> grid;
    int seeds = 1;
    bool show_schema = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (empty = defaults)");
        sub->add_option("overrides", overrides, "key=value overrides (win over the file)");
    };

    CLI::App* c_pretrain = app.add_subcommand("pretrain", "flow-matching pretraining of the teacher");
    CLI::App* c_distill = app.add_subcommand("distill", "consistency-distill the one-step generator");
    CLI::App* c_apt = app.add_subcommand("apt", "adversarial post-training against real data");
    CLI::App* c_eval = app.add_subcommand("eval", "evaluate the checkpoints in out_dir");
    CLI::App* c_traverse = app.add_subcommand("traverse", "latent traversal of the trained generator");
    CLI::App* c_probe = app.add_subcommand("probe", "per-layer linear probes of the generator");
    CLI::App* c_ablate = app.add_subcommand("ablate", "expand a config grid x seeds into child runs");
    CLI::App* c_report = app.add_subcommand("report", "write the report files for out_dir");
    CLI::App* c_schema = app.add_subcommand("schema", "print the config schema with defaults");
    for (auto* sub : {c_pretrain, c_distill, c_apt, c_eval, c_traverse, c_probe, c_ablate, c_report})
        add_common(sub);
    c_ablate->add_option("--grid", grid, "grid entries, e.g. lambda=0,100")->required();
    c_ablate->add_option("--seeds", seeds, "number of seeds");
    (void)show_schema;

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_schema->parsed()) {
            RunConfig defaults;
            for (auto& [key, doc] : RunConfig::schema_docs()) std::cout << key << "\t" << doc << "\n";
            return exit_ok;
        }
        RunConfig cfg = build_config(config_path, overrides);
        if (c_pretrain->parsed()) {
            run_pretrain(cfg);
        } else if (c_distill->parsed()) {
            run_distill(cfg);
        } else if (c_apt->parsed()) {
            TrainResult r = run_apt(cfg);
            if (r.collapsed) {
                std::cerr << "[apt-lab] run terminated by collapse at step " << r.steps_run << "\n";
                return exit_collapsed;
            }
        } else if (c_eval->parsed()) {
            run_eval(cfg);
        } else if (c_traverse->parsed()) {
            run_traverse(cfg);
        } else if (c_probe->parsed()) {
            run_probe(cfg);
        } else if (c_report->parsed()) {
            run_report(cfg);
        } else if (c_ablate->parsed()) {
            AblateSummary s = run_ablate(cfg, grid, seeds);
            for (auto& [combo, count] : s.collapse_counts)
                std::cout << combo << ": " << count << " collapsed\n";
        }
        return exit_ok;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config_error;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return exit_io_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_failure;
    }
}
