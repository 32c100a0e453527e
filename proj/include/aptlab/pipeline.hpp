#pragma once

#include "aptlab/config.hpp"
#include "aptlab/eval.hpp"
#include "aptlab/report.hpp"

namespace aptlab {

// Stable CLI exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_config_error = 2,
    exit_io_error = 3,
    exit_collapsed = 4,
};

// Stage artifacts inside a run directory.
std::string pretrain_ckpt_path(const std::string& out_dir);
std::string distill_ckpt_path(const std::string& out_dir);
std::string apt_ckpt_path(const std::string& out_dir);
std::string apt_ema_ckpt_path(const std::string& out_dir);

DataSource make_data_source(const RunConfig& cfg, uint64_t seed_offset = 1);

// Each stage writes its checkpoint, a metrics log, and the resolved config
// into out_dir. Prerequisite checkpoints must already exist there.
void run_pretrain(const RunConfig& cfg);
void run_distill(const RunConfig& cfg);
TrainResult run_apt(const RunConfig& cfg);

// Generates eval_samples one-step samples (Euler for pretrain-stage
// checkpoints) and computes the metric set against fresh real draws.
MetricsRecord evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt, int n_steps,
                                  const std::string& run_id);
void run_eval(const RunConfig& cfg);
void run_traverse(const RunConfig& cfg);
void run_probe(const RunConfig& cfg);
void run_report(const RunConfig& cfg);

struct AblateCell {
    std::string overrides;
    uint64_t seed = 0;
    bool collapsed = false;
    double energy_distance = 0;
    double mode_coverage = 0;
};

struct AblateSummary {
    std::vector<AblateCell> cells;
    std::map<std::string, int> collapse_counts;  // per override combo
};

// Expands grid overrides (key=v1,v2 entries) x seeds into child apt runs that
// share per-seed pretrain/distill checkpoints, then aggregates collapse stats.
AblateSummary run_ablate(const RunConfig& base, const std::vector<std::string>& grid, int n_seeds);
void write_ablate_summary(const AblateSummary& s, const std::string& path);

}  // namespace aptlab
