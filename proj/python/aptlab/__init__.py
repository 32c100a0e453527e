"""Desk-scale adversarial post-training of one-step generators."""

from ._aptlab import (
    ConfigError,
    IoError,
    MetricsRecord,
    RunConfig,
    checkpoint_stage,
    energy_distance,
    euler_samples,
    feature_frechet,
    mode_coverage,
    one_step_samples,
    preference_score,
    run_apt,
    run_distill,
    run_eval,
    run_pretrain,
    run_probe,
    run_report,
    run_traverse,
    sample_real,
    shift,
    shift_inverse,
)

__all__ = [
    "ConfigError",
    "IoError",
    "MetricsRecord",
    "RunConfig",
    "checkpoint_stage",
    "energy_distance",
    "euler_samples",
    "feature_frechet",
    "mode_coverage",
    "one_step_samples",
    "preference_score",
    "run_apt",
    "run_distill",
    "run_eval",
    "run_pretrain",
    "run_probe",
    "run_report",
    "run_traverse",
    "sample_real",
    "shift",
    "shift_inverse",
]
