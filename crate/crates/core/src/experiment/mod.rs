//! Synthetic test–retest, group-separation and subset-size experiments.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`] and the
//! model files. Cohorts are drawn from streams derived from `config.seed`;
//! bootstrap subsets from `config.bootstrap.seed`, so the two never interact.

mod cohort;
mod config;
mod output;
mod run;

pub use cohort::{generate_cohort, generate_group_cohort, shifted_mixture, subject_id, Cohort, RoiData, Session};
pub use config::{
    CohortConfig, EffectConfig, ExperimentConfig, ExperimentKind, Method, NoiseConfig, SessionDrift,
    CONFIG_FORMAT_VERSION,
};
pub use output::{
    export_plotdata, plot_rows, read_plotdata_csv, verify_run, write_run, FileDigest, PlotRow, PlotSummary,
    PlotSummaryEntry, RunManifest, RunSeeds, MANIFEST_FORMAT_VERSION, PLOTDATA_COLUMNS, PLOTDATA_FORMAT_VERSION,
};
pub use run::{
    run_ablation, run_experiment, run_group_separation, run_test_retest, BiomarkerRecord, ExperimentReport,
    ExperimentRun, MethodReport, ModelSet, RecordedFailure, Timing, REPORT_FORMAT_VERSION,
};
