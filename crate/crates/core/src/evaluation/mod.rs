//! Metrics, cross-validation, missing-modality scenarios, ablations and
//! interpretability exports.

mod export;
mod metrics;
mod report;
mod runner;

pub use export::{attention_record, export_attention, heatmap, read_attention, AttentionRecord, ExportSummary};
pub use metrics::{accuracy, argmax_rows, auc, auc_binary, f1, MetricReport, Scores, Summary};
pub use report::{ablation_table, align_columns, metric_table, scenario_table};
pub use runner::{
    complete_ladder, cross_validate, fold_assignment, incomplete_ladder, repetition_seed, run_ablation, run_cv,
    run_scenario, run_scenarios, scenario_split, AblationRow, AblationTables, Components, ScenarioRow, SplitFn,
    ABLATION_MISSING_FRACTION,
};
