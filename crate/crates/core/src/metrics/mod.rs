//! Evaluation statistics and report rendering.

pub mod aggregate;
pub mod auc;
pub mod mae;
pub mod rank;
pub mod scores;
pub mod spearman;
pub mod tables;
pub mod youden;

pub use aggregate::{aggregate_folds, EvalReport, EvalRow, LabelSummary};
pub use auc::{roc_auc, roc_auc_f32};
pub use mae::{mae, AbsoluteError};
pub use rank::average_ranks;
pub use scores::{load_score_csv, read_score_csv, spearman_matrix, write_score_csv, ScoreSet, SpearmanMode};
pub use spearman::spearman;
pub use youden::{confusion, youden_operating_point, OperatingPoint};
