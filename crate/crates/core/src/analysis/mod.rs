//! Analyses over fitted per-class predictive models.

pub mod binning;
pub mod classify;
pub mod groups;
pub mod kl_matrix;
pub mod memorization;
pub mod report;

pub use binning::{density_bins, BinSummary, DensityBinning, DEFAULT_BINS};
pub use classify::{empirical_priors, generative_classify, macro_f_score, per_class_f_scores, Classification};
pub use groups::{detect_density_groups, DensityGroups, BIMODALITY_THRESHOLD};
pub use kl_matrix::{between_class_kl_matrix, KlMatrix, DEFAULT_MIN_CLASS_SIZE};
pub use memorization::{
    memorization_from_trials, select_memorization_subsets, MemorizationSubsets, Trial, TrialRecords,
    DEFAULT_MEMORIZATION_THRESHOLD,
};
pub use report::{class_log_density_stats, ClassDensityReport, ClassGroups, ClassSummary, ExampleLogDensity};
