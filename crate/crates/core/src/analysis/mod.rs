//! Cohort-level analysis: mean trajectories, error-stage classification,
//! occupancy and descriptive statistics, two-sample tests.

pub mod classify;
pub mod cohort;
pub mod meantraj;
pub mod stats;

pub use classify::{
    classify_corpus, classify_error_step, classify_traces, reference_flow, stage_distribution, stage_for_cosine,
    ClassifiedStep, ClassifierConfig, CorpusClassification, ReferenceFlow, Region, Stage, StageDistribution,
    StageGates, StageLabel,
};
pub use cohort::{
    cohort_report, descriptive_stats, region_occupancy, CohortCosine, CohortReport, CohortSummary, MetricTest,
    Occupancy, ReportConfig, TrajectoryStats,
};
pub use meantraj::{cohort_cosine, mean_curve, mean_trajectory, resample, tau_grid, MeanTrajectory};
pub use stats::{mann_whitney, two_sample_test, welch_test, TestKind, TestResult};
