//! End-to-end experiments: manifests, synthetic datasets, leave-one-subject-out
//! evaluation, calibration sweeps and reports.

pub mod dataset;
pub mod loso;
pub mod manifest;
pub mod report;

pub use dataset::{generate_dataset, synthetic_samples, SyntheticConfig};
pub use loso::{
    class_list, evaluate, evaluate_by_subject, fit_few_shot, fit_model, load_samples, run_calibration_sweep, run_loso,
    snr_summary, train_on_all, LoadedSample,
};
pub use manifest::{Manifest, ManifestEntry, ManifestFilter};
pub use report::{CalibrationPoint, FoldResult, Report, SnrSummary};
