//! Robust regression from a clean dataset plus a heavy-tailed-corrupted
//! dataset, built around the Filter-Reweight-Retrain (FRR) pass: fit on
//! clean data, filter noisy samples by residual threshold, weight the
//! survivors by a bounded scalar map, retrain once. Includes dense and
//! Gaussian-process base estimators, four comparison robust regressors
//! (HIT, Huber, IRLS, RANSAC), a synthetic ionosphere vTEC scene
//! generator producing per-second double-difference frames, and a
//! seeded benchmark harness with random-search tuning.

pub mod baselines;
pub mod dataspace;
pub mod error;
pub mod estimators;
pub mod frr;
pub mod harness;
pub mod ionosim;

pub use dataspace::{
    load_labeled_set, save_labeled_set, HeavyTail, LabeledSet, NoiseSpec, Provenance, Sample,
    WeightVector,
};
pub use error::{FrrError, Result};
pub use estimators::{
    build_kernel_matrix, fit_gp, fit_gp_weighted, fit_least_squares, fit_weighted_least_squares,
    kernel_eval, predict_double_difference, predict_vtec, predict_vtec_batch, DesignMatrix,
    GpModel, KernelParams, LinearModel, PredictionMode,
};
pub use frr::{
    compute_residuals, compute_tau, filter, frr_fit, frr_fit_gp, frr_fit_linear, reweight,
    validate_scheme, FrrReport, ReweightKind, ReweightScheme,
};
pub use ionosim::{
    frame_stream, gen_scene, holdout_split, load_scene, save_scene, PiercePoint, QuadrupletMatrix,
    QuadrupletRow, Scene, SceneConfig, TruthField, FRAME_BUDGET_MILLIS,
};
