//! Frozen desk-scale defaults, fixed once by calibration runs against the
//! training scenes and kept constant so results are reproducible:
//!
//! - `DESK_EPSILON` is the success threshold at which the tuned clean-only
//!   baseline scores ~0.7 on the default training scene (measured 0.707).
//! - The per-method parameters are the best of 1000 random-search trials
//!   per method with the objective averaged over five training scenes
//!   (seeds 1000..1004, independent truth fields), holdout station 0,
//!   standard-gp prediction mode, epsilon 0.16.

use crate::estimators::{KernelParams, PredictionMode};
use crate::frr::ReweightScheme;

use super::{MethodKind, MethodSpec};

/// Success threshold for double-difference predictions, in TEC units.
pub const DESK_EPSILON: f64 = 0.16;

/// Seed of the first designated training scene used for offline tuning.
pub const TRAIN_SCENE_SEED: u64 = 1000;

/// Number of training scenes the tuning objective averages over.
pub const TRAIN_SCENE_COUNT: u64 = 5;

/// Prediction mode under which the defaults were calibrated. The
/// kernel-sum formula (no K^-1) stays the CLI default; benchmark
/// comparisons use the mode capable of reproducing exact worlds.
pub const CALIBRATED_MODE: PredictionMode = PredictionMode::StandardGp;

fn kernel(omega: [f64; 4], lambda: f64) -> KernelParams {
    KernelParams::new(omega, lambda).expect("frozen parameters are valid")
}

/// Best random-search parameters per method.
pub fn tuned_method_spec(kind: MethodKind) -> MethodSpec {
    match kind {
        MethodKind::Frr => MethodSpec::Frr {
            kernel: kernel(
                [
                    22.02953901527062,
                    20.51285146007935,
                    0.1963614951146596,
                    1.5236915123018084,
                ],
                5.033206131756323e-6,
            ),
            scheme: ReweightScheme::exponential(
                3.125943661699343,
                0.0649910695402246,
                0.012518649310355269,
            ),
        },
        MethodKind::CleanOnly => MethodSpec::CleanOnly {
            kernel: kernel(
                [
                    22.02953901527062,
                    20.51285146007935,
                    0.1963614951146596,
                    1.5236915123018084,
                ],
                5.033206131756323e-6,
            ),
        },
        MethodKind::PooledLs => MethodSpec::PooledLs {
            kernel: kernel(
                [
                    21.010041965683573,
                    21.695954393208886,
                    1.2702531740803755,
                    1.176530798627993,
                ],
                0.256568391303927,
            ),
        },
        MethodKind::Hit => MethodSpec::Hit {
            kernel: kernel(
                [
                    8.07649579708114,
                    8.787619151880504,
                    0.898515758713311,
                    1.0639726264182572,
                ],
                0.003205680571238638,
            ),
            rho: 0.849832842033255,
        },
        MethodKind::Huber => MethodSpec::Huber {
            kernel: kernel(
                [
                    5.852577165510113,
                    30.538329338394192,
                    1.4870451390662278,
                    1.531625405807787,
                ],
                0.06650363822165097,
            ),
            threshold: 1.7125514727329074,
        },
        MethodKind::Irls => MethodSpec::Irls {
            kernel: kernel(
                [
                    34.547924932886694,
                    17.54850377501971,
                    1.258733459811336,
                    1.2896676182556377,
                ],
                0.0275462403340464,
            ),
        },
        MethodKind::Ransac => MethodSpec::Ransac {
            kernel: kernel(
                [
                    34.547924932886694,
                    17.54850377501971,
                    1.258733459811336,
                    1.2896676182556377,
                ],
                0.0275462403340464,
            ),
            rho: 0.72421332811898,
        },
    }
}

/// All seven methods with their frozen parameters.
pub fn tuned_method_specs() -> Vec<MethodSpec> {
    MethodKind::ALL
        .iter()
        .map(|&k| tuned_method_spec(k))
        .collect()
}

/// Default reweighting scheme for linear FRR runs: the practical choice
/// with the decay scale resolved to the median retained residual.
pub fn default_linear_scheme() -> ReweightScheme {
    ReweightScheme::exponential_auto(2.0, 1.0)
}
