//! Benchmark harness: metrics, the per-frame experiment loop, random-search
//! tuning on a training scene, and the method comparison table.

pub mod defaults;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    fit_hit, fit_hit_over, fit_huber, fit_huber_over, fit_irls, fit_irls_over, fit_ransac,
    fit_ransac_over, GpRowFitter, DEFAULT_BASELINE_ITERS, DEFAULT_IRLS_FLOOR,
};
use crate::dataspace::{HeavyTail, LabeledSet, NoiseSpec, Provenance};
use crate::error::{FrrError, Result};
use crate::estimators::{
    fit_gp, fit_least_squares, predict_double_difference, predict_vtec_batch, GpModel,
    KernelParams, LinearModel, PredictionMode,
};
use crate::frr::{frr_fit_gp, frr_fit_linear, GpFrrProblem, ReweightScheme};
use crate::ionosim::{
    gen_clean_labels, gen_noisy_labels, holdout_split, sample_design, DesignKind, FrameView, Scene,
    SceneView,
};

/// Deterministic substream derivation (splitmix64 over master ^ salt).
pub fn mix_seed(master: u64, salt: u64) -> u64 {
    let mut z = master
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fraction of predictions within epsilon of the truth (strictly below).
pub fn success_ratio(predictions: &[f64], truth: &[f64], epsilon: f64) -> Result<f64> {
    if predictions.is_empty() {
        return Err(FrrError::Empty(
            "success ratio needs at least one prediction",
        ));
    }
    if predictions.len() != truth.len() {
        return Err(FrrError::Shape(format!(
            "{} predictions vs {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(FrrError::Invalid(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| (*p - *t).abs() < epsilon)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

// ---------------------------------------------------------------------
// Method specifications

/// One benchmark method with its tuned parameters. Iteration caps follow
/// the shared five-retrain budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodSpec {
    Frr {
        kernel: KernelParams,
        scheme: ReweightScheme,
    },
    CleanOnly {
        kernel: KernelParams,
    },
    PooledLs {
        kernel: KernelParams,
    },
    Hit {
        kernel: KernelParams,
        rho: f64,
    },
    Huber {
        kernel: KernelParams,
        threshold: f64,
    },
    Irls {
        kernel: KernelParams,
    },
    Ransac {
        kernel: KernelParams,
        rho: f64,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Frr { .. } => "frr",
            MethodSpec::CleanOnly { .. } => "clean-only",
            MethodSpec::PooledLs { .. } => "pooled-ls",
            MethodSpec::Hit { .. } => "hit",
            MethodSpec::Huber { .. } => "huber",
            MethodSpec::Irls { .. } => "irls",
            MethodSpec::Ransac { .. } => "ransac",
        }
    }

    pub fn kernel(&self) -> &KernelParams {
        match self {
            MethodSpec::Frr { kernel, .. }
            | MethodSpec::CleanOnly { kernel }
            | MethodSpec::PooledLs { kernel }
            | MethodSpec::Hit { kernel, .. }
            | MethodSpec::Huber { kernel, .. }
            | MethodSpec::Irls { kernel }
            | MethodSpec::Ransac { kernel, .. } => kernel,
        }
    }

    /// Re-checks the value constraints serde does not enforce, for specs
    /// deserialized from files.
    pub fn validate(&self) -> Result<()> {
        KernelParams::new(self.kernel().omega, self.kernel().lambda)?;
        match self {
            MethodSpec::Frr { scheme, .. } => crate::frr::validate_scheme(scheme),
            MethodSpec::Hit { rho, .. } | MethodSpec::Ransac { rho, .. } => {
                if *rho > 0.0 && *rho <= 1.0 {
                    Ok(())
                } else {
                    Err(FrrError::Invalid(format!(
                        "keep fraction {rho} outside (0, 1]"
                    )))
                }
            }
            MethodSpec::Huber { threshold, .. } => {
                if threshold.is_finite() && *threshold > 0.0 {
                    Ok(())
                } else {
                    Err(FrrError::Invalid(format!(
                        "huber threshold {threshold} must be finite and > 0"
                    )))
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Frr,
    CleanOnly,
    PooledLs,
    Hit,
    Huber,
    Irls,
    Ransac,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Frr,
        MethodKind::CleanOnly,
        MethodKind::PooledLs,
        MethodKind::Hit,
        MethodKind::Huber,
        MethodKind::Irls,
        MethodKind::Ransac,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Frr => "frr",
            MethodKind::CleanOnly => "clean-only",
            MethodKind::PooledLs => "pooled-ls",
            MethodKind::Hit => "hit",
            MethodKind::Huber => "huber",
            MethodKind::Irls => "irls",
            MethodKind::Ransac => "ransac",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "frr" => Ok(MethodKind::Frr),
            "clean-only" => Ok(MethodKind::CleanOnly),
            "pooled-ls" => Ok(MethodKind::PooledLs),
            "hit" => Ok(MethodKind::Hit),
            "huber" => Ok(MethodKind::Huber),
            "irls" => Ok(MethodKind::Irls),
            "ransac" => Ok(MethodKind::Ransac),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

// ---------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    /// ||w_hat - w*|| in linear mode; absent for scene runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recovery_error: Option<f64>,
    pub success_ratio: f64,
    /// Mean fit+predict wall milliseconds per frame. Stripped from
    /// comparison outputs so fixed-seed runs are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit_millis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_frame_millis: Option<f64>,
    pub failed_frames: usize,
    pub seed: u64,
    pub config_hash: String,
}

fn config_hash(parts: &impl Serialize) -> String {
    let json = serde_json::to_string(parts).expect("hash input serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(16);
    for b in digest.iter().take(8) {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

// ---------------------------------------------------------------------
// Scene experiments

fn partition_by_flags(view: &FrameView) -> (Vec<usize>, Vec<usize>) {
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (i, &flag) in view.flags.iter().enumerate() {
        if flag {
            noisy.push(i);
        } else {
            clean.push(i);
        }
    }
    (clean, noisy)
}

/// Fits one method on one training frame.
pub fn fit_scene_method(view: &FrameView, spec: &MethodSpec, frame_seed: u64) -> Result<GpModel> {
    match spec {
        MethodSpec::Frr { kernel, scheme } => {
            let (clean_rows, noisy_rows) = partition_by_flags(view);
            let clean_design = view.design.row_subset(&clean_rows);
            let clean_y: Vec<f64> = clean_rows.iter().map(|&i| view.y[i]).collect();
            let noisy_design = view.design.row_subset(&noisy_rows);
            let noisy_y: Vec<f64> = noisy_rows.iter().map(|&i| view.y[i]).collect();
            let problem = GpFrrProblem {
                points: &view.point_features,
                clean_design: &clean_design,
                clean_y: &clean_y,
                noisy_design: &noisy_design,
                noisy_y: &noisy_y,
                params: *kernel,
            };
            Ok(frr_fit_gp(&problem, scheme)?.final_model)
        }
        MethodSpec::CleanOnly { kernel } => {
            let (clean_rows, _) = partition_by_flags(view);
            let design = view.design.row_subset(&clean_rows);
            let y: Vec<f64> = clean_rows.iter().map(|&i| view.y[i]).collect();
            fit_gp(&design, &y, &view.point_features, kernel)
        }
        MethodSpec::PooledLs { kernel } => {
            fit_gp(&view.design, &view.y, &view.point_features, kernel)
        }
        MethodSpec::Hit { kernel, rho } => {
            let fitter = GpRowFitter {
                design: &view.design,
                y: &view.y,
                points: &view.point_features,
                params: *kernel,
            };
            Ok(fit_hit_over(&fitter, *rho, DEFAULT_BASELINE_ITERS)?.0)
        }
        MethodSpec::Huber { kernel, threshold } => {
            let fitter = GpRowFitter {
                design: &view.design,
                y: &view.y,
                points: &view.point_features,
                params: *kernel,
            };
            Ok(fit_huber_over(&fitter, *threshold, DEFAULT_BASELINE_ITERS)?.0)
        }
        MethodSpec::Irls { kernel } => {
            let fitter = GpRowFitter {
                design: &view.design,
                y: &view.y,
                points: &view.point_features,
                params: *kernel,
            };
            Ok(fit_irls_over(&fitter, DEFAULT_BASELINE_ITERS, DEFAULT_IRLS_FLOOR)?.0)
        }
        MethodSpec::Ransac { kernel, rho } => {
            let fitter = GpRowFitter {
                design: &view.design,
                y: &view.y,
                points: &view.point_features,
                params: *kernel,
            };
            Ok(fit_ransac_over(&fitter, *rho, DEFAULT_BASELINE_ITERS, frame_seed)?.0)
        }
    }
}

/// Runs one method frame by frame: fit on the training view, predict the
/// evaluation view's double differences, score against truth. Only the
/// fit and predict steps are inside the timing window. A frame whose fit
/// fails numerically counts as fully unsuccessful and the run continues.
pub fn view_experiment(
    train: &SceneView,
    eval: &SceneView,
    spec: &MethodSpec,
    mode: PredictionMode,
    epsilon: f64,
    seed: u64,
    hash: String,
) -> Result<MetricsRecord> {
    let train_frames = train.frames();
    let eval_frames = eval.frames();
    if train_frames.len() != eval_frames.len() {
        return Err(FrrError::Shape(format!(
            "{} train frames vs {} eval frames",
            train_frames.len(),
            eval_frames.len()
        )));
    }
    let mut successes = Vec::new();
    let mut millis = Vec::new();
    let mut failed = 0usize;
    for (idx, (train_frame, eval_frame)) in train_frames.iter().zip(eval_frames).enumerate() {
        if eval_frame.truth.is_empty() {
            continue;
        }
        let frame_seed = mix_seed(seed, idx as u64);
        let start = Instant::now();
        let outcome = fit_scene_method(train_frame, spec, frame_seed).and_then(|model| {
            let f_pred = predict_vtec_batch(&model, &eval_frame.point_features, mode);
            predict_double_difference(&eval_frame.design, &f_pred)
        });
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        millis.push(elapsed);
        match outcome {
            Ok(preds) => successes.push(success_ratio(&preds, &eval_frame.truth, epsilon)?),
            Err(e) if e.is_numerical() => {
                failed += 1;
                successes.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    if successes.is_empty() {
        return Err(FrrError::Empty("no frames with evaluation rows"));
    }
    let mean_success = successes.iter().sum::<f64>() / successes.len() as f64;
    let mean_millis = millis.iter().sum::<f64>() / millis.len() as f64;
    let max_millis = millis.iter().cloned().fold(0.0, f64::max);
    Ok(MetricsRecord {
        method: spec.name().to_string(),
        recovery_error: None,
        success_ratio: mean_success,
        fit_millis: Some(mean_millis),
        max_frame_millis: Some(max_millis),
        failed_frames: failed,
        seed,
        config_hash: hash,
    })
}

/// Splits the scene at `test_station` and runs the method across frames.
pub fn run_scene_experiment(
    scene: &Scene,
    test_station: usize,
    spec: &MethodSpec,
    mode: PredictionMode,
    epsilon: f64,
    seed: u64,
) -> Result<MetricsRecord> {
    let split = holdout_split(scene, test_station)?;
    let hash = config_hash(&(&scene.config, test_station, spec, mode, epsilon));
    view_experiment(&split.train, &split.test, spec, mode, epsilon, seed, hash)
}

// ---------------------------------------------------------------------
// Linear experiments

/// Linear robust-regression scenario: clean set of size n, heavy-tailed
/// noisy set of size m (noise ratio m / (n + m)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScenarioConfig {
    pub d: usize,
    pub n_clean: usize,
    pub m_noisy: usize,
    pub noise: NoiseSpec,
    pub design: DesignKind,
    pub n_test: usize,
}

impl Default for LinearScenarioConfig {
    fn default() -> Self {
        // 30% noise ratio; the corrupted labels carry a standard Cauchy
        // against unit clean noise, the regime where recycling filtered
        // noisy samples measurably improves on the clean-only fit
        LinearScenarioConfig {
            d: 10,
            n_clean: 700,
            m_noisy: 300,
            noise: NoiseSpec::new(1.0, 4.0, HeavyTail::Cauchy { scale: 1.0 })
                .expect("valid defaults"),
            design: DesignKind::Rademacher,
            n_test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum LinearMethod {
    Frr { scheme: ReweightScheme },
    CleanOnly,
    PooledLs,
    Hit { rho: f64 },
    Huber { threshold: f64 },
    Irls,
    Ransac { rho: f64 },
}

impl LinearMethod {
    pub fn name(&self) -> &'static str {
        match self {
            LinearMethod::Frr { .. } => "frr",
            LinearMethod::CleanOnly => "clean-only",
            LinearMethod::PooledLs => "pooled-ls",
            LinearMethod::Hit { .. } => "hit",
            LinearMethod::Huber { .. } => "huber",
            LinearMethod::Irls => "irls",
            LinearMethod::Ransac { .. } => "ransac",
        }
    }
}

/// One generated linear instance, kept so test oracles can reach the
/// ground truth that estimators never see.
pub struct LinearInstance {
    pub w_star: Vec<f64>,
    pub clean: LabeledSet,
    pub noisy: LabeledSet,
    /// True heavy-tailed noise per noisy sample.
    pub noisy_noise: Vec<f64>,
    pub test_design: Vec<Vec<f64>>,
}

pub fn gen_linear_instance(config: &LinearScenarioConfig, seed: u64) -> Result<LinearInstance> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let w_star: Vec<f64> = (0..config.d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let clean_design = sample_design(config.n_clean, config.d, config.design, mix_seed(seed, 1));
    let clean_labels = gen_clean_labels(&clean_design, &w_star, &config.noise, mix_seed(seed, 2))?;
    let noisy_design = sample_design(config.m_noisy, config.d, config.design, mix_seed(seed, 3));
    let noisy = gen_noisy_labels(&noisy_design, &w_star, &config.noise, mix_seed(seed, 4));
    let test_design = sample_design(config.n_test, config.d, config.design, mix_seed(seed, 5));
    Ok(LinearInstance {
        w_star,
        clean: LabeledSet::from_rows(clean_design, clean_labels, Provenance::Clean)?,
        noisy: LabeledSet::from_rows(noisy_design, noisy.labels, Provenance::Noisy)?,
        noisy_noise: noisy.noise,
        test_design,
    })
}

fn pool(clean: &LabeledSet, noisy: &LabeledSet) -> Result<LabeledSet> {
    let mut samples = clean.samples().to_vec();
    samples.extend(noisy.samples().to_vec());
    LabeledSet::new(samples, clean.dimension(), Provenance::Noisy)
}

pub struct LinearOutcome {
    pub record: MetricsRecord,
    pub model: LinearModel,
    /// Initial clean-only fit error, reported alongside FRR runs.
    pub w_init_error: Option<f64>,
}

/// Fits one linear method on a generated instance and scores recovery
/// error plus the fraction of noise-free test predictions within epsilon.
pub fn run_linear_experiment(
    config: &LinearScenarioConfig,
    method: &LinearMethod,
    epsilon: f64,
    seed: u64,
) -> Result<LinearOutcome> {
    let instance = gen_linear_instance(config, seed)?;
    let pooled = pool(&instance.clean, &instance.noisy)?;
    let start = Instant::now();
    let mut w_init_error = None;
    let model = match method {
        LinearMethod::Frr { scheme } => {
            let report = frr_fit_linear(&instance.clean, &instance.noisy, scheme)?;
            w_init_error = Some(
                report
                    .w_init
                    .weights
                    .iter()
                    .zip(&instance.w_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
            report.final_model
        }
        LinearMethod::CleanOnly => fit_least_squares(&instance.clean)?,
        LinearMethod::PooledLs => fit_least_squares(&pooled)?,
        LinearMethod::Hit { rho } => fit_hit(&pooled, *rho, DEFAULT_BASELINE_ITERS)?,
        LinearMethod::Huber { threshold } => {
            fit_huber(&pooled, *threshold, DEFAULT_BASELINE_ITERS)?
        }
        LinearMethod::Irls => fit_irls(&pooled, DEFAULT_BASELINE_ITERS, DEFAULT_IRLS_FLOOR)?,
        LinearMethod::Ransac { rho } => {
            fit_ransac(&pooled, *rho, DEFAULT_BASELINE_ITERS, mix_seed(seed, 6))?
        }
    };
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let recovery: f64 = model
        .weights
        .iter()
        .zip(&instance.w_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let preds: Vec<f64> = instance
        .test_design
        .iter()
        .map(|x| model.predict(x))
        .collect();
    let truth: Vec<f64> = instance
        .test_design
        .iter()
        .map(|x| x.iter().zip(&instance.w_star).map(|(a, b)| a * b).sum())
        .collect();
    let record = MetricsRecord {
        method: method.name().to_string(),
        recovery_error: Some(recovery),
        success_ratio: success_ratio(&preds, &truth, epsilon)?,
        fit_millis: Some(elapsed),
        max_frame_millis: None,
        failed_frames: 0,
        seed,
        config_hash: config_hash(&(config, method, epsilon)),
    };
    Ok(LinearOutcome {
        record,
        model,
        w_init_error,
    })
}

// ---------------------------------------------------------------------
// Random-search tuning

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSampling {
    /// Log-uniform over omega_1, omega_2 and lambda, whose ranges span
    /// many decades. Uniform sampling there never explores small values.
    LogUniform,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRanges {
    pub omega12: (f64, f64),
    pub omega34: (f64, f64),
    pub lambda: (f64, f64),
    pub c1: (f64, f64),
    pub c2: (f64, f64),
    pub c3: (f64, f64),
    pub rho: (f64, f64),
    pub huber: (f64, f64),
    pub num_trials: usize,
    pub scale_sampling: ScaleSampling,
}

impl Default for TuningRanges {
    fn default() -> Self {
        TuningRanges {
            omega12: (0.001, 1000.0),
            omega34: (0.01, std::f64::consts::FRAC_PI_2),
            lambda: (1e-6, 1e6),
            c1: (0.5, 8.0),
            c2: (0.01, 1.0),
            c3: (0.001, 0.1),
            rho: (0.1, 0.9),
            huber: (1.0, 5.0),
            num_trials: 100,
            scale_sampling: ScaleSampling::LogUniform,
        }
    }
}

impl TuningRanges {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("omega12", self.omega12),
            ("omega34", self.omega34),
            ("lambda", self.lambda),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("rho", self.rho),
            ("huber", self.huber),
        ];
        for (name, (lo, hi)) in ranges {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(FrrError::Invalid(format!(
                    "range {name} = [{lo}, {hi}] is not a nonempty interval"
                )));
            }
        }
        if self.num_trials == 0 {
            return Err(FrrError::Invalid("num_trials must be >= 1".into()));
        }
        Ok(())
    }

    fn sample_scale(&self, range: (f64, f64), rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        use rand::Rng;
        match self.scale_sampling {
            ScaleSampling::Uniform => rng.random_range(range.0..range.1),
            ScaleSampling::LogUniform => {
                let (lo, hi) = (range.0.ln(), range.1.ln());
                rng.random_range(lo..hi).exp()
            }
        }
    }

    /// Draws one candidate parameter vector for the given method.
    pub fn sample_method(&self, kind: MethodKind, rng: &mut rand_chacha::ChaCha8Rng) -> MethodSpec {
        use rand::Rng;
        let kernel = KernelParams {
            omega: [
                self.sample_scale(self.omega12, rng),
                self.sample_scale(self.omega12, rng),
                rng.random_range(self.omega34.0..self.omega34.1),
                rng.random_range(self.omega34.0..self.omega34.1),
            ],
            lambda: self.sample_scale(self.lambda, rng),
        };
        match kind {
            MethodKind::Frr => MethodSpec::Frr {
                kernel,
                scheme: ReweightScheme::exponential(
                    rng.random_range(self.c1.0..self.c1.1),
                    rng.random_range(self.c2.0..self.c2.1),
                    rng.random_range(self.c3.0..self.c3.1),
                ),
            },
            MethodKind::CleanOnly => MethodSpec::CleanOnly { kernel },
            MethodKind::PooledLs => MethodSpec::PooledLs { kernel },
            MethodKind::Hit => MethodSpec::Hit {
                kernel,
                rho: rng.random_range(self.rho.0..self.rho.1),
            },
            MethodKind::Huber => MethodSpec::Huber {
                kernel,
                threshold: rng.random_range(self.huber.0..self.huber.1),
            },
            MethodKind::Irls => MethodSpec::Irls { kernel },
            MethodKind::Ransac => MethodSpec::Ransac {
                kernel,
                rho: rng.random_range(self.rho.0..self.rho.1),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: MethodSpec,
    pub best_score: f64,
    pub best_trial: usize,
    pub evaluated: usize,
}

/// Uniform random search: draws `num_trials` candidates, evaluates each
/// with the objective, returns the argmax. Ties go to the lowest trial
/// index; failed candidates are skipped; all candidates failing is an
/// error. Candidates are drawn from per-trial substreams so evaluation
/// order (or parallelism) cannot change the result.
pub fn random_search_tune(
    ranges: &TuningRanges,
    kind: MethodKind,
    objective: impl Fn(&MethodSpec) -> Result<f64> + Sync,
    seed: u64,
) -> Result<TuneOutcome> {
    use rand::SeedableRng;
    ranges.validate()?;
    let candidates: Vec<MethodSpec> = (0..ranges.num_trials)
        .map(|trial| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
            ranges.sample_method(kind, &mut rng)
        })
        .collect();
    let scores: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|spec| objective(spec).ok().filter(|s| s.is_finite()))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (trial, score) in scores.iter().enumerate() {
        if let Some(s) = score {
            let better = match best {
                None => true,
                Some((_, bs)) => *s > bs,
            };
            if better {
                best = Some((trial, *s));
            }
        }
    }
    let evaluated = scores.iter().filter(|s| s.is_some()).count();
    match best {
        Some((trial, score)) => Ok(TuneOutcome {
            best: candidates[trial].clone(),
            best_score: score,
            best_trial: trial,
            evaluated,
        }),
        None => Err(FrrError::Tuning(
            "every candidate failed to produce a score".into(),
        )),
    }
}

/// Objective for tuning on a training scene: fit on the scene's training
/// view and score success on its own held-out station. The evaluation
/// scene is never touched.
pub fn scene_tuning_objective<'a>(
    train_scene: &'a Scene,
    tune_station: usize,
    mode: PredictionMode,
    epsilon: f64,
    seed: u64,
) -> Result<impl Fn(&MethodSpec) -> Result<f64> + Sync + 'a> {
    let split = holdout_split(train_scene, tune_station)?;
    Ok(move |spec: &MethodSpec| {
        let record = view_experiment(
            &split.train,
            &split.test,
            spec,
            mode,
            epsilon,
            seed,
            String::new(),
        )?;
        Ok(record.success_ratio)
    })
}

// ---------------------------------------------------------------------
// Method comparison

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: usize,
    pub median_success_ratio: f64,
    pub min_success_ratio: f64,
    pub max_success_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct CompareTable {
    pub records: Vec<MetricsRecord>,
    pub summaries: Vec<MethodSummary>,
    /// (method name, seed, error text) for cells that failed outright;
    /// the table is built from the cells that succeeded.
    pub failed_cells: Vec<(String, u64, String)>,
}

/// Runs every method over fresh scenes generated from `config` with the
/// given seeds, fitting on the training stations and scoring the held-out
/// one. Records omit wall-clock timing so output files are reproducible
/// byte for byte. Cells evaluate in parallel; record order is fixed by the
/// (method, seed) grid, not by scheduling. A failing cell is reported in
/// `failed_cells` without aborting the rest of the table.
pub fn compare_methods(
    config: &crate::ionosim::SceneConfig,
    test_station: usize,
    methods: &[MethodSpec],
    mode: PredictionMode,
    epsilon: f64,
    seeds: &[u64],
) -> Result<CompareTable> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(FrrError::Empty(
            "compare needs at least one method and one seed",
        ));
    }
    let scenes: Vec<Scene> = seeds
        .iter()
        .map(|&s| crate::ionosim::gen_scene(config, s))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..seeds.len()).map(move |s| (m, s)))
        .collect();
    let outcomes: Vec<std::result::Result<MetricsRecord, String>> = cells
        .par_iter()
        .map(|&(m, s)| {
            match run_scene_experiment(
                &scenes[s],
                test_station,
                &methods[m],
                mode,
                epsilon,
                seeds[s],
            ) {
                Ok(mut record) => {
                    record.fit_millis = None;
                    record.max_frame_millis = None;
                    Ok(record)
                }
                Err(e) => Err(format!("{e}")),
            }
        })
        .collect();
    let mut records = Vec::with_capacity(cells.len());
    let mut failed_cells = Vec::new();
    for (&(m, s), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(record) => records.push(record),
            Err(text) => failed_cells.push((methods[m].name().to_string(), seeds[s], text)),
        }
    }

    let summaries = methods
        .iter()
        .map(|spec| {
            let scores: Vec<f64> = records
                .iter()
                .filter(|r| r.method == spec.name())
                .map(|r| r.success_ratio)
                .collect();
            MethodSummary {
                method: spec.name().to_string(),
                seeds: scores.len(),
                median_success_ratio: median(&scores),
                min_success_ratio: scores.iter().cloned().fold(f64::INFINITY, f64::min),
                max_success_ratio: scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(CompareTable {
        records,
        summaries,
        failed_cells,
    })
}

/// Writes the records as JSON lines and the per-method summary as CSV.
pub fn write_compare_outputs(
    table: &CompareTable,
    jsonl_path: impl AsRef<Path>,
    csv_path: impl AsRef<Path>,
) -> Result<()> {
    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(jsonl_path)?);
    for record in &table.records {
        writeln!(
            jsonl,
            "{}",
            serde_json::to_string(record).map_err(|e| FrrError::Invalid(format!("json: {e}")))?
        )?;
    }
    jsonl.flush()?;

    let mut csv = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(
        csv,
        "method,seeds,median_success_ratio,min_success_ratio,max_success_ratio"
    )?;
    for s in &table.summaries {
        writeln!(
            csv,
            "{},{},{},{},{}",
            s.method, s.seeds, s.median_success_ratio, s.min_success_ratio, s.max_success_ratio
        )?;
    }
    csv.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// Verify suite

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: std::result::Result<String, String>) -> VerifyCheck {
    match outcome {
        Ok(detail) => VerifyCheck {
            name,
            passed: true,
            detail,
        },
        Err(detail) => VerifyCheck {
            name,
            passed: false,
            detail,
        },
    }
}

/// Runs the library's structural invariants end to end and reports one
/// pass/fail line per check. Used by the CLI `verify` subcommand.
pub fn verify_suite(seed: u64) -> Vec<VerifyCheck> {
    use crate::frr::{
        filter_indices, frr_fit, frr_fit_linear, validate_scheme, CountingBase, LinearFrrProblem,
        ReweightScheme,
    };
    use crate::ionosim::{gen_scene, CorruptionSchedule, SceneConfig};

    let mut checks = Vec::new();
    let config = SceneConfig {
        num_stations: 6,
        num_satellites: 4,
        duration_seconds: 3,
        corruption_schedule: CorruptionSchedule::Constant { ratio: 0.3 },
        ..SceneConfig::default()
    };

    let scene = match gen_scene(&config, seed) {
        Ok(s) => s,
        Err(e) => {
            checks.push(check("scene-generation", Err(format!("{e}"))));
            return checks;
        }
    };
    checks.push(check(
        "scene-generation",
        Ok(format!("{} frames", scene.frames.len())),
    ));

    checks.push(check("quadruplet-invariants", {
        let mut ok = true;
        for frame in &scene.frames {
            let ones = vec![1.0; frame.points.len()];
            let products = frame.quadruplets.apply(&ones).unwrap_or_default();
            if products.iter().any(|&v| v != 0.0) {
                ok = false;
            }
        }
        if ok {
            Ok("every row annihilates constants".into())
        } else {
            Err("a quadruplet row does not sum to zero".into())
        }
    }));

    checks.push(check("corruption-schedule", {
        let mut worst: f64 = 0.0;
        for frame in &scene.frames {
            let frac = frame.flags.iter().filter(|&&f| f).count() as f64 / frame.flags.len() as f64;
            worst = worst.max((frac - 0.3).abs());
        }
        if worst <= 0.02 {
            Ok(format!("max deviation {worst:.4}"))
        } else {
            Err(format!("flagged fraction off schedule by {worst:.4}"))
        }
    }));

    checks.push(check("reweighting-rules", {
        let unbounded = validate_scheme(&ReweightScheme {
            c1: 2.0,
            c2: f64::INFINITY,
            c3: Some(0.01),
            kind: crate::frr::ReweightKind::Exponential,
        });
        let degenerate = validate_scheme(&ReweightScheme::constant(1.0, 0.0));
        let good = validate_scheme(&ReweightScheme::exponential(2.0, 1.0, 0.01));
        if unbounded.is_err() && degenerate.is_err() && good.is_ok() {
            Ok("unbounded ceilings rejected, bounded schemes accepted".into())
        } else {
            Err("scheme validation accepted an unbounded ceiling".into())
        }
    }));

    let lin_config = LinearScenarioConfig {
        n_clean: 80,
        m_noisy: 60,
        ..Default::default()
    };
    let instance = gen_linear_instance(&lin_config, mix_seed(seed, 1));
    match instance {
        Ok(instance) => {
            let problem = LinearFrrProblem {
                clean: &instance.clean,
                noisy: &instance.noisy,
            };
            let counting = CountingBase::new(&problem);
            let scheme = ReweightScheme::exponential_auto(2.0, 1.0);
            match frr_fit(&counting, &scheme) {
                Ok(report) => {
                    let retrains = counting.retrains.load(std::sync::atomic::Ordering::Relaxed);
                    checks.push(check(
                        "single-retrain",
                        if retrains == 1 {
                            Ok("base estimator retrained exactly once".into())
                        } else {
                            Err(format!("retrained {retrains} times"))
                        },
                    ));
                    checks.push(check(
                        "weight-ceiling",
                        if report
                            .weights
                            .weights()
                            .iter()
                            .all(|&w| w > 0.0 && w <= 1.0)
                        {
                            Ok(format!("{} kept weights within (0, c2]", report.kept_count))
                        } else {
                            Err("a weight exceeded the ceiling".into())
                        },
                    ));
                    checks.push(check(
                        "truncation-bound",
                        verify_truncation(&instance, &report),
                    ));
                }
                Err(e) => checks.push(check("single-retrain", Err(format!("{e}")))),
            }

            // permutation equivariance of the linear pass
            checks.push(check("permutation-equivariance", {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let scheme = ReweightScheme::exponential_auto(2.0, 1.0);
                let base = frr_fit_linear(&instance.clean, &instance.noisy, &scheme);
                let mut perm: Vec<usize> = (0..instance.noisy.len()).collect();
                perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(
                    seed, 2,
                )));
                let permuted = instance
                    .noisy
                    .subset(&perm, crate::dataspace::Provenance::Noisy);
                match (base, permuted) {
                    (Ok(a), Ok(p)) => match frr_fit_linear(&instance.clean, &p, &scheme) {
                        Ok(b) => {
                            let dist = a.final_model.distance(&b.final_model);
                            if dist <= 1e-10 {
                                Ok(format!("final models agree to {dist:.2e}"))
                            } else {
                                Err(format!("permutation changed the model by {dist:.2e}"))
                            }
                        }
                        Err(e) => Err(format!("{e}")),
                    },
                    _ => Err("setup failed".into()),
                }
            }));
        }
        Err(e) => checks.push(check("single-retrain", Err(format!("{e}")))),
    }

    checks.push(check("filter-monotonicity", {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
        let residuals: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..10.0)).collect();
        let mut ok = true;
        for _ in 0..50 {
            let t1: f64 = rng.random_range(0.0..10.0);
            let t2: f64 = t1 + rng.random_range(0.0..5.0);
            let k1 = filter_indices(&residuals, t1);
            let k2: std::collections::BTreeSet<usize> =
                filter_indices(&residuals, t2).into_iter().collect();
            if !k1.iter().all(|i| k2.contains(i)) {
                ok = false;
            }
        }
        if ok {
            Ok("kept sets nest as tau grows".into())
        } else {
            Err("a lower tau kept a sample a higher tau dropped".into())
        }
    }));

    checks.push(check("train-test-separation", {
        let train_scene = gen_scene(&config, mix_seed(seed, 4));
        let eval_scene = gen_scene(&config, mix_seed(seed, 5));
        match (train_scene, eval_scene) {
            (Ok(train), Ok(eval)) => match crate::ionosim::holdout_split(&eval, 0) {
                Ok(eval_split) => {
                    let ranges = TuningRanges {
                        num_trials: 2,
                        ..Default::default()
                    };
                    let objective =
                        scene_tuning_objective(&train, 1, PredictionMode::StandardGp, 0.2, seed);
                    match objective {
                        Ok(obj) => {
                            let _ = random_search_tune(&ranges, MethodKind::CleanOnly, &obj, seed);
                            let reads =
                                eval_split.train.read_count() + eval_split.test.read_count();
                            if reads == 0 {
                                Ok("tuning left the evaluation scene untouched".into())
                            } else {
                                Err(format!("evaluation scene read {reads} times during tuning"))
                            }
                        }
                        Err(e) => Err(format!("{e}")),
                    }
                }
                Err(e) => Err(format!("{e}")),
            },
            _ => Err("scene generation failed".into()),
        }
    }));

    checks.push(check("kernel-psd", {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 6));
        let points: Vec<[f64; 4]> = (0..200)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..1.3),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        let params = KernelParams::new([2.0, 2.0, 0.3, 1.0], 1.0).unwrap();
        let k = crate::estimators::build_kernel_matrix(&points, &params);
        if nalgebra::Cholesky::new(k).is_some() {
            Ok("jittered kernel matrix factorizes".into())
        } else {
            Err("cholesky failed on a jittered kernel matrix".into())
        }
    }));

    checks.push(check("dataset-roundtrip", {
        let path =
            std::env::temp_dir().join(format!("frr-verify-{seed}-{}.csv", std::process::id()));
        let set = LabeledSet::from_rows(
            vec![vec![0.1, -2.5], vec![3.3, 4.4], vec![1.0 / 3.0, 2.0 / 7.0]],
            vec![1.5, -0.25, 0.125],
            Provenance::Clean,
        )
        .unwrap();
        let outcome = crate::dataspace::save_labeled_set(&set, &path)
            .and_then(|_| crate::dataspace::load_labeled_set(&path));
        let _ = std::fs::remove_file(&path);
        match outcome {
            Ok(back) if back == set => Ok("bit-exact reload".into()),
            Ok(_) => Err("reload differed from the saved set".into()),
            Err(e) => Err(format!("{e}")),
        }
    }));

    checks
}

fn verify_truncation(
    instance: &LinearInstance,
    report: &crate::frr::FrrReport<LinearModel>,
) -> std::result::Result<String, String> {
    let init_err: f64 = report
        .w_init
        .weights
        .iter()
        .zip(&instance.w_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let residuals = crate::frr::compute_residuals(&report.w_init, &instance.noisy)
        .map_err(|e| format!("{e}"))?;
    for &i in &report.kept_indices {
        let x_norm: f64 = instance.noisy.samples()[i]
            .features
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let bound = residuals[i] + init_err * x_norm;
        let xi = instance.noisy_noise[i].abs();
        if xi > bound * (1.0 + 1e-12) + 1e-12 {
            return Err(format!(
                "kept sample {i}: |xi| = {xi:.4} above bound {bound:.4}"
            ));
        }
    }
    Ok(format!(
        "{} kept samples within the residual bound",
        report.kept_indices.len()
    ))
}
