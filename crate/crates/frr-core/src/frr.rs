//! The Filter-Reweight-Retrain meta-algorithm.
//!
//! One pass: fit an initial estimator on the clean set, score every noisy
//! sample by its absolute residual, drop samples above the threshold
//! tau = c1 * mean(r), weight the survivors by a bounded scalar map of
//! their own residual, and retrain once on clean (weight 1) plus the
//! reweighted survivors. The pass never iterates: retraining a second
//! time breaks the independence the filtering step relies on.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::dataspace::{LabeledSet, Provenance, WeightVector};
use crate::error::{FrrError, Result};
use crate::estimators::{
    fit_gp, fit_gp_weighted, fit_least_squares, fit_weighted_least_squares, DesignMatrix, GpModel,
    KernelParams, LinearModel,
};

/// Reweighting configuration. The weight map is a pure scalar function
/// of a single residual; its signature cannot observe other samples'
/// residuals, and its maximum is the ceiling `c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightScheme {
    /// Filter multiplier: tau = c1 * mean residual.
    pub c1: f64,
    /// Weight ceiling; the exponential map attains it at r = 0.
    pub c2: f64,
    /// Decay scale of the exponential map. `None` resolves to the median
    /// retained residual at fit time.
    pub c3: Option<f64>,
    pub kind: ReweightKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightKind {
    /// alpha = c2 * exp(-r / c3)
    Exponential,
    /// alpha = c2 regardless of the residual
    Constant,
}

impl ReweightScheme {
    pub fn exponential(c1: f64, c2: f64, c3: f64) -> Self {
        ReweightScheme {
            c1,
            c2,
            c3: Some(c3),
            kind: ReweightKind::Exponential,
        }
    }

    /// Exponential map whose decay scale is resolved to the median
    /// retained residual inside `frr_fit`.
    pub fn exponential_auto(c1: f64, c2: f64) -> Self {
        ReweightScheme {
            c1,
            c2,
            c3: None,
            kind: ReweightKind::Exponential,
        }
    }

    pub fn constant(c1: f64, c2: f64) -> Self {
        ReweightScheme {
            c1,
            c2,
            c3: None,
            kind: ReweightKind::Constant,
        }
    }

    /// The scalar weight map h(r). Requires a resolved decay scale for the
    /// exponential kind.
    pub fn weight(&self, residual: f64) -> f64 {
        debug_assert!(residual >= 0.0);
        match self.kind {
            ReweightKind::Constant => self.c2,
            ReweightKind::Exponential => {
                let c3 = self
                    .c3
                    .expect("exponential scheme used before its decay scale was resolved");
                // clamped into (0, c2] so huge residuals cannot underflow to 0
                (self.c2 * (-residual / c3).exp())
                    .max(f64::MIN_POSITIVE)
                    .min(self.c2)
            }
        }
    }

    /// A copy with `c3` filled in from `fallback` when unset.
    fn resolved(&self, fallback: f64) -> ReweightScheme {
        let mut out = *self;
        if out.kind == ReweightKind::Exponential && out.c3.is_none() {
            out.c3 = Some(if fallback > 0.0 { fallback } else { 1.0 });
        }
        out
    }
}

/// Scalar reweighting map: h(r) for one residual.
pub fn reweight(residual: f64, scheme: &ReweightScheme) -> f64 {
    scheme.weight(residual)
}

/// Checks the two rules every admissible scheme must satisfy: the weight
/// map is a scalar function of one residual (guaranteed by the signature
/// of [`reweight`]) and its maximum is finite. A non-finite or
/// nonpositive ceiling would let a single sample dominate the retrain.
pub fn validate_scheme(scheme: &ReweightScheme) -> Result<()> {
    if !scheme.c2.is_finite() || scheme.c2 <= 0.0 {
        return Err(FrrError::UnboundedWeight(format!(
            "weight ceiling c2 must be finite and > 0, got {}",
            scheme.c2
        )));
    }
    if !scheme.c1.is_finite() || scheme.c1 <= 0.0 {
        return Err(FrrError::Invalid(format!(
            "filter multiplier c1 must be finite and > 0, got {}",
            scheme.c1
        )));
    }
    if let Some(c3) = scheme.c3 {
        if !c3.is_finite() || c3 <= 0.0 {
            return Err(FrrError::Invalid(format!(
                "decay scale c3 must be finite and > 0, got {c3}"
            )));
        }
    }
    Ok(())
}

/// Absolute residuals |<w, x_i> - y_i| of a linear model on a set.
pub fn compute_residuals(model: &LinearModel, noisy: &LabeledSet) -> Result<Vec<f64>> {
    if model.dim() != noisy.dimension() {
        return Err(FrrError::Shape(format!(
            "model dimension {} vs set dimension {}",
            model.dim(),
            noisy.dimension()
        )));
    }
    Ok(noisy
        .samples()
        .iter()
        .map(|s| (model.predict(&s.features) - s.label).abs())
        .collect())
}

/// tau = c1 * mean residual.
pub fn compute_tau(residuals: &[f64], c1: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(FrrError::Empty("tau needs at least one residual"));
    }
    Ok(c1 * residuals.iter().sum::<f64>() / residuals.len() as f64)
}

/// Keeps exactly the samples with r_i <= tau (boundary inclusive),
/// preserving order.
pub fn filter(noisy: &LabeledSet, residuals: &[f64], tau: f64) -> Result<(LabeledSet, Vec<usize>)> {
    if residuals.len() != noisy.len() {
        return Err(FrrError::Shape(format!(
            "{} residuals for {} samples",
            residuals.len(),
            noisy.len()
        )));
    }
    let kept: Vec<usize> = residuals
        .iter()
        .enumerate()
        .filter(|&(_, &r)| r <= tau)
        .map(|(i, _)| i)
        .collect();
    let filtered = noisy.subset(&kept, Provenance::FilteredNoisy)?;
    Ok((filtered, kept))
}

/// Index filter over a residual vector (for bases whose observations are
/// not labeled sets).
pub fn filter_indices(residuals: &[f64], tau: f64) -> Vec<usize> {
    residuals
        .iter()
        .enumerate()
        .filter(|&(_, &r)| r <= tau)
        .map(|(i, _)| i)
        .collect()
}

/// One full FRR pass over any base estimator.
pub trait FrrBase {
    type Model;

    /// Fit on the clean data alone.
    fn fit_clean(&self) -> Result<Self::Model>;
    /// Absolute residuals of the model on every noisy observation.
    fn noisy_residuals(&self, model: &Self::Model) -> Result<Vec<f64>>;
    /// Retrain on clean (weight 1) plus the kept noisy observations with
    /// the given weights, aligned with `kept`.
    fn retrain(&self, kept: &[usize], weights: &[f64]) -> Result<Self::Model>;
    fn noisy_len(&self) -> usize;
}

/// Report of one FRR pass.
#[derive(Debug, Clone)]
pub struct FrrReport<M> {
    pub w_init: M,
    pub tau: f64,
    pub kept_count: usize,
    pub dropped_count: usize,
    pub kept_indices: Vec<usize>,
    /// Weights of the kept noisy observations, bounded by the scheme's c2.
    pub weights: WeightVector,
    pub final_model: M,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs Filter-Reweight-Retrain once over the given base estimator.
///
/// The noisy set may be empty, in which case the retrain degenerates to
/// the clean fit. The base is retrained exactly once per call.
pub fn frr_fit<B: FrrBase>(base: &B, scheme: &ReweightScheme) -> Result<FrrReport<B::Model>> {
    validate_scheme(scheme)?;
    let w_init = base.fit_clean()?;

    if base.noisy_len() == 0 {
        let final_model = base.retrain(&[], &[])?;
        return Ok(FrrReport {
            w_init,
            tau: 0.0,
            kept_count: 0,
            dropped_count: 0,
            kept_indices: vec![],
            weights: WeightVector::new(vec![], scheme.c2)?,
            final_model,
        });
    }

    let residuals = base.noisy_residuals(&w_init)?;
    let tau = compute_tau(&residuals, scheme.c1)?;
    let kept_indices = filter_indices(&residuals, tau);
    let dropped_count = residuals.len() - kept_indices.len();

    let kept_residuals: Vec<f64> = kept_indices.iter().map(|&i| residuals[i]).collect();
    let resolved = scheme.resolved(median_of(kept_residuals.clone()));
    let weights_raw: Vec<f64> = kept_residuals.iter().map(|&r| resolved.weight(r)).collect();
    let weights = WeightVector::new(weights_raw, scheme.c2)?;

    let final_model = base.retrain(&kept_indices, weights.weights())?;
    Ok(FrrReport {
        w_init,
        tau,
        kept_count: kept_indices.len(),
        dropped_count,
        kept_indices,
        weights,
        final_model,
    })
}

/// Wrapper that counts fit calls, used to check the single-pass contract.
pub struct CountingBase<'a, B: FrrBase> {
    inner: &'a B,
    pub clean_fits: AtomicUsize,
    pub retrains: AtomicUsize,
}

impl<'a, B: FrrBase> CountingBase<'a, B> {
    pub fn new(inner: &'a B) -> Self {
        CountingBase {
            inner,
            clean_fits: AtomicUsize::new(0),
            retrains: AtomicUsize::new(0),
        }
    }
}

impl<B: FrrBase> FrrBase for CountingBase<'_, B> {
    type Model = B::Model;

    fn fit_clean(&self) -> Result<Self::Model> {
        self.clean_fits.fetch_add(1, Ordering::Relaxed);
        self.inner.fit_clean()
    }

    fn noisy_residuals(&self, model: &Self::Model) -> Result<Vec<f64>> {
        self.inner.noisy_residuals(model)
    }

    fn retrain(&self, kept: &[usize], weights: &[f64]) -> Result<Self::Model> {
        self.retrains.fetch_add(1, Ordering::Relaxed);
        self.inner.retrain(kept, weights)
    }

    fn noisy_len(&self) -> usize {
        self.inner.noisy_len()
    }
}

/// Linear base: least squares on labeled sets.
pub struct LinearFrrProblem<'a> {
    pub clean: &'a LabeledSet,
    pub noisy: &'a LabeledSet,
}

impl FrrBase for LinearFrrProblem<'_> {
    type Model = LinearModel;

    fn fit_clean(&self) -> Result<LinearModel> {
        fit_least_squares(self.clean)
    }

    fn noisy_residuals(&self, model: &LinearModel) -> Result<Vec<f64>> {
        compute_residuals(model, self.noisy)
    }

    fn retrain(&self, kept: &[usize], weights: &[f64]) -> Result<LinearModel> {
        let filtered = self.noisy.subset(kept, Provenance::FilteredNoisy)?;
        let alpha = WeightVector::new(
            weights.to_vec(),
            weights.iter().cloned().fold(1.0, f64::max),
        )?;
        fit_weighted_least_squares(self.clean, &filtered, &alpha)
    }

    fn noisy_len(&self) -> usize {
        self.noisy.len()
    }
}

/// Runs FRR with the linear least-squares base.
pub fn frr_fit_linear(
    clean: &LabeledSet,
    noisy: &LabeledSet,
    scheme: &ReweightScheme,
) -> Result<FrrReport<LinearModel>> {
    frr_fit(&LinearFrrProblem { clean, noisy }, scheme)
}

/// GP base: double-difference rows split into clean and noisy groups over
/// a shared pierce-point list. Residuals come from applying the clean-fit
/// field to the noisy rows; the retrain multiplies each kept noisy row's
/// squared loss by its weight.
pub struct GpFrrProblem<'a> {
    pub points: &'a [[f64; 4]],
    pub clean_design: &'a DesignMatrix,
    pub clean_y: &'a [f64],
    pub noisy_design: &'a DesignMatrix,
    pub noisy_y: &'a [f64],
    pub params: KernelParams,
}

impl FrrBase for GpFrrProblem<'_> {
    type Model = GpModel;

    fn fit_clean(&self) -> Result<GpModel> {
        fit_gp(self.clean_design, self.clean_y, self.points, &self.params)
    }

    fn noisy_residuals(&self, model: &GpModel) -> Result<Vec<f64>> {
        let preds = self.noisy_design.matvec(&model.f)?;
        Ok(preds
            .iter()
            .zip(self.noisy_y)
            .map(|(p, y)| (p - y).abs())
            .collect())
    }

    fn retrain(&self, kept: &[usize], weights: &[f64]) -> Result<GpModel> {
        let mut rows = self.clean_design.rows().to_vec();
        let mut y: Vec<f64> = self.clean_y.to_vec();
        let mut w = vec![1.0; y.len()];
        for (&i, &wi) in kept.iter().zip(weights) {
            rows.push(self.noisy_design.rows()[i].clone());
            y.push(self.noisy_y[i]);
            w.push(wi);
        }
        let design = DesignMatrix::new(rows, self.points.len())?;
        fit_gp_weighted(&design, &y, Some(&w), self.points, &self.params)
    }

    fn noisy_len(&self) -> usize {
        self.noisy_y.len()
    }
}

/// Runs FRR with the GP base.
pub fn frr_fit_gp(
    problem: &GpFrrProblem<'_>,
    scheme: &ReweightScheme,
) -> Result<FrrReport<GpModel>> {
    frr_fit(problem, scheme)
}

/// Plug-in sample estimates of the weighted second-moment quantities that
/// drive the recovery bound. Diagnostic only: no accuracy claim is made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostics {
    /// Spectral norm of (1/m) sum_i r_i^2 alpha_i^2 x_i x_i'.
    pub sigma1_bar: f64,
    /// (1/m) sum_i alpha_i ||x_i||^2.
    pub alpha_bar: f64,
}

pub fn empirical_moment_diagnostics(
    noisy: &LabeledSet,
    kept_indices: &[usize],
    residuals: &[f64],
    weights: &WeightVector,
) -> Result<MomentDiagnostics> {
    if kept_indices.len() != weights.len() {
        return Err(FrrError::Shape(format!(
            "{} kept indices vs {} weights",
            kept_indices.len(),
            weights.len()
        )));
    }
    if kept_indices.is_empty() {
        return Ok(MomentDiagnostics {
            sigma1_bar: 0.0,
            alpha_bar: 0.0,
        });
    }
    let d = noisy.dimension();
    let mut second = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut alpha_bar = 0.0;
    for (&i, &a) in kept_indices.iter().zip(weights.weights()) {
        let x = &noisy.samples()[i].features;
        let r = residuals[i];
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        alpha_bar += a * norm2;
        let scale = r * r * a * a;
        for p in 0..d {
            for q in 0..d {
                second[(p, q)] += scale * x[p] * x[q];
            }
        }
    }
    let m = kept_indices.len() as f64;
    second /= m;
    let sigma1_bar = second
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .sqrt();
    Ok(MomentDiagnostics {
        sigma1_bar,
        alpha_bar: alpha_bar / m,
    })
}
