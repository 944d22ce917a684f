//! Dense linear least squares via the normal equations.

use nalgebra::{DMatrix, DVector};

use crate::dataspace::{LabeledSet, WeightVector};
use crate::error::{FrrError, Result};

use super::solve_spd;

/// A fitted linear regressor: one weight per feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum()
    }

    /// Euclidean distance to another weight vector.
    pub fn distance(&self, other: &LinearModel) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn accumulate(
    gram: &mut DMatrix<f64>,
    rhs: &mut DVector<f64>,
    set: &LabeledSet,
    weights: Option<&[f64]>,
) {
    let d = set.dimension();
    for (i, s) in set.samples().iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        if w == 0.0 {
            continue;
        }
        for r in 0..d {
            rhs[r] += w * s.features[r] * s.label;
            for c in r..d {
                gram[(r, c)] += w * s.features[r] * s.features[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            gram[(r, c)] = gram[(c, r)];
        }
    }
}

/// Ordinary least squares on one labeled set.
pub fn fit_least_squares(set: &LabeledSet) -> Result<LinearModel> {
    if set.is_empty() {
        return Err(FrrError::Empty("cannot fit least squares on an empty set"));
    }
    let d = set.dimension();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    accumulate(&mut gram, &mut rhs, set, None);
    let w = solve_spd(&gram, &rhs, "least-squares gram")?;
    Ok(LinearModel {
        weights: w.iter().copied().collect(),
    })
}

/// Least squares on one set with explicit per-sample weights.
pub fn fit_least_squares_weighted(set: &LabeledSet, weights: &[f64]) -> Result<LinearModel> {
    if set.is_empty() {
        return Err(FrrError::Empty("cannot fit least squares on an empty set"));
    }
    if weights.len() != set.len() {
        return Err(FrrError::Shape(format!(
            "{} weights for {} samples",
            weights.len(),
            set.len()
        )));
    }
    let d = set.dimension();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    accumulate(&mut gram, &mut rhs, set, Some(weights));
    let w = solve_spd(&gram, &rhs, "weighted gram")?;
    Ok(LinearModel {
        weights: w.iter().copied().collect(),
    })
}

/// Weighted least squares over a clean set (implicit unit weights) and a
/// noisy set with explicit per-sample weights `alpha`.
pub fn fit_weighted_least_squares(
    clean: &LabeledSet,
    noisy: &LabeledSet,
    alpha: &WeightVector,
) -> Result<LinearModel> {
    if clean.is_empty() {
        return Err(FrrError::Empty(
            "weighted least squares needs a nonempty clean set",
        ));
    }
    if alpha.len() != noisy.len() {
        return Err(FrrError::Shape(format!(
            "{} weights for {} noisy samples",
            alpha.len(),
            noisy.len()
        )));
    }
    if !noisy.is_empty() && noisy.dimension() != clean.dimension() {
        return Err(FrrError::Shape(format!(
            "clean dimension {} vs noisy dimension {}",
            clean.dimension(),
            noisy.dimension()
        )));
    }
    let d = clean.dimension();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    accumulate(&mut gram, &mut rhs, clean, None);
    accumulate(&mut gram, &mut rhs, noisy, Some(alpha.weights()));
    let w = solve_spd(&gram, &rhs, "weighted least-squares gram")?;
    Ok(LinearModel {
        weights: w.iter().copied().collect(),
    })
}
