//! Gaussian-process regression on double-difference observations:
//! minimize ||A f - y||^2 + lambda f' K^-1 f over per-pierce-point
//! vTEC values f.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FrrError, Result};

use super::kernel::{build_kernel_matrix, kernel_eval, KernelParams};
use super::{relative_min_eigenvalue, SOLVE_RESIDUAL_TOL};

/// Sparse observation operator: each row holds (column, coefficient)
/// pairs. Double-difference quadruplets convert into this form, but any
/// row pattern (e.g. the identity) is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    num_columns: usize,
}

impl DesignMatrix {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, num_columns: usize) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                if c >= num_columns {
                    return Err(FrrError::Shape(format!(
                        "row {r} references column {c}, matrix has {num_columns}"
                    )));
                }
                if !v.is_finite() {
                    return Err(FrrError::Invalid(format!(
                        "row {r} has non-finite coefficient"
                    )));
                }
            }
        }
        Ok(DesignMatrix { rows, num_columns })
    }

    pub fn identity(n: usize) -> Self {
        DesignMatrix {
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
            num_columns: n,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.num_columns
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// A new matrix keeping only the given rows, in the given order.
    pub fn row_subset(&self, keep: &[usize]) -> DesignMatrix {
        DesignMatrix {
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            num_columns: self.num_columns,
        }
    }

    pub fn matvec(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.num_columns {
            return Err(FrrError::Shape(format!(
                "vector length {} vs {} columns",
                f.len(),
                self.num_columns
            )));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * f[c]).sum())
            .collect())
    }

    /// A' D(w) A as a dense matrix (w defaults to all ones).
    fn gram_weighted(&self, weights: Option<&[f64]>) -> DMatrix<f64> {
        let p = self.num_columns;
        let mut gram = DMatrix::zeros(p, p);
        for (i, row) in self.rows.iter().enumerate() {
            let w = weights.map_or(1.0, |ws| ws[i]);
            if w == 0.0 {
                continue;
            }
            for &(c1, v1) in row {
                for &(c2, v2) in row {
                    gram[(c1, c2)] += w * v1 * v2;
                }
            }
        }
        gram
    }

    /// A' D(w) y.
    fn rhs_weighted(&self, y: &[f64], weights: Option<&[f64]>) -> DVector<f64> {
        let mut rhs = DVector::zeros(self.num_columns);
        for (i, row) in self.rows.iter().enumerate() {
            let w = weights.map_or(1.0, |ws| ws[i]);
            if w == 0.0 {
                continue;
            }
            for &(c, v) in row {
                rhs[c] += w * v * y[i];
            }
        }
        rhs
    }
}

/// How to turn fitted per-point vTEC values into a prediction at a new
/// pierce point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// f_pred = sum_i kappa(x_i, x_pred) f_i.
    #[default]
    Paper,
    /// Standard GP posterior mean f_pred = k(x_pred)' K^-1 f.
    StandardGp,
}

impl std::str::FromStr for PredictionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(PredictionMode::Paper),
            "standard-gp" => Ok(PredictionMode::StandardGp),
            other => Err(format!(
                "unknown prediction mode `{other}` (expected paper|standard-gp)"
            )),
        }
    }
}

/// Fitted GP state: vTEC value per training pierce point plus the kernel
/// parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    pub f: Vec<f64>,
    pub train_points: Vec<[f64; 4]>,
    pub params: KernelParams,
}

/// Objective value ||A f - y||^2_w + lambda f' K^-1 f for a candidate f.
pub fn gp_loss(
    design: &DesignMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    points: &[[f64; 4]],
    params: &KernelParams,
    f: &[f64],
) -> Result<f64> {
    let preds = design.matvec(f)?;
    let data_term: f64 = preds
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (p, t))| weights.map_or(1.0, |w| w[i]) * (p - t) * (p - t))
        .sum();
    let k = build_kernel_matrix(points, params);
    let chol = nalgebra::Cholesky::new(k).ok_or_else(|| FrrError::Singular {
        context: "kernel matrix".into(),
        condition: 0.0,
    })?;
    let fv = DVector::from_column_slice(f);
    let kinv_f = chol.solve(&fv);
    Ok(data_term + params.lambda * fv.dot(&kinv_f))
}

/// Fits the GP by solving (A'A + lambda K^-1) f = A' y.
pub fn fit_gp(
    design: &DesignMatrix,
    y: &[f64],
    points: &[[f64; 4]],
    params: &KernelParams,
) -> Result<GpModel> {
    fit_gp_weighted(design, y, None, points, params)
}

/// Weighted variant: each row's squared loss is multiplied by its weight,
/// giving (A' D(w) A + lambda K^-1) f = A' D(w) y.
pub fn fit_gp_weighted(
    design: &DesignMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    points: &[[f64; 4]],
    params: &KernelParams,
) -> Result<GpModel> {
    if points.is_empty() {
        return Err(FrrError::Empty("gp fit needs at least one pierce point"));
    }
    if design.num_columns() != points.len() {
        return Err(FrrError::Shape(format!(
            "design has {} columns for {} pierce points",
            design.num_columns(),
            points.len()
        )));
    }
    if design.num_rows() != y.len() {
        return Err(FrrError::Shape(format!(
            "{} observations for {} design rows",
            y.len(),
            design.num_rows()
        )));
    }
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(FrrError::Shape(format!(
                "{} weights for {} observations",
                w.len(),
                y.len()
            )));
        }
    }

    let kernel = build_kernel_matrix(points, params);
    let f = solve_gp_system(design, y, weights, &kernel, params.lambda)?;
    Ok(GpModel {
        f,
        train_points: points.to_vec(),
        params: *params,
    })
}

/// Core solve. The primary route multiplies through by K to avoid forming
/// K^-1: (K A'Dw A + lambda I) f = K A'Dw y. If its verified residual on
/// the original system is poor, falls back to a dense solve that builds
/// A'Dw A + lambda K^-1 explicitly.
fn solve_gp_system(
    design: &DesignMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    kernel: &DMatrix<f64>,
    lambda: f64,
) -> Result<Vec<f64>> {
    let p = kernel.nrows();
    let gram = design.gram_weighted(weights);
    let rhs = design.rhs_weighted(y, weights);
    if rhs.norm() == 0.0 {
        // (A'DwA + lambda K^-1) is positive definite, so f = 0 exactly.
        return Ok(vec![0.0; p]);
    }

    let chol_k = nalgebra::Cholesky::new(kernel.clone()).ok_or_else(|| FrrError::Singular {
        context: "jittered kernel matrix".into(),
        condition: relative_min_eigenvalue(kernel),
    })?;

    // relative residual of (A'DwA + lambda K^-1) f = rhs
    let residual_of = |f: &DVector<f64>| -> f64 {
        let r = &gram * f + lambda * chol_k.solve(f) - &rhs;
        r.norm() / rhs.norm()
    };

    let mut system = kernel * &gram;
    for i in 0..p {
        system[(i, i)] += lambda;
    }
    if let Some(lu_solution) = nalgebra::LU::new(system).solve(&(kernel * &rhs)) {
        if residual_of(&lu_solution) <= SOLVE_RESIDUAL_TOL {
            return Ok(lu_solution.iter().copied().collect());
        }
    }

    // dense fallback
    let k_inv = chol_k.inverse();
    let mut dense = gram.clone() + lambda * k_inv;
    // symmetrize against accumulated rounding before factorizing
    dense = (&dense + dense.transpose()) * 0.5;
    let solution = match nalgebra::Cholesky::new(dense.clone()) {
        Some(c) => c.solve(&rhs),
        None => nalgebra::LU::new(dense.clone())
            .solve(&rhs)
            .ok_or_else(|| FrrError::Singular {
                context: "gp system".into(),
                condition: relative_min_eigenvalue(&dense),
            })?,
    };
    let res = residual_of(&solution);
    if res > SOLVE_RESIDUAL_TOL {
        return Err(FrrError::Singular {
            context: format!("gp system: residual {res:.3e}"),
            condition: relative_min_eigenvalue(&dense),
        });
    }
    Ok(solution.iter().copied().collect())
}

/// Predicts vTEC at one pierce point.
pub fn predict_vtec(model: &GpModel, x_pred: &[f64; 4], mode: PredictionMode) -> f64 {
    predict_vtec_batch(model, std::slice::from_ref(x_pred), mode)[0]
}

/// Predicts vTEC at many pierce points, factorizing K once in
/// `StandardGp` mode.
pub fn predict_vtec_batch(model: &GpModel, points: &[[f64; 4]], mode: PredictionMode) -> Vec<f64> {
    let coeffs: Vec<f64> = match mode {
        PredictionMode::Paper => model.f.clone(),
        PredictionMode::StandardGp => {
            let k = build_kernel_matrix(&model.train_points, &model.params);
            let f = DVector::from_column_slice(&model.f);
            match nalgebra::Cholesky::new(k) {
                Some(chol) => chol.solve(&f).iter().copied().collect(),
                None => model.f.clone(),
            }
        }
    };
    points
        .iter()
        .map(|x| {
            model
                .train_points
                .iter()
                .zip(&coeffs)
                .map(|(t, c)| kernel_eval(t, x, &model.params) * c)
                .sum()
        })
        .collect()
}

/// Double-difference predictions A_pred f_pred.
pub fn predict_double_difference(a_pred: &DesignMatrix, f_pred: &[f64]) -> Result<Vec<f64>> {
    a_pred.matvec(f_pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spread_points(n: usize) -> Vec<[f64; 4]> {
        (0..n)
            .map(|i| {
                [
                    i as f64 * 3.0,
                    -(i as f64) * 2.0,
                    0.1 + 0.05 * i as f64,
                    0.3 * i as f64,
                ]
            })
            .collect()
    }

    fn quad_row(i: usize, j: usize, k: usize, l: usize) -> Vec<(usize, f64)> {
        vec![(i, 1.0), (j, -1.0), (k, 1.0), (l, -1.0)]
    }

    #[test]
    fn identity_design_with_tiny_lambda_interpolates() {
        let points = spread_points(6);
        let y: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let params = KernelParams::new([1.0; 4], 1e-12).unwrap();
        let model = fit_gp(&DesignMatrix::identity(6), &y, &points, &params).unwrap();
        for (fi, yi) in model.f.iter().zip(&y) {
            assert!((fi - yi).abs() < 1e-6, "f {fi} vs y {yi}");
        }
    }

    #[test]
    fn zero_observations_give_zero_field() {
        let points = spread_points(5);
        let design =
            DesignMatrix::new(vec![quad_row(0, 1, 2, 3), quad_row(1, 2, 3, 4)], 5).unwrap();
        let params = KernelParams::new([2.0; 4], 0.5).unwrap();
        let model = fit_gp(&design, &[0.0, 0.0], &points, &params).unwrap();
        assert_eq!(model.f, vec![0.0; 5]);
    }

    /// Independent oracle: build A'A + lambda K^-1 with explicit dense
    /// inverses and solve by nalgebra's generic inverse.
    fn dense_oracle(
        design: &DesignMatrix,
        y: &[f64],
        points: &[[f64; 4]],
        params: &KernelParams,
    ) -> Vec<f64> {
        let p = points.len();
        let mut a = DMatrix::zeros(design.num_rows(), p);
        for (i, row) in design.rows().iter().enumerate() {
            for &(c, v) in row {
                a[(i, c)] += v;
            }
        }
        let k = build_kernel_matrix(points, params);
        let k_inv = k.try_inverse().unwrap();
        let system = a.transpose() * &a + params.lambda * k_inv;
        let rhs = a.transpose() * DVector::from_column_slice(y);
        let sol = system.try_inverse().unwrap() * rhs;
        sol.iter().copied().collect()
    }

    #[test]
    fn four_point_single_row_matches_dense_oracle() {
        let points = spread_points(4);
        let design = DesignMatrix::new(vec![quad_row(0, 1, 2, 3)], 4).unwrap();
        let y = vec![1.5];
        let params = KernelParams::new([5.0, 5.0, 1.0, 1.0], 0.3).unwrap();
        let model = fit_gp(&design, &y, &points, &params).unwrap();
        let oracle = dense_oracle(&design, &y, &points, &params);
        for (a, b) in model.f.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs oracle {b}");
        }
    }

    #[test]
    fn larger_system_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<[f64; 4]> = (0..12)
            .map(|_| {
                [
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(0.0..1.2),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..30)
            .map(|_| {
                let mut idx: Vec<usize> = (0..12).collect();
                for i in 0..4 {
                    let j = rng.random_range(i..12);
                    idx.swap(i, j);
                }
                quad_row(idx[0], idx[1], idx[2], idx[3])
            })
            .collect();
        let design = DesignMatrix::new(rows, 12).unwrap();
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let params = KernelParams::new([3.0, 3.0, 0.4, 2.0], 0.05).unwrap();
        let model = fit_gp(&design, &y, &points, &params).unwrap();
        let oracle = dense_oracle(&design, &y, &points, &params);
        for (a, b) in model.f.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs oracle {b}");
        }
    }

    #[test]
    fn solution_is_local_minimum_under_random_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points = spread_points(6);
        let design = DesignMatrix::new(
            vec![
                quad_row(0, 1, 2, 3),
                quad_row(2, 3, 4, 5),
                quad_row(0, 2, 4, 1),
            ],
            6,
        )
        .unwrap();
        let y = vec![0.8, -1.1, 0.3];
        let params = KernelParams::new([4.0; 4], 0.7).unwrap();
        let model = fit_gp(&design, &y, &points, &params).unwrap();
        let base = gp_loss(&design, &y, None, &points, &params, &model.f).unwrap();
        for _ in 0..100 {
            let perturbed: Vec<f64> = model
                .f
                .iter()
                .map(|v| v + rng.random_range(-1.0..1.0) * 1e-3)
                .collect();
            let loss = gp_loss(&design, &y, None, &points, &params, &perturbed).unwrap();
            assert!(base <= loss + 1e-12, "base {base} > perturbed {loss}");
        }
    }

    #[test]
    fn weighted_rows_match_duplicated_rows() {
        // weight 2 on a row is the same normal equations as listing it twice
        let points = spread_points(5);
        let row_a = quad_row(0, 1, 2, 3);
        let row_b = quad_row(1, 2, 3, 4);
        let design = DesignMatrix::new(vec![row_a.clone(), row_b.clone()], 5).unwrap();
        let doubled = DesignMatrix::new(vec![row_a.clone(), row_b.clone(), row_b], 5).unwrap();
        let params = KernelParams::new([2.0; 4], 0.2).unwrap();
        let weighted =
            fit_gp_weighted(&design, &[1.0, -0.5], Some(&[1.0, 2.0]), &points, &params).unwrap();
        let stacked = fit_gp(&doubled, &[1.0, -0.5, -0.5], &points, &params).unwrap();
        for (a, b) in weighted.f.iter().zip(&stacked.f) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_isolated_point_recovers_field_value() {
        // far-separated points: kernel values between distinct points ~ 0
        let points: Vec<[f64; 4]> = (0..4).map(|i| [i as f64 * 100.0, 0.0, 0.5, 1.0]).collect();
        let params = KernelParams::new([1.0; 4], 1.0).unwrap();
        let model = GpModel {
            f: vec![2.0, -3.0, 5.0, 7.0],
            train_points: points.clone(),
            params,
        };
        let v = predict_vtec(&model, &points[2], PredictionMode::Paper);
        assert!((v - 5.0).abs() < 1e-10);
    }

    #[test]
    fn predict_zero_field_is_zero() {
        let points = spread_points(3);
        let params = KernelParams::new([1.0; 4], 1.0).unwrap();
        let model = GpModel {
            f: vec![0.0; 3],
            train_points: points,
            params,
        };
        assert_eq!(
            predict_vtec(&model, &[1.0, 1.0, 0.2, 0.1], PredictionMode::Paper),
            0.0
        );
        assert_eq!(
            predict_vtec(&model, &[1.0, 1.0, 0.2, 0.1], PredictionMode::StandardGp),
            0.0
        );
    }

    #[test]
    fn predict_matches_direct_kernel_sum() {
        let points = spread_points(3);
        let params = KernelParams::new([6.0, 4.0, 0.8, 2.0], 1.0).unwrap();
        let model = GpModel {
            f: vec![1.0, -2.0, 0.5],
            train_points: points.clone(),
            params,
        };
        let x = [1.4, -0.8, 0.23, 0.5];
        let expected: f64 = points
            .iter()
            .zip(&model.f)
            .map(|(p, f)| kernel_eval(p, &x, &params) * f)
            .sum();
        assert_eq!(predict_vtec(&model, &x, PredictionMode::Paper), expected);
    }

    #[test]
    fn standard_mode_interpolates_at_train_points() {
        let points = spread_points(5);
        let params = KernelParams::new([2.0; 4], 1.0).unwrap();
        let f = vec![1.0, 2.0, -1.0, 0.5, 3.0];
        let model = GpModel {
            f: f.clone(),
            train_points: points.clone(),
            params,
        };
        let preds = predict_vtec_batch(&model, &points, PredictionMode::StandardGp);
        for (p, expected) in preds.iter().zip(&f) {
            assert!((p - expected).abs() < 1e-5, "{p} vs {expected}");
        }
    }

    #[test]
    fn double_difference_annihilates_constants() {
        let design =
            DesignMatrix::new(vec![quad_row(0, 1, 2, 3), quad_row(3, 2, 1, 0)], 4).unwrap();
        let preds = predict_double_difference(&design, &[7.0; 4]).unwrap();
        assert_eq!(preds, vec![0.0, 0.0]);
    }

    #[test]
    fn double_difference_direct_arithmetic() {
        let design = DesignMatrix::new(vec![quad_row(0, 1, 2, 3)], 4).unwrap();
        let preds = predict_double_difference(&design, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(preds, vec![1.0 - 2.0 + 3.0 - 4.0]);
    }

    #[test]
    fn double_difference_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let design = DesignMatrix::new(
            (0..10)
                .map(|_| {
                    let mut idx: Vec<usize> = (0..8).collect();
                    for i in 0..4 {
                        let j = rng.random_range(i..8);
                        idx.swap(i, j);
                    }
                    quad_row(idx[0], idx[1], idx[2], idx[3])
                })
                .collect(),
            8,
        )
        .unwrap();
        let f: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut dense = DMatrix::<f64>::zeros(10, 8);
        for (i, row) in design.rows().iter().enumerate() {
            for &(c, v) in row {
                dense[(i, c)] += v;
            }
        }
        let expected: DVector<f64> = &dense * DVector::from_column_slice(&f);
        let got = predict_double_difference(&design, &f).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let design = DesignMatrix::new(vec![quad_row(0, 1, 2, 3)], 4).unwrap();
        assert!(matches!(
            predict_double_difference(&design, &[1.0; 3]),
            Err(FrrError::Shape(_))
        ));
    }
}
