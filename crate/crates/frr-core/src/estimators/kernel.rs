//! The anisotropic squared-exponential kernel over 4-D pierce-point
//! features (latitude deg, longitude deg, zenith rad, azimuth rad).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FrrError, Result};

/// Diagonal jitter added to every kernel matrix before it is factorized,
/// so coincident pierce points do not make it exactly singular.
pub const KERNEL_JITTER: f64 = 1e-8;

/// Kernel length-scale diagonal (omega_1..omega_4) and ridge weight lambda.
/// omega_1, omega_2 are in degrees^2; omega_3, omega_4 in radians^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub omega: [f64; 4],
    pub lambda: f64,
}

impl KernelParams {
    pub fn new(omega: [f64; 4], lambda: f64) -> Result<Self> {
        if omega.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(FrrError::Invalid(format!(
                "kernel omegas must be finite and > 0, got {omega:?}"
            )));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(FrrError::Invalid(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        Ok(KernelParams { omega, lambda })
    }
}

/// kappa(x, x') = exp(-(x - x')' Omega^-1 (x - x')), in (0, 1].
/// Clamped to the smallest positive double so extreme separations cannot
/// underflow out of the open interval.
pub fn kernel_eval(x: &[f64; 4], x2: &[f64; 4], params: &KernelParams) -> f64 {
    let mut q = 0.0;
    for k in 0..4 {
        let d = x[k] - x2[k];
        q += d * d / params.omega[k];
    }
    (-q).exp().max(f64::MIN_POSITIVE)
}

/// Dense kernel matrix K_ij = kappa(points[i], points[j]) with the
/// diagonal jitter already applied.
pub fn build_kernel_matrix(points: &[[f64; 4]], params: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + KERNEL_JITTER;
        for j in (i + 1)..n {
            let v = kernel_eval(&points[i], &points[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_params() -> KernelParams {
        KernelParams::new([1.0; 4], 1.0).unwrap()
    }

    #[test]
    fn coincident_points_give_one() {
        let x = [12.0, -3.0, 0.5, 2.0];
        assert_eq!(kernel_eval(&x, &x, &unit_params()), 1.0);
    }

    #[test]
    fn unit_displacement_gives_exp_minus_one() {
        let x = [1.0, 0.0, 0.0, 0.0];
        let y = [0.0, 0.0, 0.0, 0.0];
        let v = kernel_eval(&x, &y, &unit_params());
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn rejects_nonpositive_params() {
        assert!(KernelParams::new([1.0, 0.0, 1.0, 1.0], 1.0).is_err());
        assert!(KernelParams::new([1.0; 4], -2.0).is_err());
        assert!(KernelParams::new([f64::NAN, 1.0, 1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn single_point_matrix_is_one_plus_jitter() {
        let k = build_kernel_matrix(&[[0.0; 4]], &unit_params());
        assert_eq!(k.nrows(), 1);
        assert_eq!(k[(0, 0)], 1.0 + KERNEL_JITTER);
    }

    #[test]
    fn duplicate_points_have_unit_off_diagonal() {
        let p = [3.0, 4.0, 0.2, 1.0];
        let k = build_kernel_matrix(&[p, p], &unit_params());
        assert_eq!(k[(0, 1)], 1.0);
        assert_eq!(k[(1, 0)], 1.0);
    }

    #[test]
    fn matrix_matches_elementwise_oracle() {
        let points = [
            [0.0, 0.0, 0.1, 0.2],
            [1.0, -1.0, 0.3, 0.4],
            [2.5, 0.5, 0.2, 3.0],
        ];
        let params = KernelParams::new([2.0, 0.5, 0.1, 4.0], 1.0).unwrap();
        let k = build_kernel_matrix(&points, &params);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j {
                    1.0 + KERNEL_JITTER
                } else {
                    kernel_eval(&points[i], &points[j], &params)
                };
                assert_eq!(k[(i, j)], expected);
            }
        }
    }

    #[test]
    fn jittered_matrix_is_positive_definite_up_to_500_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &n in &[5usize, 60, 500] {
            let points: Vec<[f64; 4]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(0.0..1.3),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    ]
                })
                .collect();
            let params = KernelParams::new([4.0, 4.0, 0.5, 2.0], 1.0).unwrap();
            let k = build_kernel_matrix(&points, &params);
            assert!(
                nalgebra::Cholesky::new(k).is_some(),
                "cholesky failed at n={n}"
            );
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_in_unit_interval(
            a in proptest::array::uniform4(-10.0f64..10.0),
            b in proptest::array::uniform4(-10.0f64..10.0),
            omega in proptest::array::uniform4(0.01f64..100.0),
        ) {
            let params = KernelParams::new(omega, 1.0).unwrap();
            let v1 = kernel_eval(&a, &b, &params);
            let v2 = kernel_eval(&b, &a, &params);
            prop_assert_eq!(v1, v2);
            prop_assert!(v1 > 0.0 && v1 <= 1.0);
            // equals one iff the quadratic form vanishes
            let q: f64 = (0..4).map(|k| (a[k] - b[k]).powi(2) / omega[k]).sum();
            prop_assert_eq!(v1 == 1.0, q == 0.0);
        }

        #[test]
        fn widening_length_scales_increases_similarity(
            a in proptest::array::uniform4(-10.0f64..10.0),
            b in proptest::array::uniform4(-10.0f64..10.0),
            omega in proptest::array::uniform4(0.01f64..100.0),
            t in 1.0f64..50.0,
        ) {
            let narrow = KernelParams::new(omega, 1.0).unwrap();
            let wide = KernelParams::new(
                [omega[0] * t, omega[1] * t, omega[2] * t, omega[3] * t],
                1.0,
            ).unwrap();
            prop_assert!(kernel_eval(&a, &b, &wide) >= kernel_eval(&a, &b, &narrow));
        }
    }
}
