//! Perron-Frobenius data of the mean matrix and second-moment recursions.

use serde::Serialize;

use crate::error::{GwError, Result};
use crate::matrix::Matrix;
use crate::model::BranchingModel;

/// Stop once successive Rayleigh quotients (and iterates) move less than this.
pub const RAYLEIGH_TOL: f64 = 1e-13;
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;

/// Perron root with right/left eigenvectors normalized so that
/// `u . 1 = 1` and `u . v = 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralData {
    pub rho: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SpectralData {
    pub fn dot_u(&self, x: &[u32]) -> f64 {
        x.iter().zip(&self.u).map(|(&xi, ui)| xi as f64 * ui).sum()
    }
}

/// Smallest n <= (d-1)^2 + 1 with every entry of M^n positive.
/// Past Wielandt's bound the matrix cannot be primitive.
pub fn primitivity_witness(m: &Matrix) -> Option<u32> {
    let d = m.dim();
    let bound = ((d - 1) * (d - 1) + 1) as u32;
    let pattern: Vec<Vec<bool>> = (0..d).map(|i| (0..d).map(|j| m[(i, j)] > 0.0).collect()).collect();
    let mut power = pattern.clone();
    for n in 1..=bound {
        if power.iter().all(|row| row.iter().all(|&b| b)) {
            return Some(n);
        }
        let mut next = vec![vec![false; d]; d];
        for i in 0..d {
            for k in 0..d {
                if power[i][k] {
                    for j in 0..d {
                        next[i][j] |= pattern[k][j];
                    }
                }
            }
        }
        power = next;
    }
    None
}

fn dominant_vector(m: &Matrix, what: &str) -> Result<(f64, Vec<f64>)> {
    let d = m.dim();
    let mut x = vec![1.0 / d as f64; d];
    let mut lambda_prev = f64::NAN;
    for _ in 0..MAX_POWER_ITERATIONS {
        let y = m.mul_vec(&x);
        let lambda = dot(&x, &y) / dot(&x, &x);
        let total: f64 = y.iter().sum();
        let y: Vec<f64> = y.iter().map(|a| a / total).collect();
        let step = y.iter().zip(&x).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        x = y;
        if (lambda - lambda_prev).abs() < RAYLEIGH_TOL * lambda.max(1.0) && step < RAYLEIGH_TOL {
            return Ok((lambda, x));
        }
        lambda_prev = lambda;
    }
    Err(GwError::IterationLimit { what: format!("power iteration ({what})"), iterations: MAX_POWER_ITERATIONS })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Perron root and eigenvectors of a nonnegative primitive matrix.
pub fn perron(m: &Matrix) -> Result<SpectralData> {
    if (0..m.dim()).any(|i| (0..m.dim()).any(|j| !(m[(i, j)] >= 0.0) || !m[(i, j)].is_finite())) {
        return Err(GwError::Spectral("matrix has negative or non-finite entries".into()));
    }
    if primitivity_witness(m).is_none() {
        return Err(GwError::Spectral("matrix is not primitive".into()));
    }
    let (_, u) = dominant_vector(m, "right")?;
    let (_, v) = dominant_vector(&m.transpose(), "left")?;
    let uv = dot(&u, &v);
    let v: Vec<f64> = v.iter().map(|a| a / uv).collect();
    // two-sided Rayleigh quotient: error quadratic in the eigenvector errors
    let rho = dot(&v, &m.mul_vec(&u)) / dot(&v, &u);
    Ok(SpectralData { rho, u, v })
}

pub fn model_spectrum(model: &BranchingModel) -> Result<SpectralData> {
    perron(&model.mean_matrix())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerGap {
    pub n: u32,
    pub gap: f64,
}

/// `|| rho^-n M^n - u^T v ||_max` for n = 1..=n_max.
pub fn mean_power_diagnostic(model: &BranchingModel, n_max: u32) -> Result<Vec<PowerGap>> {
    let m = model.mean_matrix();
    let spec = perron(&m)?;
    let limit = Matrix::outer(&spec.u, &spec.v);
    let step = m.scale(1.0 / spec.rho);
    let mut acc = Matrix::identity(m.dim());
    let mut out = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        acc = acc.mul(&step);
        out.push(PowerGap { n, gap: acc.sub(&limit).max_abs() });
    }
    Ok(out)
}

/// `C_{x,k} = (E_x[X_{k,i} X_{k,j}])_{ij}`, from the recursion
/// `C_k = M^T C_{k-1} M + sum_i Sigma^i E_x[X_{k-1,i}]`, `C_0 = x^T x`.
pub fn second_moments(model: &BranchingModel, x: &[u32], k: u32) -> Matrix {
    let m = model.mean_matrix();
    let mt = m.transpose();
    let sigmas = model.covariance_matrices();
    let xf: Vec<f64> = x.iter().map(|&a| a as f64).collect();
    let mut c = Matrix::outer(&xf, &xf);
    let mut mean = xf;
    for _ in 0..k {
        let mut noise = Matrix::zeros(m.dim());
        for (sigma, &e) in sigmas.iter().zip(&mean) {
            noise = noise.add(&sigma.scale(e));
        }
        c = mt.mul(&c).mul(&m).add(&noise);
        mean = m.vec_mul(&mean);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn check_invariants(m: &Matrix, s: &SpectralData) {
        assert!((s.u.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((dot(&s.u, &s.v) - 1.0).abs() < 1e-10);
        assert!(s.u.iter().chain(&s.v).all(|&a| a > 0.0));
        let mu = m.mul_vec(&s.u);
        let vm = m.vec_mul(&s.v);
        for i in 0..m.dim() {
            assert!((mu[i] - s.rho * s.u[i]).abs() < 1e-10);
            assert!((vm[i] - s.rho * s.v[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_rank_one() {
        let m = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let s = perron(&m).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-14);
        assert!((s.u[0] - 0.5).abs() < 1e-14 && (s.u[1] - 0.5).abs() < 1e-14);
        assert!((s.v[0] - 1.0).abs() < 1e-14 && (s.v[1] - 1.0).abs() < 1e-14);
        check_invariants(&m, &s);
        let gaps = mean_power_diagnostic(
            &crate::model::BranchingModel::from_atoms(vec![
                vec![(vec![1, 0], 0.5), (vec![0, 1], 0.5)],
                vec![(vec![1, 0], 0.5), (vec![0, 1], 0.5)],
            ])
            .unwrap(),
            5,
        )
        .unwrap();
        assert!(gaps.iter().all(|g| g.gap < 1e-14));
    }

    #[test]
    fn model_c_root_from_characteristic_polynomial() {
        let m = fixtures::model_c().mean_matrix();
        let s = perron(&m).unwrap();
        // det(M - x I) = (0.6 - x)^2 - 0.12
        let expect = (1.2 + 0.48f64.sqrt()) / 2.0;
        assert!((s.rho - expect).abs() < 1e-12);
        check_invariants(&m, &s);
        let gaps = mean_power_diagnostic(&fixtures::model_c(), 40).unwrap();
        assert!(gaps[39].gap < 1e-6);
        // second eigenvalue ratio is ~0.268, so the gap shrinks every step
        // until it reaches rounding level
        assert!(gaps.windows(2).filter(|w| w[0].gap > 1e-12).all(|w| w[1].gap <= w[0].gap));
    }

    #[test]
    fn scalar_model_a() {
        let s = model_spectrum(&fixtures::model_a()).unwrap();
        assert!((s.rho - 1.5).abs() < 1e-14);
        assert_eq!(s.u, vec![1.0]);
        assert!((s.v[0] - 1.0).abs() < 1e-14);
        let gaps = mean_power_diagnostic(&fixtures::model_a(), 10).unwrap();
        assert!(gaps.iter().all(|g| g.gap < 1e-14));
    }

    #[test]
    fn rejects_non_primitive() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(perron(&m), Err(GwError::Spectral(_))));
        assert_eq!(primitivity_witness(&m), None);
    }

    #[test]
    fn wielandt_extremal_matrix() {
        // the Wielandt matrix attains the bound (d-1)^2 + 1
        let mut m = Matrix::zeros(4);
        for i in 0..3 {
            m[(i, i + 1)] = 1.0;
        }
        m[(3, 0)] = 1.0;
        m[(3, 1)] = 1.0;
        assert_eq!(primitivity_witness(&m), Some(10));
    }

    #[test]
    fn scaling_invariance() {
        let m = fixtures::model_c().mean_matrix();
        let base = perron(&m).unwrap();
        for c in [0.1, 3.0, 17.5] {
            let s = perron(&m.scale(c)).unwrap();
            assert!((s.rho - c * base.rho).abs() < 1e-10 * c.max(1.0));
            for i in 0..2 {
                assert!((s.u[i] - base.u[i]).abs() < 1e-8);
                assert!((s.v[i] - base.v[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn second_moment_small_cases() {
        let c0 = second_moments(&fixtures::model_c(), &[2, 1], 0);
        assert_eq!(c0.rows(), vec![vec![4.0, 2.0], vec![2.0, 1.0]]);
        let b1 = second_moments(&fixtures::model_b(), &[1], 1);
        assert!((b1[(0, 0)] - 1.6).abs() < 1e-14);
    }

    #[test]
    fn second_moments_match_unrolled_sum() {
        // C_k = (M^T)^k C_0 M^k + sum_{n=1}^k (M^T)^{k-n} (sum_i Sigma^i E[X_{n-1,i}]) M^{k-n}
        let model = fixtures::model_c();
        let m = model.mean_matrix();
        let mt = m.transpose();
        let sig = model.covariance_matrices();
        let x = [2u32, 1];
        let k = 6;
        let xf = [2.0, 1.0];
        let mut expect = mt.pow(k).mul(&Matrix::outer(&xf, &xf)).mul(&m.pow(k));
        for n in 1..=k {
            let mean = m.pow(n - 1).vec_mul(&xf);
            let mut noise = Matrix::zeros(2);
            for i in 0..2 {
                noise = noise.add(&sig[i].scale(mean[i]));
            }
            expect = expect.add(&mt.pow(k - n).mul(&noise).mul(&m.pow(k - n)));
        }
        assert!(second_moments(&model, &x, k).sub(&expect).max_abs() < 1e-12);
    }

    #[test]
    fn normalized_trace_bounded_for_subcritical() {
        for model in [fixtures::model_c(), fixtures::model_e()] {
            let rho = model_spectrum(&model).unwrap().rho;
            for j in 0..model.dim() {
                let mut x = vec![0u32; model.dim()];
                x[j] = 1;
                let vals: Vec<f64> =
                    (20..60).map(|k| second_moments(&model, &x, k).trace() / rho.powi(k as i32)).collect();
                assert!(vals.windows(2).all(|w| w[1] <= 1.05 * w[0]));
            }
        }
    }
}
