//! Extinction probabilities and the associated (exponentially tilted)
//! process `p̄_i(k) = a^k p_i(k) / f_i(a)`.

use serde::Serialize;

use crate::error::{GwError, Result};
use crate::matrix::Matrix;
use crate::model::{lattice_pow, BranchingModel};
use crate::spectral::{model_spectrum, primitivity_witness};

pub const EXTINCTION_STEP_TOL: f64 = 1e-14;
pub const EXTINCTION_RESIDUAL_TOL: f64 = 1e-12;
pub const MAX_EXTINCTION_ITERATIONS: usize = 100_000;
pub const CRITICAL_TOL: f64 = 1e-10;
pub const DEFAULT_BRACKET: (f64, f64) = (1e-3, 10.0);
pub const GRID_POINTS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TiltVector {
    pub a: Vec<f64>,
}

impl TiltVector {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(GwError::Domain(format!("tilt vector must be positive and finite, got {a:?}")));
        }
        Ok(TiltVector { a })
    }

    pub fn scalar(d: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; d])
    }

    pub fn neutral(d: usize) -> Self {
        TiltVector { a: vec![1.0; d] }
    }

    pub fn is_neutral(&self) -> bool {
        self.a.iter().all(|&x| x == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtinctionData {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Minimal fixed point of f in `[0,1]^d`.
///
/// For a nonsingular positive regular model with `rho <= 1` the answer is
/// `q = 1`, returned directly: iterating from 0 only creeps towards 1 in
/// the critical case.
pub fn extinction_vector(model: &BranchingModel) -> Result<ExtinctionData> {
    let d = model.dim();
    let m = model.mean_matrix();
    let diag = model.validate();
    if diag.nonsingular && primitivity_witness(&m).is_some() && model_spectrum(model)?.rho <= 1.0 + 1e-12 {
        let ones = vec![1.0; d];
        return Ok(ExtinctionData { residual: sup_diff(&model.evaluate(&ones), &ones), q: ones, iterations: 0 });
    }
    let mut q = vec![0.0; d];
    for it in 1..=MAX_EXTINCTION_ITERATIONS {
        let next = model.evaluate(&q);
        let step = sup_diff(&next, &q);
        q = next;
        if step < EXTINCTION_STEP_TOL {
            q = newton_polish(model, q);
            let residual = sup_diff(&model.evaluate(&q), &q);
            if let Some(i) = q.iter().position(|&x| x <= 0.0) {
                return Err(GwError::ZeroExtinction { type_index: i });
            }
            if residual > EXTINCTION_RESIDUAL_TOL {
                return Err(GwError::Inconsistent(format!("fixed-point residual {residual:e} after convergence")));
            }
            return Ok(ExtinctionData { q, iterations: it, residual });
        }
    }
    Err(GwError::IterationLimit { what: "extinction fixed point".into(), iterations: MAX_EXTINCTION_ITERATIONS })
}

/// `df_i/dr_j` at r.
fn jacobian(model: &BranchingModel, r: &[f64]) -> Matrix {
    let d = model.dim();
    let mut j = Matrix::zeros(d);
    for (i, law) in model.laws().iter().enumerate() {
        for (k, p) in law.atoms() {
            for c in 0..d {
                if k[c] > 0 {
                    let mut km = k.clone();
                    km[c] -= 1;
                    j[(i, c)] += p * k[c] as f64 * lattice_pow(r, &km);
                }
            }
        }
    }
    j
}

/// Newton steps on `f(q) - q = 0`, kept only while the residual shrinks.
fn newton_polish(model: &BranchingModel, mut q: Vec<f64>) -> Vec<f64> {
    let mut residual = sup_diff(&model.evaluate(&q), &q);
    for _ in 0..3 {
        let a = jacobian(model, &q).sub(&Matrix::identity(model.dim()));
        let g: Vec<f64> = model.evaluate(&q).iter().zip(&q).map(|(f, x)| f - x).collect();
        let Some(delta) = a.solve(&g) else { break };
        let next: Vec<f64> = q.iter().zip(&delta).map(|(x, dx)| x - dx).collect();
        let r = sup_diff(&model.evaluate(&next), &next);
        if !(r < residual) || next.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            break;
        }
        q = next;
        residual = r;
    }
    q
}

/// The associated process with respect to `a`.
pub fn associate(model: &BranchingModel, a: &TiltVector) -> Result<BranchingModel> {
    if a.a.len() != model.dim() {
        return Err(GwError::Domain(format!("tilt has {} coordinates, model has {}", a.a.len(), model.dim())));
    }
    let fa = model.evaluate(&a.a);
    let laws = model
        .laws()
        .iter()
        .zip(&fa)
        .map(|(law, &f)| law.atoms().iter().map(|(k, p)| (k.clone(), lattice_pow(&a.a, k) * p / f)).collect())
        .collect();
    BranchingModel::from_atoms(laws)
}

/// Perron root of the associated process.
pub fn tilted_rho(model: &BranchingModel, a: &TiltVector) -> Result<f64> {
    Ok(model_spectrum(&associate(model, a)?)?.rho)
}

/// A tilt `c * 1` making the associated process critical.
pub fn critical_tilt(model: &BranchingModel) -> Result<TiltVector> {
    critical_tilt_in(model, DEFAULT_BRACKET)
}

pub fn critical_tilt_in(model: &BranchingModel, (lo, hi): (f64, f64)) -> Result<TiltVector> {
    let d = model.dim();
    if !(lo > 0.0 && hi > lo) {
        return Err(GwError::Domain(format!("invalid tilt bracket [{lo}, {hi}]")));
    }
    let g = |c: f64| -> Result<f64> { Ok(tilted_rho(model, &TiltVector::scalar(d, c)?)? - 1.0) };
    if (lo..=hi).contains(&1.0) && g(1.0)?.abs() <= CRITICAL_TOL {
        return TiltVector::scalar(d, 1.0);
    }
    let (mut a, mut b) = if d == 1 {
        (lo, hi)
    } else {
        let ratio = (hi / lo).powf(1.0 / (GRID_POINTS - 1) as f64);
        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo * ratio.powi(i as i32)).collect();
        let vals = grid.iter().map(|&c| g(c)).collect::<Result<Vec<_>>>()?;
        if let Some(i) = vals.iter().position(|v| v.abs() <= CRITICAL_TOL) {
            return TiltVector::scalar(d, grid[i]);
        }
        match (0..GRID_POINTS - 1).find(|&i| vals[i].signum() != vals[i + 1].signum()) {
            Some(i) => (grid[i], grid[i + 1]),
            None => return Err(GwError::NoCriticalTilt { lo, hi }),
        }
    };
    let (ga, gb) = (g(a)?, g(b)?);
    if ga.signum() == gb.signum() {
        return Err(GwError::NoCriticalTilt { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let gm = g(mid)?;
        if gm.abs() <= CRITICAL_TOL * 1e-3 || mid == a || mid == b {
            a = mid;
            b = mid;
            break;
        }
        if gm.signum() == ga.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    let c = 0.5 * (a + b);
    let residual = g(c)?;
    if residual.abs() > CRITICAL_TOL {
        return Err(GwError::Inconsistent(format!("bisection ended with |rho_bar - 1| = {:e}", residual.abs())));
    }
    TiltVector::scalar(d, c)
}

/// Checks that a user-supplied tilt is critical; returns `rho_bar`.
pub fn verify_critical(model: &BranchingModel, a: &TiltVector) -> Result<f64> {
    let rho = tilted_rho(model, a)?;
    if (rho - 1.0).abs() > CRITICAL_TOL {
        return Err(GwError::Inconsistent(format!("tilt {:?} gives rho_bar = {rho}, not 1", a.a)));
    }
    Ok(rho)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubcriticalityReport {
    pub rho: f64,
    pub q: Vec<f64>,
    /// Perron root of the process tilted by q (absent when skipped).
    pub rho_bar: Option<f64>,
    pub note: String,
}

/// The process tilted by q must be subcritical when the original one is
/// supercritical.
pub fn subcriticality_check(model: &BranchingModel) -> Result<SubcriticalityReport> {
    let rho = model_spectrum(model)?.rho;
    let q = extinction_vector(model)?.q;
    if rho <= 1.0 {
        return Ok(SubcriticalityReport {
            rho,
            q,
            rho_bar: None,
            note: "not supercritical: q = 1 and the tilt is neutral".into(),
        });
    }
    let rho_bar = tilted_rho(model, &TiltVector::new(q.clone())?)?;
    if rho_bar >= 1.0 {
        return Err(GwError::Inconsistent(format!("process tilted by q has rho_bar = {rho_bar} >= 1")));
    }
    Ok(SubcriticalityReport { rho, q, rho_bar: Some(rho_bar), note: "tilted by q".into() })
}
