use serde::Serialize;

use crate::error::{GwError, Result};
use crate::lattice::{push_forward, LatticeArray, LatticeBox, TransitionKernel};
use crate::model::{BranchingModel, State};
use crate::spectral::{model_spectrum, SpectralData};
use crate::tilt::{associate, TiltVector};

pub const ROW_SUM_TOL: f64 = 1e-8;

/// `Q_1(x, y) = (1/rho̅) (y.ū / x.ū) P̄_1(x, y)` on the nonzero states of a box.
#[derive(Clone, Debug)]
pub struct QKernel {
    pub tilted: BranchingModel,
    pub rho_bar: f64,
    pub u_bar: Vec<f64>,
    pub bx: LatticeBox,
    /// Indexed by box index; row 0 (the zero state) is empty.
    pub rows: Vec<QRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QRow {
    pub entries: Vec<(usize, f64)>,
    pub retained: f64,
    /// Q-mass of transitions leaving the box.
    pub overflow: f64,
}

fn dot(x: &[u32], u: &[f64]) -> f64 {
    x.iter().zip(u).map(|(&a, b)| a as f64 * b).sum()
}

pub fn q_kernel(model: &BranchingModel, a: &TiltVector, bx: &LatticeBox) -> Result<QKernel> {
    let tilted = associate(model, a)?;
    let spec = model_spectrum(&tilted)?;
    let kernel = TransitionKernel::build(&tilted, bx)?;
    let mut rows = Vec::with_capacity(bx.len());
    rows.push(QRow { entries: Vec::new(), retained: 0.0, overflow: 0.0 });
    for idx in 1..bx.len() {
        let x = bx.state(idx);
        let hx = spec.rho * dot(&x, &spec.u);
        let prow = &kernel.rows[idx];
        let entries: Vec<(usize, f64)> = prow
            .entries
            .iter()
            .filter(|(j, _)| *j != 0)
            .map(|&(j, p)| (j, p * dot(&bx.state(j), &spec.u) / hx))
            .collect();
        let retained: f64 = entries.iter().map(|e| e.1).sum();
        let overflow = prow.overflow_moment.iter().zip(&spec.u).map(|(m, u)| m * u).sum::<f64>() / hx;
        if (retained + overflow - 1.0).abs() > ROW_SUM_TOL {
            return Err(GwError::Truncation { lost: (retained + overflow - 1.0).abs(), tolerance: ROW_SUM_TOL });
        }
        rows.push(QRow { entries, retained, overflow });
    }
    Ok(QKernel { tilted, rho_bar: spec.rho, u_bar: spec.u, bx: bx.clone(), rows })
}

impl QKernel {
    pub fn get(&self, x: &[u32], y: &[u32]) -> f64 {
        match (self.bx.index(x), self.bx.index(y)) {
            (Some(i), Some(j)) => self.rows[i].entries.iter().find(|e| e.0 == j).map_or(0.0, |e| e.1),
            _ => 0.0,
        }
    }

    /// Largest `|retained - 1|` over rows whose one-step reach fits in the box.
    pub fn max_contained_row_error(&self) -> f64 {
        self.rows
            .iter()
            .skip(1)
            .filter(|r| r.overflow == 0.0)
            .map(|r| (r.retained - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|retained + overflow - 1|` over all rows.
    pub fn max_row_error(&self) -> f64 {
        self.rows.iter().skip(1).map(|r| (r.retained + r.overflow - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn left_apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bx.len()];
        for (w, row) in mu.iter().zip(&self.rows) {
            for &(j, q) in &row.entries {
                out[j] += w * q;
            }
        }
        out
    }

    pub fn nonzero_states(&self) -> impl Iterator<Item = State> + '_ {
        (1..self.bx.len()).map(|i| self.bx.state(i))
    }
}

/// `mu Q` without materialising Q: `(y.ū/rho̅) sum_x mu(x)/(x.ū) P̄(x,y)`.
pub fn q_step(tilted: &BranchingModel, spec: &SpectralData, mu: &LatticeArray) -> LatticeArray {
    let bx = mu.lattice_box().clone();
    let mut scaled = mu.clone();
    for (i, v) in scaled.values_mut().iter_mut().enumerate() {
        if i == 0 {
            *v = 0.0;
        } else if *v != 0.0 {
            *v /= dot(&bx.state(i), &spec.u);
        }
    }
    let mut out = push_forward(tilted, &scaled);
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v = if i == 0 { 0.0 } else { *v * dot(&bx.state(i), &spec.u) / spec.rho };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::tilt::extinction_vector;

    #[test]
    fn model_b_rows() {
        let b = fixtures::model_b();
        let bx = LatticeBox::cube(1, 10).unwrap();
        let q = q_kernel(&b, &TiltVector::neutral(1), &bx).unwrap();
        assert!((q.get(&[1], &[1]) - 0.4).abs() < 1e-15);
        assert!((q.get(&[1], &[2]) - 0.6).abs() < 1e-15);
        assert_eq!(q.get(&[1], &[0]), 0.0);
        assert!(q.max_contained_row_error() < 1e-12);
        assert!(q.max_row_error() < 1e-8);
    }

    #[test]
    fn model_a_tilted_by_q() {
        let a = fixtures::model_a();
        let qv = extinction_vector(&a).unwrap().q;
        let bx = LatticeBox::cube(1, 12).unwrap();
        let q = q_kernel(&a, &TiltVector::new(qv).unwrap(), &bx).unwrap();
        assert!((q.get(&[1], &[2]) - 1.0).abs() < 1e-14);
        assert!((q.rho_bar - 0.5).abs() < 1e-14, "{}", q.rho_bar);
    }

    #[test]
    fn model_c_rows_and_push_agree() {
        let c = fixtures::model_c();
        let bx = LatticeBox::cube(2, 8).unwrap();
        let q = q_kernel(&c, &TiltVector::scalar(2, 0.8).unwrap(), &bx).unwrap();
        assert!(q.max_contained_row_error() < 1e-12);
        assert!(q.max_row_error() < 1e-8);
        let spec = model_spectrum(&q.tilted).unwrap();
        let mut mu = LatticeArray::zeros(&bx);
        for (i, v) in mu.values_mut().iter_mut().enumerate().skip(1) {
            *v = 1.0 / i as f64;
        }
        let a = q.left_apply(mu.values());
        let b = q_step(&q.tilted, &spec, &mu);
        for (x, y) in a.iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
