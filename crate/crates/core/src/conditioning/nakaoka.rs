use serde::Serialize;

use super::paths::ConditioningContext;
use super::yaglom::yaglom;
use crate::error::Result;
use crate::lattice::{LatticeBox, TruncatedIterates};
use crate::model::{one_minus_pow_complement, BranchingModel, State};
use crate::spectral::model_spectrum;

/// One generation of the ratio diagnostics. With `s_n = 1 - f_n(0)` and
/// `S_n = 1 - f_n(0)^x`:
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NakaokaRow {
    pub n: u32,
    /// `v.(s_{n+1} - s_{n+2}) / v.(s_n - s_{n+1})`, tends to rho.
    pub increment_ratio: f64,
    /// `S_n / v.s_n`, tends to `x.u`.
    pub difference_ratio: f64,
    /// `S_{n+1} / S_n`, tends to rho.
    pub survival_ratio: f64,
    /// `P_n(x, y) / (S_n - S_{n+1})` for each target y.
    pub pi_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NakaokaReport {
    /// True when rho > 1 and the diagnostics were run on the q-tilted process.
    pub tilted: bool,
    pub rho: f64,
    pub x_dot_u: f64,
    pub x: State,
    pub targets: Vec<State>,
    pub rows: Vec<NakaokaRow>,
    /// `nu(y) / (1 - rho)` when a box for the Yaglom limit was supplied and rho < 1.
    pub pi_reference: Option<Vec<f64>>,
}

impl NakaokaReport {
    pub fn last(&self) -> &NakaokaRow {
        self.rows.last().expect("at least one generation")
    }
}

fn vdot(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    v.iter().zip(a.iter().zip(b)).map(|(v, (a, b))| v * (a - b)).sum()
}

/// Ratio diagnostics for n = 1..=n_max. A supercritical model is replaced by
/// its q-tilted version, which is subcritical.
pub fn nakaoka_diagnostics(
    model: &BranchingModel,
    x: &[u32],
    targets: &[State],
    n_max: u32,
    yaglom_box: Option<&LatticeBox>,
) -> Result<NakaokaReport> {
    let mut process = model.clone();
    let mut spec = model_spectrum(model)?;
    let tilted = spec.rho > 1.0;
    if tilted {
        process = ConditioningContext::new(model)?.tilted;
        spec = model_spectrum(&process)?;
    }
    let d = process.dim();
    let s = process.survival_sequence(n_max as usize + 2);
    let big_s: Vec<f64> = s.iter().map(|sn| one_minus_pow_complement(sn, x)).collect();
    let bx = LatticeBox::covering(d, targets.iter());
    let mut it = TruncatedIterates::new(&process, &bx);
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        it.advance_to(n);
        let k = n as usize;
        let law = it.law_from(x);
        let drop = big_s[k] - big_s[k + 1];
        rows.push(NakaokaRow {
            n,
            increment_ratio: vdot(&spec.v, &s[k + 1], &s[k + 2]) / vdot(&spec.v, &s[k], &s[k + 1]),
            difference_ratio: big_s[k] / spec.v.iter().zip(&s[k]).map(|(v, s)| v * s).sum::<f64>(),
            survival_ratio: big_s[k + 1] / big_s[k],
            pi_hat: targets.iter().map(|y| law.get(y) / drop).collect(),
        });
    }
    let pi_reference = match yaglom_box {
        Some(ybx) if spec.rho < 1.0 => {
            let y = yaglom(&process, ybx)?;
            Some(targets.iter().map(|t| y.nu.get(t) / (1.0 - spec.rho)).collect())
        }
        _ => None,
    };
    Ok(NakaokaReport {
        tilted,
        rho: spec.rho,
        x_dot_u: spec.dot_u(x),
        x: x.to_vec(),
        targets: targets.to_vec(),
        rows,
        pi_reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn model_e_closed_form() {
        let e = fixtures::model_e();
        let r = nakaoka_diagnostics(&e, &[1], &[vec![1]], 30, Some(&LatticeBox::cube(1, 4).unwrap())).unwrap();
        for row in &r.rows {
            assert!((row.survival_ratio - 0.5).abs() < 1e-15);
            assert!((row.increment_ratio - 0.5).abs() < 1e-12);
            assert!((row.difference_ratio - 1.0).abs() < 1e-15);
            assert!((row.pi_hat[0] - 2.0).abs() < 1e-12);
        }
        assert!((r.pi_reference.unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn supercritical_is_tilted() {
        let d = fixtures::model_d();
        let r = nakaoka_diagnostics(&d, &[1], &[vec![1]], 80, None).unwrap();
        assert!(r.tilted && r.rho < 1.0);
        assert!((r.last().survival_ratio - r.rho).abs() < 1e-8);
        assert!((r.last().increment_ratio - r.rho).abs() < 1e-8);
    }
}
