use serde::Serialize;

use super::paths::ConditioningContext;
use super::yaglom::yaglom;
use crate::error::{GwError, Result};
use crate::lattice::{LatticeArray, LatticeBox, LatticeDistribution, TruncatedIterates};
use crate::model::{one_minus_pow_complement, BranchingModel, State};
use crate::spectral::model_spectrum;

pub const YAGLOM_TYPE_TV_TOL: f64 = 1e-12;
/// Consecutive small steps required before the limit in k is accepted.
pub const STABLE_STEPS: usize = 5;
pub const MAX_K: u32 = 200_000;

fn tv(a: &LatticeDistribution, b: &LatticeDistribution) -> f64 {
    let body: f64 = a.mass.values().iter().zip(b.mass.values()).map(|(x, y)| (x - y).abs()).sum();
    0.5 * (body + a.overflow + b.overflow)
}

fn check_noncritical(model: &BranchingModel) -> Result<f64> {
    let rho = model_spectrum(model)?.rho;
    if (rho - 1.0).abs() < 1e-12 {
        return Err(GwError::Domain(
            "critical process: conditioning on survival n steps ahead has a degenerate limit".into(),
        ));
    }
    Ok(rho)
}

/// Survival complements `1 - f̄_m(0)` of the q-tilted process for m <= m_max.
fn tilted_survivals(ctx: &ConditioningContext, m_max: u32) -> Vec<Vec<f64>> {
    ctx.tilted.survival_sequence(m_max as usize)
}

/// `1 - f̄_n(0)^z` at every box point (0 at the origin).
fn survival_weights(bx: &LatticeBox, s_n: &[f64]) -> Vec<f64> {
    bx.states().map(|z| one_minus_pow_complement(s_n, &z)).collect()
}

/// `P_x0(X_k = . | X_{k+n} != 0, T < inf)` from the law of the tilted process:
/// `P̄_x0(X̄_k = z) (1 - f̄_n(0)^z) / (1 - f̄_{k+n}(0)^x0)`.
fn conditioned_marginal(law: &LatticeArray, weights: &[f64], denominator: f64) -> LatticeDistribution {
    let mut out = law.clone();
    for (v, w) in out.values_mut().iter_mut().zip(weights) {
        *v *= w / denominator;
    }
    LatticeDistribution::from_retained(out)
}

#[derive(Clone, Debug)]
pub struct YaglomTypeResult {
    pub n: u32,
    pub dist: LatticeDistribution,
    /// Value of k at which the limit was accepted.
    pub k: u32,
}

/// `nu^(n) = lim_k P_x0(X_k = . | X_{k+n} != 0, T < inf)`.
pub fn yaglom_type(model: &BranchingModel, n: u32, bx: &LatticeBox, x0: &[u32]) -> Result<YaglomTypeResult> {
    check_noncritical(model)?;
    let ctx = ConditioningContext::new(model)?;
    let mut it = TruncatedIterates::new(&ctx.tilted, bx);
    let mut s_n = vec![1.0; model.dim()];
    for _ in 0..n {
        s_n = ctx.tilted.complement_step(&s_n);
    }
    let weights = survival_weights(bx, &s_n);
    let mut s_kn = s_n.clone();
    let mut prev: Option<LatticeDistribution> = None;
    let mut stable = 0;
    for k in 1..=MAX_K {
        it.step();
        s_kn = ctx.tilted.complement_step(&s_kn);
        let den = one_minus_pow_complement(&s_kn, x0);
        if !(den > 0.0) {
            break;
        }
        let dist = conditioned_marginal(&it.law_from(x0), &weights, den);
        if let Some(p) = &prev {
            stable = if tv(&dist, p) - dist.overflow.max(p.overflow) < YAGLOM_TYPE_TV_TOL { stable + 1 } else { 0 };
        }
        prev = Some(dist);
        if stable >= STABLE_STEPS {
            return Ok(YaglomTypeResult { n, dist: prev.unwrap(), k });
        }
    }
    Err(GwError::IterationLimit { what: "Yaglom-type limit in k".into(), iterations: MAX_K as usize })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoubleLimitRow {
    pub k: u32,
    pub n: u32,
    /// `P_x0(X_k = z | X_{k+n} != 0, T < inf)`.
    pub prob_z: f64,
    pub mu_bar_z: f64,
    pub gap_z: f64,
    /// TV distance to `mu_bar`, counting both overflows as disagreement.
    pub tv: f64,
}

/// `(n, n)` for n = 1..=n_max.
pub fn diagonal_schedule(n_max: u32) -> Vec<(u32, u32)> {
    (1..=n_max).map(|n| (n, n)).collect()
}

/// `(floor(n t), n)` for n = 1..=n_max.
pub fn fraction_schedule(t: f64, n_max: u32) -> Vec<(u32, u32)> {
    (1..=n_max).map(|n| ((n as f64 * t).floor() as u32, n)).collect()
}

/// Distance between the conditioned marginal at (k, n) and the size-biased
/// Yaglom law of the q-tilted process, along a schedule.
pub fn double_limit_scan(
    model: &BranchingModel,
    z: &[u32],
    schedule: &[(u32, u32)],
    bx: &LatticeBox,
    x0: &[u32],
) -> Result<Vec<DoubleLimitRow>> {
    check_noncritical(model)?;
    let ctx = ConditioningContext::new(model)?;
    let y = yaglom(&ctx.tilted, bx)?;
    let m_max = schedule.iter().map(|(k, n)| k + n).max().unwrap_or(0);
    let s = tilted_survivals(&ctx, m_max);
    let mut order: Vec<usize> = (0..schedule.len()).collect();
    order.sort_by_key(|&i| schedule[i].0);
    let mut it = TruncatedIterates::new(&ctx.tilted, bx);
    let mut rows = vec![None; schedule.len()];
    for i in order {
        let (k, n) = schedule[i];
        it.advance_to(k);
        let den = one_minus_pow_complement(&s[(k + n) as usize], x0);
        let dist = conditioned_marginal(&it.law_from(x0), &survival_weights(bx, &s[n as usize]), den);
        let prob_z = dist.get(z);
        let mu_bar_z = y.mu_bar.get(z);
        rows[i] = Some(DoubleLimitRow { k, n, prob_z, mu_bar_z, gap_z: (prob_z - mu_bar_z).abs(), tv: tv(&dist, &y.mu_bar) });
    }
    Ok(rows.into_iter().map(|r| r.unwrap()).collect())
}

/// Nonzero box states carrying mass in a distribution.
pub fn support(dist: &LatticeDistribution) -> Vec<State> {
    dist.nonzero().map(|(x, _)| x).collect()
}
