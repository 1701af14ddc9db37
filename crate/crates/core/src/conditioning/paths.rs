use serde::Serialize;

use super::set::ConditioningSet;
use crate::error::{GwError, Result};
use crate::lattice::{path_probability, transition_probabilities, LatticeBox, PathEvent, TransitionKernel};
use crate::model::{lattice_pow, one_minus_pow_complement, BranchingModel, State};
use crate::spectral::model_spectrum;
use crate::tilt::{associate, extinction_vector, TiltVector};

/// A model together with its extinction vector and its q-tilted version.
/// `{T < inf}` is priced by the terminal weight `q^y`.
#[derive(Clone, Debug)]
pub struct ConditioningContext {
    pub model: BranchingModel,
    pub q: Vec<f64>,
    /// Associated process with respect to q (the model itself when q = 1).
    pub tilted: BranchingModel,
}

impl ConditioningContext {
    pub fn new(model: &BranchingModel) -> Result<Self> {
        let q = extinction_vector(model)?.q;
        let tilted = if q.iter().all(|&x| x == 1.0) {
            model.clone()
        } else {
            associate(model, &TiltVector::new(q.clone())?)?
        };
        Ok(ConditioningContext { model: model.clone(), q, tilted })
    }

    /// `1 - f̄_n(0)^x` for the q-tilted process, without cancellation.
    pub fn tilted_survival(&self, x: &[u32], n: u32) -> f64 {
        let mut s = vec![1.0; self.model.dim()];
        for _ in 0..n {
            s = self.tilted.complement_step(&s);
        }
        one_minus_pow_complement(&s, x)
    }

    /// `E_x[1{X_n in S} q^{X_n}] = P_x(X_n in S, T < inf)`.
    pub fn terminal_weight(&self, x: &[u32], n: u32, set: &ConditioningSet) -> Result<f64> {
        let d = self.model.dim();
        if x.iter().all(|&c| c == 0) {
            return Ok(0.0);
        }
        let weighted = |states: &[State]| -> Result<f64> {
            let p = transition_probabilities(&self.model, x, states, n)?;
            Ok(states.iter().zip(&p).map(|(s, p)| p * lattice_pow(&self.q, s)).sum())
        };
        if let Some(members) = set.finite_members(d) {
            return weighted(&members);
        }
        let complement = set.finite_complement(d).expect("every set is finite or cofinite");
        let alive = lattice_pow(&self.q, x) * self.tilted_survival(x, n);
        let excluded: Vec<State> = complement.into_iter().filter(|s| s.iter().any(|&c| c > 0)).collect();
        Ok(alive - if excluded.is_empty() { 0.0 } else { weighted(&excluded)? })
    }

    /// `P_{x_0}(path | X_{k_j + n} in S, T < inf)`.
    pub fn conditional_path_law(&self, ev: &PathEvent, set: &ConditioningSet, n: u32) -> Result<f64> {
        set.validate(self.model.dim())?;
        let den = self.terminal_weight(&ev.x0, ev.last_time() + n, set)?;
        if !(den > 0.0) {
            return Err(GwError::DegenerateCondition(format!(
                "P_x0(X_{} in {set}, T < inf) = {den:e}",
                ev.last_time() + n
            )));
        }
        let p = path_probability(&self.model, ev)?;
        if p == 0.0 {
            return Ok(0.0);
        }
        Ok(p * self.terminal_weight(ev.last_state(), n, set)? / den)
    }
}

pub fn conditional_path_law(model: &BranchingModel, ev: &PathEvent, set: &ConditioningSet, n: u32) -> Result<f64> {
    ConditioningContext::new(model)?.conditional_path_law(ev, set, n)
}

/// `rho̅^{-k_j} (x_j . ū)/(x_0 . ū) P̄_{x_0}(path)` for the process tilted by `a`.
pub fn q_process_rhs(model: &BranchingModel, a: &TiltVector, ev: &PathEvent) -> Result<f64> {
    let tilted = associate(model, a)?;
    let spec = model_spectrum(&tilted)?;
    let p = path_probability(&tilted, ev)?;
    Ok(spec.rho.powi(-(ev.last_time() as i32)) * spec.dot_u(ev.last_state()) / spec.dot_u(&ev.x0) * p)
}

/// The limit law of the theorem, with the tilt `a = q`.
pub fn q_process_limit(model: &BranchingModel, ev: &PathEvent) -> Result<f64> {
    let ctx = ConditioningContext::new(model)?;
    q_process_rhs(model, &TiltVector::new(ctx.q)?, ev)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccessibilityReport {
    pub accessible: bool,
    /// Nonzero box states from which no member of S in the box was reached.
    pub unreachable_from: Vec<State>,
    pub steps: usize,
}

/// Breadth-first reachability of S on the truncated kernel, up to twice the
/// box diameter. A negative answer is only a warning: S may be reachable
/// through states outside the box.
pub fn accessibility_check(model: &BranchingModel, set: &ConditioningSet, bx: &LatticeBox) -> Result<AccessibilityReport> {
    set.validate(model.dim())?;
    let kernel = TransitionKernel::build(model, bx)?;
    let steps = 2 * bx.upper().iter().map(|&c| c as usize).sum::<usize>();
    let targets: Vec<bool> = bx.states().map(|x| set.contains(&x)).collect();
    let mut unreachable_from = Vec::new();
    for idx in 1..bx.len() {
        let seen = kernel.reachable(idx, steps);
        if !seen.iter().zip(&targets).any(|(s, t)| *s && *t) {
            unreachable_from.push(bx.state(idx));
        }
    }
    Ok(AccessibilityReport { accessible: unreachable_from.is_empty(), unreachable_from, steps })
}
