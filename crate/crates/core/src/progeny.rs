//! Total progeny `N = X_0 + X_1 + ...`: its law (determinant formula and a
//! dynamic-programming oracle), paths conditioned on `{N = n}`, and the
//! large-n behaviour along the left Perron direction of a critical tilt.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{GwError, Result};
use crate::lattice::{joint_state_progeny, path_probability, JointDistribution, LatticeArray, LatticeBox, PathEvent, SignedLatticeMeasure};
use crate::matrix::Matrix;
use crate::model::{BranchingModel, State};
use crate::spectral::model_spectrum;
use crate::tilt::{associate, critical_tilt, TiltVector};

/// The permutation sum is expanded explicitly, so d! chains are evaluated.
pub const MAX_FORMULA_DIM: usize = 4;
/// Largest `|rho - 1|` accepted as critical.
pub const CRITICAL_RHO_TOL: f64 = 1e-9;
/// Slack added before flooring `n v` so that `n * 0.9999999999999998` maps to n - 1 only when it should.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProgenyQuery {
    pub x0: State,
    pub n: State,
}

impl ProgenyQuery {
    pub fn new(x0: State, n: State) -> Result<Self> {
        if x0.len() != n.len() {
            return Err(GwError::Domain("x0 and n have different dimensions".into()));
        }
        if x0.iter().all(|&c| c == 0) {
            return Err(GwError::Domain("initial state must be nonzero".into()));
        }
        if n.iter().zip(&x0).any(|(a, b)| a < b) {
            return Err(GwError::Domain(format!("progeny {n:?} must dominate the initial state {x0:?}")));
        }
        Ok(ProgenyQuery { x0, n })
    }
}

/// All permutations of `0..r` with their signatures.
fn permutations(r: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut perms = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; r], &mut perms);
    perms
        .into_iter()
        .map(|p| {
            let inversions = (0..r).flat_map(|i| (i + 1..r).map(move |j| (i, j))).filter(|&(i, j)| p[i] > p[j]).count();
            (p, if inversions % 2 == 0 { 1.0 } else { -1.0 })
        })
        .collect()
}

/// `P_x0(N = n)` from the determinant formula, expanded over permutations.
///
/// Types with `n_i = 0` never occur, so the sum runs over the remaining
/// types with offspring laws restricted to vectors avoiding the others.
pub fn progeny_pmf_formula(model: &BranchingModel, query: &ProgenyQuery) -> Result<f64> {
    let d = model.dim();
    if query.x0.len() != d {
        return Err(GwError::Domain(format!("query has dimension {}, model has {d}", query.x0.len())));
    }
    if d > MAX_FORMULA_DIM {
        return Err(GwError::Unsupported(format!(
            "determinant formula limited to d <= {MAX_FORMULA_DIM}; use the DP oracle"
        )));
    }
    if query.n.iter().all(|&c| c == 0) {
        return Err(GwError::Domain("target progeny must be nonzero".into()));
    }
    Ok(formula_unchecked(model, &query.x0, &query.n))
}

fn formula_unchecked(model: &BranchingModel, x0: &[u32], n: &[u32]) -> f64 {
    let active: Vec<usize> = (0..model.dim()).filter(|&i| n[i] > 0).collect();
    let r = active.len();
    let target: State = active.iter().map(|&i| n[i] - x0[i]).collect();
    let bx = LatticeBox::new_unchecked(target.clone());
    let powers: Vec<LatticeArray> = active
        .iter()
        .map(|&i| {
            let atoms: Vec<(State, f64)> = model
                .law(i)
                .atoms()
                .iter()
                .filter(|(k, _)| (0..k.len()).all(|j| n[j] > 0 || k[j] == 0))
                .map(|(k, p)| (active.iter().map(|&j| k[j]).collect(), *p))
                .collect();
            LatticeArray::from_atoms(&bx, &atoms).pow(n[i])
        })
        .collect();
    let states: Vec<State> = bx.states().collect();
    let mut total = 0.0;
    for (sigma, sign) in permutations(r) {
        let mut chain: Option<SignedLatticeMeasure> = None;
        for (row, pw) in powers.iter().enumerate() {
            let col = sigma[row];
            let diag = if col == row { n[active[row]] as f64 } else { 0.0 };
            let mut mu = pw.clone();
            for (v, k) in mu.values_mut().iter_mut().zip(&states) {
                *v *= diag - k[col] as f64;
            }
            let term = SignedLatticeMeasure { values: mu, overflow_abs: 0.0 };
            chain = Some(match chain {
                None => term,
                Some(c) => c.convolve(&term),
            });
        }
        total += sign * chain.expect("at least one active type").get(&target);
    }
    total / active.iter().map(|&i| n[i] as f64).product::<f64>()
}

/// `P_x0(N = m)` for every `m <= cap`, read off the joint law of
/// `(X_K, N_K)` at `X_K = 0` with `K = ||cap||_1`.
pub fn progeny_pmf_dp(model: &BranchingModel, x0: &[u32], cap: &[u32]) -> Result<LatticeArray> {
    let bx = LatticeBox::new(cap.iter().map(|&c| c.max(1)).collect())?;
    let steps: u32 = bx.upper().iter().sum();
    Ok(joint_state_progeny(model, x0, steps, &bx, &bx)?.extinct_slice())
}

/// Progeny laws from every initial state, built from the one-ancestor
/// tables by the branching property.
#[derive(Clone, Debug)]
pub struct ProgenyTables {
    pub bx: LatticeBox,
    per_type: Vec<LatticeArray>,
    cache: HashMap<State, LatticeArray>,
    /// Joint laws of `(X_t, N_t)` from a leg's start, keyed by (start, t).
    legs: HashMap<(State, u32), JointDistribution>,
}

impl ProgenyTables {
    pub fn new(model: &BranchingModel, cap: &[u32]) -> Result<Self> {
        let d = model.dim();
        let bx = LatticeBox::new(cap.iter().map(|&c| c.max(1)).collect())?;
        let per_type = (0..d)
            .map(|i| {
                let mut e = vec![0; d];
                e[i] = 1;
                progeny_pmf_dp(model, &e, bx.upper())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProgenyTables { bx, per_type, cache: HashMap::new(), legs: HashMap::new() })
    }

    /// `m -> P_y(N = m)` on the box.
    pub fn from(&mut self, y: &[u32]) -> &LatticeArray {
        if !self.cache.contains_key(y) {
            let mut acc = LatticeArray::delta(&self.bx, &vec![0; y.len()]);
            for (t, &c) in self.per_type.iter().zip(y) {
                if c > 0 {
                    acc = acc.mul(&t.pow(c));
                }
            }
            self.cache.insert(y.to_vec(), acc);
        }
        &self.cache[y]
    }

    fn leg(&mut self, model: &BranchingModel, from: &[u32], t: u32) -> Result<&JointDistribution> {
        let key = (from.to_vec(), t);
        if !self.legs.contains_key(&key) {
            let joint = joint_state_progeny(model, from, t, &self.bx, &self.bx)?;
            self.legs.insert(key.clone(), joint);
        }
        Ok(&self.legs[&key])
    }
}

fn shift_down(a: &LatticeArray, by: &[u32]) -> LatticeArray {
    let bx = a.lattice_box();
    let mut out = LatticeArray::zeros(bx);
    for (i, &v) in a.values().iter().enumerate() {
        if v != 0.0 {
            let s = bx.state(i);
            if s.iter().zip(by).all(|(a, b)| a >= b) {
                let t: State = s.iter().zip(by).map(|(a, b)| a - b).collect();
                out.values_mut()[bx.index(&t).unwrap()] += v;
            }
        }
    }
    out
}

/// `P_x0(path, N = n)` through the joint law of `(X_k, N_k)` along each leg.
fn path_and_progeny(model: &BranchingModel, ev: &PathEvent, n: &[u32], tables: &mut ProgenyTables) -> Result<f64> {
    let bx = tables.bx.clone();
    if !bx.contains(&ev.x0) || !bx.contains(n) {
        return Ok(0.0);
    }
    // acc(l) = P(path so far, N_{k_i} = l)
    let mut acc = LatticeArray::delta(&bx, &ev.x0);
    for (from, to, t) in ev.legs() {
        if t == 0 {
            if from != to {
                return Ok(0.0);
            }
            continue;
        }
        if !bx.contains(to) {
            return Ok(0.0);
        }
        let joint = tables.leg(model, from, t)?;
        let mut leg = LatticeArray::zeros(&bx);
        for (m, v) in bx.states().zip(leg.values_mut()) {
            *v = joint.get(to, &m);
        }
        acc = shift_down(&acc, from).mul(&leg);
    }
    let last = ev.last_state();
    let tail = tables.from(last);
    Ok(shift_down(&acc, last).mul(tail).get(n))
}

/// `P_x0(path | N = n)`.
pub fn progeny_conditioned_path_law(model: &BranchingModel, ev: &PathEvent, n: &[u32]) -> Result<f64> {
    let mut tables = ProgenyTables::new(model, n)?;
    conditioned_with(model, ev, n, &mut tables)
}

fn conditioned_with(model: &BranchingModel, ev: &PathEvent, n: &[u32], tables: &mut ProgenyTables) -> Result<f64> {
    let den = tables.from(&ev.x0).get(n);
    if !(den > 0.0) {
        return Err(GwError::DegenerateCondition(format!("P_x0(N = {n:?}) = 0 from x0 = {:?}", ev.x0)));
    }
    Ok(path_and_progeny(model, ev, n, tables)? / den)
}

/// Largest `|P_x0(path | N = n) - P̄_x0(path | N̄ = n)|` over the paths,
/// the tilted side computed on the associated process.
pub fn lemma1_check(model: &BranchingModel, a: &TiltVector, paths: &[PathEvent], n: &[u32]) -> Result<f64> {
    let tilted = associate(model, a)?;
    let mut plain = ProgenyTables::new(model, n)?;
    let mut bar = ProgenyTables::new(&tilted, n)?;
    let mut worst: f64 = 0.0;
    for ev in paths {
        let p = conditioned_with(model, ev, n, &mut plain)?;
        let q = conditioned_with(&tilted, ev, n, &mut bar)?;
        worst = worst.max((p - q).abs());
    }
    Ok(worst)
}

/// `floor(n v)` with a small slack against round-off.
pub fn floor_direction(n: u32, v: &[f64]) -> State {
    v.iter().map(|&vi| (n as f64 * vi + FLOOR_SLACK).floor() as u32).collect()
}

fn check_a5_a6(model: &BranchingModel, v: &[f64]) -> Result<Matrix> {
    if let Some(direction) = model.aperiodic_direction() {
        return Err(GwError::Periodic { direction: direction + 1 });
    }
    let d = model.dim();
    let mut sigma = Matrix::zeros(d);
    for (vi, s) in v.iter().zip(model.covariance_matrices()) {
        sigma = sigma.add(&s.scale(*vi));
    }
    if sigma.cholesky().is_none() {
        return Err(GwError::NotPositiveDefinite(format!("aggregate covariance {sigma:?} is not positive-definite")));
    }
    Ok(sigma)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: u32,
    pub target: State,
    /// `n^{d/2+1} P_x0(N = floor(n v))`.
    pub value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgenyScalingReport {
    /// Conditioning direction (left Perron vector, `u.1 = u.v = 1`).
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub x0: State,
    pub rows: Vec<ScalingRow>,
    /// Mean of the scaled values over the upper half of the n range.
    pub plateau: f64,
    pub sigma: Matrix,
    pub det_sigma: f64,
    /// `x0.D / (v_d (2 pi)^{d/2} sqrt(det Sigma))`, D the last-row cofactors of I - M.
    pub limit_constant: f64,
}

/// Scaled progeny probabilities along the left Perron direction of a
/// critical model.
pub fn proposition_scaling(model: &BranchingModel, x0: &[u32], n_values: &[u32]) -> Result<ProgenyScalingReport> {
    let d = model.dim();
    if x0.len() != d || x0.iter().all(|&c| c == 0) {
        return Err(GwError::Domain("initial state must be nonzero and match the model".into()));
    }
    if let Some(direction) = model.aperiodic_direction() {
        return Err(GwError::Periodic { direction: direction + 1 });
    }
    let spec = model_spectrum(model)?;
    if (spec.rho - 1.0).abs() > CRITICAL_RHO_TOL {
        return Err(GwError::Domain(format!("model is not critical (rho = {}); tilt it first", spec.rho)));
    }
    let sigma = check_a5_a6(model, &spec.v)?;
    let det_sigma = sigma.det();
    let i_minus_m = Matrix::identity(d).sub(&model.mean_matrix());
    let x0_dot_d: f64 = (0..d).map(|i| x0[i] as f64 * i_minus_m.cofactor(d - 1, i)).sum();
    let limit_constant =
        x0_dot_d / (spec.v[d - 1] * (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det_sigma.sqrt());
    let exponent = d as f64 / 2.0 + 1.0;
    let rows: Vec<ScalingRow> = n_values
        .iter()
        .map(|&n| {
            let target = floor_direction(n, &spec.v);
            if target.iter().zip(x0).any(|(t, x)| t < x) || target.iter().all(|&t| t == 0) {
                return ScalingRow { n, target, value: None, note: Some("floor(n v) does not dominate x0".into()) };
            }
            let p = formula_unchecked(model, x0, &target);
            ScalingRow { n, target, value: Some((n as f64).powf(exponent) * p), note: None }
        })
        .collect();
    let mut valued: Vec<(u32, f64)> = rows.iter().filter_map(|r| r.value.map(|v| (r.n, v))).collect();
    valued.sort_by_key(|r| r.0);
    let upper = &valued[valued.len() / 2..];
    let plateau = if upper.is_empty() { f64::NAN } else { upper.iter().map(|r| r.1).sum::<f64>() / upper.len() as f64 };
    Ok(ProgenyScalingReport {
        w: spec.v.clone(),
        u: spec.u.clone(),
        x0: x0.to_vec(),
        rows,
        plateau,
        sigma,
        det_sigma,
        limit_constant,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Row {
    pub n: u32,
    pub target: State,
    /// `P_x0(path | N = floor(n v̄))`.
    pub value: Option<f64>,
    pub gap: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub tilt: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    /// `(x_j.ū / x_0.ū) P̄_x0(path)`.
    pub limit: f64,
    pub rows: Vec<Theorem2Row>,
}

/// Gap between the path law conditioned on `N = floor(n v̄)` and its limit,
/// for each n. Without an explicit tilt the critical scalar tilt is used.
pub fn theorem2_verify(
    model: &BranchingModel,
    tilt: Option<&TiltVector>,
    ev: &PathEvent,
    n_values: &[u32],
) -> Result<Theorem2Report> {
    let a = match tilt {
        Some(a) => a.clone(),
        None => critical_tilt(model)?,
    };
    let tilted = associate(model, &a)?;
    let spec = model_spectrum(&tilted)?;
    if (spec.rho - 1.0).abs() > CRITICAL_RHO_TOL {
        return Err(GwError::Domain(format!("tilt {:?} leaves rho_bar = {}", a.a, spec.rho)));
    }
    check_a5_a6(&tilted, &spec.v)?;
    let limit = spec.dot_u(ev.last_state()) / spec.dot_u(&ev.x0) * path_probability(&tilted, ev)?;
    let targets: Vec<State> = n_values.iter().map(|&n| floor_direction(n, &spec.v)).collect();
    let d = model.dim();
    let cap: State = (0..d).map(|i| targets.iter().map(|t| t[i]).max().unwrap_or(1)).collect();
    let mut tables = ProgenyTables::new(model, &cap)?;
    let mut rows = Vec::with_capacity(n_values.len());
    for (&n, target) in n_values.iter().zip(targets) {
        let skip = |note: &str| Theorem2Row { n, target: target.clone(), value: None, gap: None, note: Some(note.into()) };
        if target.iter().zip(&ev.x0).any(|(t, x)| t < x) {
            rows.push(skip("floor(n v) does not dominate x0"));
            continue;
        }
        match conditioned_with(model, ev, &target, &mut tables) {
            Ok(value) => rows.push(Theorem2Row {
                n,
                target: target.clone(),
                value: Some(value),
                gap: Some((value - limit).abs()),
                note: None,
            }),
            Err(GwError::DegenerateCondition(_)) => rows.push(skip("conditioning event has probability 0")),
            Err(e) => return Err(e),
        }
    }
    Ok(Theorem2Report { tilt: a.a, v_bar: spec.v, u_bar: spec.u, limit, rows })
}
