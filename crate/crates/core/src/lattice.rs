//! Exact distributions on a truncated box of N^d.
//!
//! Everything here rests on one observation: offspring vectors are
//! nonnegative, so a coefficient of `f_n(r)^x` at a lattice point `y` only
//! depends on coefficients of the factors at points `<= y`. Products and
//! compositions truncated to a box are therefore exact on the box.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{GwError, Result};
use crate::model::{BranchingModel, State};

pub const DEFAULT_LEAK_TOL: f64 = 1e-9;

/// Largest dense kernel (rows x columns) we are willing to allocate.
const MAX_KERNEL_ENTRIES: usize = 50_000_000;

/// `{0..=c_1} x ... x {0..=c_d}`, indexed row-major (last coordinate fastest).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct LatticeBox {
    upper: Vec<u32>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    len: usize,
}

impl LatticeBox {
    pub fn new(upper: Vec<u32>) -> Result<Self> {
        if upper.is_empty() {
            return Err(GwError::Domain("box needs at least one coordinate".into()));
        }
        if upper.contains(&0) {
            return Err(GwError::Domain(format!("box caps must be >= 1, got {upper:?}")));
        }
        Ok(Self::new_unchecked(upper))
    }

    /// Like [`LatticeBox::new`] but allows zero caps (used for exact
    /// coefficient extraction at a single point).
    pub(crate) fn new_unchecked(upper: Vec<u32>) -> Self {
        let d = upper.len();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (upper[i + 1] as usize + 1);
        }
        let len = strides[0] * (upper[0] as usize + 1);
        LatticeBox { upper, strides, len }
    }

    pub fn cube(d: usize, cap: u32) -> Result<Self> {
        Self::new(vec![cap; d])
    }

    /// Smallest box containing every given state (caps at least 1).
    pub fn covering<'a>(d: usize, states: impl IntoIterator<Item = &'a State>) -> Self {
        let mut upper = vec![1u32; d];
        for s in states {
            for (u, &c) in upper.iter_mut().zip(s) {
                *u = (*u).max(c);
            }
        }
        Self::new_unchecked(upper)
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn upper(&self) -> &[u32] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.upper).all(|(a, c)| a <= c)
    }

    pub fn index(&self, x: &[u32]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(x.iter().zip(&self.strides).map(|(&a, s)| a as usize * s).sum())
    }

    pub fn state(&self, mut idx: usize) -> State {
        let mut out = vec![0; self.dim()];
        for (o, s) in out.iter_mut().zip(&self.strides) {
            *o = (idx / s) as u32;
            idx %= s;
        }
        out
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len).map(move |i| self.state(i))
    }

    pub fn doubled(&self) -> Self {
        Self::new_unchecked(self.upper.iter().map(|c| 2 * c).collect())
    }

    /// Flat table of the coordinates of every index.
    fn coordinates(&self) -> Vec<u32> {
        let d = self.dim();
        let mut out = vec![0u32; self.len * d];
        let mut cur = vec![0u32; d];
        for idx in 0..self.len {
            out[idx * d..(idx + 1) * d].copy_from_slice(&cur);
            for j in (0..d).rev() {
                if cur[j] < self.upper[j] {
                    cur[j] += 1;
                    break;
                }
                cur[j] = 0;
            }
        }
        out
    }
}

/// Dense real array on a box; doubles as a truncated multivariate polynomial.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeArray {
    bx: LatticeBox,
    values: Vec<f64>,
}

impl LatticeArray {
    pub fn zeros(bx: &LatticeBox) -> Self {
        LatticeArray { bx: bx.clone(), values: vec![0.0; bx.len()] }
    }

    pub fn delta(bx: &LatticeBox, x: &[u32]) -> Self {
        let mut a = Self::zeros(bx);
        if let Some(i) = bx.index(x) {
            a.values[i] = 1.0;
        }
        a
    }

    pub fn from_atoms(bx: &LatticeBox, atoms: &[(State, f64)]) -> Self {
        let mut a = Self::zeros(bx);
        for (k, p) in atoms {
            if let Some(i) = bx.index(k) {
                a.values[i] += p;
            }
        }
        a
    }

    pub fn lattice_box(&self) -> &LatticeBox {
        &self.bx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, x: &[u32]) -> f64 {
        self.bx.index(x).map_or(0.0, |i| self.values[i])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn axpy(&mut self, c: f64, other: &LatticeArray) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Product truncated to the box.
    pub fn mul(&self, other: &LatticeArray) -> LatticeArray {
        debug_assert_eq!(self.bx, other.bx);
        let mut out = Self::zeros(&self.bx);
        conv_acc(&mut out.values, &self.values, &other.values, &self.bx.upper, &self.bx.strides);
        out
    }

    /// Product with a sparse factor, truncated to the box.
    pub fn mul_sparse(&self, atoms: &[(State, f64)]) -> LatticeArray {
        let mut out = Self::zeros(&self.bx);
        let d = self.bx.dim();
        let coords = self.bx.coordinates();
        for (k, p) in atoms {
            if *p == 0.0 {
                continue;
            }
            let Some(offset) = self.bx.index(k) else { continue };
            for idx in 0..self.bx.len {
                let c = &coords[idx * d..(idx + 1) * d];
                if c.iter().zip(k).zip(&self.bx.upper).all(|((a, b), u)| a + b <= *u) {
                    out.values[idx + offset] += p * self.values[idx];
                }
            }
        }
        out
    }

    pub fn pow(&self, mut e: u32) -> LatticeArray {
        let mut acc = Self::delta(&self.bx, &vec![0; self.bx.dim()]);
        let mut base = self.clone();
        let mut first = true;
        while e > 0 {
            if e & 1 == 1 {
                acc = if first { base.clone() } else { acc.mul(&base) };
                first = false;
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }
}

/// `out += a * b` truncated to the caps, recursing over leading coordinates.
fn conv_acc(out: &mut [f64], a: &[f64], b: &[f64], caps: &[u32], strides: &[usize]) {
    let c = caps[0] as usize;
    if caps.len() == 1 {
        for i in 0..=c {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            for (o, bj) in out[i..=c].iter_mut().zip(&b[..=c - i]) {
                *o += ai * bj;
            }
        }
        return;
    }
    let s = strides[0];
    for i in 0..=c {
        let a_slab = &a[i * s..(i + 1) * s];
        if a_slab.iter().all(|&v| v == 0.0) {
            continue;
        }
        for j in 0..=c - i {
            conv_acc(
                &mut out[(i + j) * s..(i + j + 1) * s],
                a_slab,
                &b[j * s..(j + 1) * s],
                &caps[1..],
                &strides[1..],
            );
        }
    }
}

fn identity_monomials(bx: &LatticeBox) -> Vec<LatticeArray> {
    (0..bx.dim())
        .map(|j| {
            let mut e = vec![0; bx.dim()];
            e[j] = 1;
            LatticeArray::delta(bx, &e)
        })
        .collect()
}

/// `f(g)` for truncated polynomials `g`, with shared monomials `g^k`.
pub fn compose(model: &BranchingModel, g: &[LatticeArray]) -> Vec<LatticeArray> {
    let bx = g[0].bx.clone();
    let mut memo: HashMap<State, LatticeArray> = HashMap::new();
    model
        .laws()
        .iter()
        .map(|law| {
            let mut out = LatticeArray::zeros(&bx);
            for (k, p) in law.support() {
                let m = monomial(k, g, &mut memo);
                out.axpy(*p, &m);
            }
            out
        })
        .collect()
}

fn monomial(k: &State, g: &[LatticeArray], memo: &mut HashMap<State, LatticeArray>) -> LatticeArray {
    if let Some(m) = memo.get(k) {
        return m.clone();
    }
    let m = match k.iter().rposition(|&c| c > 0) {
        None => LatticeArray::delta(&g[0].bx, &vec![0; k.len()]),
        Some(j) => {
            let mut prev = k.clone();
            prev[j] -= 1;
            if prev.iter().all(|&c| c == 0) {
                g[j].clone()
            } else {
                monomial(&prev, g, memo).mul(&g[j])
            }
        }
    };
    memo.insert(k.clone(), m.clone());
    m
}

/// `f_n` truncated to a box, advanced one generation at a time.
#[derive(Clone, Debug)]
pub struct TruncatedIterates<'a> {
    model: &'a BranchingModel,
    n: u32,
    current: Vec<LatticeArray>,
}

impl<'a> TruncatedIterates<'a> {
    pub fn new(model: &'a BranchingModel, bx: &LatticeBox) -> Self {
        TruncatedIterates { model, n: 0, current: identity_monomials(bx) }
    }

    pub fn generation(&self) -> u32 {
        self.n
    }

    pub fn step(&mut self) {
        self.current = compose(self.model, &self.current);
        self.n += 1;
    }

    pub fn advance_to(&mut self, n: u32) {
        while self.n < n {
            self.step();
        }
    }

    pub fn components(&self) -> &[LatticeArray] {
        &self.current
    }

    /// Coefficients of `f_n(r)^x` on the box: the law of X_n from x.
    pub fn law_from(&self, x: &[u32]) -> LatticeArray {
        monomial_power(&self.current, x)
    }
}

fn monomial_power(g: &[LatticeArray], x: &[u32]) -> LatticeArray {
    let mut acc: Option<LatticeArray> = None;
    for (gi, &xi) in g.iter().zip(x) {
        if xi == 0 {
            continue;
        }
        let p = gi.pow(xi);
        acc = Some(match acc {
            None => p,
            Some(a) => a.mul(&p),
        });
    }
    acc.unwrap_or_else(|| LatticeArray::delta(&g[0].bx, &vec![0; x.len()]))
}

/// Law of a population on a box; `overflow` is the mass lying outside.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeDistribution {
    pub mass: LatticeArray,
    pub overflow: f64,
}

impl LatticeDistribution {
    /// Takes a sub-probability array and books the missing mass as overflow.
    pub fn from_retained(mass: LatticeArray) -> Self {
        let overflow = (1.0 - mass.sum()).max(0.0);
        LatticeDistribution { mass, overflow }
    }

    pub fn lattice_box(&self) -> &LatticeBox {
        &self.mass.bx
    }

    pub fn get(&self, x: &[u32]) -> f64 {
        self.mass.get(x)
    }

    pub fn retained(&self) -> f64 {
        self.mass.sum()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.mass
            .values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(move |(i, &p)| (self.mass.bx.state(i), p))
    }

    /// First moment of the retained mass.
    pub fn retained_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.mass.bx.dim()];
        for (x, p) in self.nonzero() {
            for (mi, &xi) in m.iter_mut().zip(&x) {
                *mi += p * xi as f64;
            }
        }
        m
    }

    /// One CSV row per lattice point: `k1,...,kd,mass`.
    pub fn to_csv(&self) -> String {
        lattice_csv(&self.mass, "mass")
    }
}

pub fn lattice_csv(a: &LatticeArray, column: &str) -> String {
    let mut s = String::new();
    let d = a.bx.dim();
    for j in 1..=d {
        let _ = write!(s, "k{j},");
    }
    let _ = writeln!(s, "{column}");
    for (i, v) in a.values.iter().enumerate() {
        for c in a.bx.state(i) {
            let _ = write!(s, "{c},");
        }
        let _ = writeln!(s, "{}", crate::fmt_f64(*v));
    }
    s
}

/// Signed measure on a box (terms of the progeny determinant expansion).
#[derive(Clone, Debug, PartialEq)]
pub struct SignedLatticeMeasure {
    pub values: LatticeArray,
    /// Total absolute mass dropped by truncation.
    pub overflow_abs: f64,
}

impl SignedLatticeMeasure {
    pub fn convolve(&self, other: &SignedLatticeMeasure) -> SignedLatticeMeasure {
        SignedLatticeMeasure {
            values: self.values.mul(&other.values),
            overflow_abs: self.overflow_abs + other.overflow_abs,
        }
    }

    pub fn get(&self, x: &[u32]) -> f64 {
        self.values.get(x)
    }
}

/// The event `{X_{k_1} = x_1, ..., X_{k_j} = x_j}` under `P_{x_0}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PathEvent {
    pub x0: State,
    pub steps: Vec<(u32, State)>,
}

impl PathEvent {
    pub fn new(x0: State, steps: Vec<(u32, State)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(GwError::Domain("a path needs at least one (time, state) pair".into()));
        }
        if x0.iter().all(|&c| c == 0) {
            return Err(GwError::Domain("initial state must be nonzero".into()));
        }
        if steps.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(GwError::Domain("path times must be nondecreasing".into()));
        }
        if steps.iter().any(|(_, x)| x.len() != x0.len()) {
            return Err(GwError::Domain("path states have the wrong dimension".into()));
        }
        Ok(PathEvent { x0, steps })
    }

    pub fn single(x0: State, k: u32, x: State) -> Result<Self> {
        Self::new(x0, vec![(k, x)])
    }

    pub fn last_time(&self) -> u32 {
        self.steps.last().unwrap().0
    }

    pub fn last_state(&self) -> &State {
        &self.steps.last().unwrap().1
    }

    /// Consecutive legs `(from, to, elapsed)`.
    pub fn legs(&self) -> Vec<(&State, &State, u32)> {
        let mut prev = (0u32, &self.x0);
        let mut out = Vec::with_capacity(self.steps.len());
        for (k, x) in &self.steps {
            out.push((prev.1, x, k - prev.0));
            prev = (*k, x);
        }
        out
    }
}

fn check_dim(model: &BranchingModel, x: &[u32]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(GwError::Domain(format!("state {x:?} has dimension {}, model has {}", x.len(), model.dim())));
    }
    Ok(())
}

/// Law of X_1 from x on the box.
pub fn one_step(model: &BranchingModel, x: &[u32], bx: &LatticeBox) -> Result<LatticeDistribution> {
    check_dim(model, x)?;
    if bx.dim() != model.dim() {
        return Err(GwError::Domain("box dimension differs from the model".into()));
    }
    let g: Vec<LatticeArray> = model.laws().iter().map(|l| LatticeArray::from_atoms(bx, l.atoms())).collect();
    Ok(LatticeDistribution::from_retained(monomial_power(&g, x)))
}

/// Law of X_n from x on the box, failing when more than `leak_tol` of the
/// mass lies outside.
pub fn n_step(model: &BranchingModel, x: &[u32], n: u32, bx: &LatticeBox, leak_tol: f64) -> Result<LatticeDistribution> {
    let dist = n_step_unchecked(model, x, n, bx)?;
    if dist.overflow > leak_tol {
        return Err(GwError::Truncation { lost: dist.overflow, tolerance: leak_tol });
    }
    Ok(dist)
}

pub fn n_step_unchecked(model: &BranchingModel, x: &[u32], n: u32, bx: &LatticeBox) -> Result<LatticeDistribution> {
    check_dim(model, x)?;
    if bx.dim() != model.dim() {
        return Err(GwError::Domain("box dimension differs from the model".into()));
    }
    let mut it = TruncatedIterates::new(model, bx);
    it.advance_to(n);
    Ok(LatticeDistribution::from_retained(it.law_from(x)))
}

/// `P_x(X_n = y)`, exact (the box is cut at y).
pub fn transition_probability(model: &BranchingModel, x: &[u32], y: &[u32], n: u32) -> Result<f64> {
    check_dim(model, x)?;
    check_dim(model, y)?;
    let bx = LatticeBox::new_unchecked(y.to_vec());
    let mut it = TruncatedIterates::new(model, &bx.max_one());
    it.advance_to(n);
    Ok(it.law_from(x).get(y))
}

impl LatticeBox {
    fn max_one(&self) -> LatticeBox {
        LatticeBox::new_unchecked(self.upper.iter().map(|&c| c.max(1)).collect())
    }
}

/// Transition probabilities from one state to several targets at lag n.
pub fn transition_probabilities(model: &BranchingModel, x: &[u32], targets: &[State], n: u32) -> Result<Vec<f64>> {
    check_dim(model, x)?;
    for y in targets {
        check_dim(model, y)?;
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let bx = LatticeBox::covering(model.dim(), targets);
    let mut it = TruncatedIterates::new(model, &bx);
    it.advance_to(n);
    let law = it.law_from(x);
    Ok(targets.iter().map(|y| law.get(y)).collect())
}

/// `P_{x_0}(X_{k_1} = x_1, ..., X_{k_j} = x_j)` by the Markov property.
pub fn path_probability(model: &BranchingModel, ev: &PathEvent) -> Result<f64> {
    check_dim(model, &ev.x0)?;
    let mut p = 1.0;
    for (from, to, lag) in ev.legs() {
        p *= transition_probability(model, from, to, lag)?;
        if p == 0.0 {
            break;
        }
    }
    Ok(p)
}

/// Law of X_1 when X_0 has law `dist` (on the same box), truncated.
/// Horner's scheme in every coordinate except the last, where the powers
/// `f_d^j` are precomputed.
pub fn push_forward(model: &BranchingModel, dist: &LatticeArray) -> LatticeArray {
    let bx = &dist.bx;
    let d = bx.dim();
    let last_cap = bx.upper[d - 1];
    let mut powers = Vec::with_capacity(last_cap as usize + 1);
    powers.push(LatticeArray::delta(bx, &vec![0; d]));
    for j in 1..=last_cap as usize {
        let next = powers[j - 1].mul_sparse(model.law(d - 1).atoms());
        powers.push(next);
    }
    let mut prefix = Vec::with_capacity(d);
    horner(model, dist, &powers, 0, &mut prefix, 0)
}

fn horner(
    model: &BranchingModel,
    dist: &LatticeArray,
    powers: &[LatticeArray],
    level: usize,
    prefix: &mut Vec<u32>,
    base: usize,
) -> LatticeArray {
    let bx = &dist.bx;
    let d = bx.dim();
    let cap = bx.upper[level];
    let stride = bx.strides[level];
    let mut acc = LatticeArray::zeros(bx);
    if level == d - 1 {
        for j in 0..=cap as usize {
            let w = dist.values[base + j];
            if w != 0.0 {
                acc.axpy(w, &powers[j]);
            }
        }
        return acc;
    }
    let atoms = model.law(level).atoms();
    let mut started = false;
    for c in (0..=cap).rev() {
        let start = base + c as usize * stride;
        let block_nonzero = dist.values[start..start + stride].iter().any(|&v| v != 0.0);
        if started {
            acc = acc.mul_sparse(atoms);
        }
        if block_nonzero {
            prefix.push(c);
            let inner = horner(model, dist, powers, level + 1, prefix, start);
            prefix.pop();
            acc.axpy(1.0, &inner);
            started = true;
        }
    }
    acc
}

/// Explicit one-step kernel on a box. Each row keeps its nonzero retained
/// entries, the mass that leaves the box, and that mass's first moment.
#[derive(Clone, Debug)]
pub struct TransitionKernel {
    pub bx: LatticeBox,
    pub rows: Vec<KernelRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelRow {
    pub entries: Vec<(usize, f64)>,
    pub overflow: f64,
    pub overflow_moment: Vec<f64>,
}

impl TransitionKernel {
    pub fn build(model: &BranchingModel, bx: &LatticeBox) -> Result<Self> {
        if bx.dim() != model.dim() {
            return Err(GwError::Domain("box dimension differs from the model".into()));
        }
        if bx.len().saturating_mul(bx.len()) > MAX_KERNEL_ENTRIES {
            return Err(GwError::Unsupported(format!(
                "box {:?} is too large for an explicit kernel ({} states)",
                bx.upper(),
                bx.len()
            )));
        }
        let m = model.mean_matrix();
        let d = bx.dim();
        // coordinatewise largest offspring vector of each type
        let kmax: Vec<Vec<u32>> = model
            .laws()
            .iter()
            .map(|l| (0..d).map(|j| l.support().map(|(k, _)| k[j]).max().unwrap_or(0)).collect())
            .collect();
        let mut dense: Vec<LatticeArray> = Vec::with_capacity(bx.len());
        let mut rows = Vec::with_capacity(bx.len());
        for idx in 0..bx.len() {
            let x = bx.state(idx);
            let row = match x.iter().rposition(|&c| c > 0) {
                None => LatticeArray::delta(bx, &x),
                Some(j) => dense[idx - bx.strides[j]].mul_sparse(model.law(j).atoms()),
            };
            let mean: Vec<f64> = m.vec_mul(&x.iter().map(|&a| a as f64).collect::<Vec<_>>());
            let mut retained_moment = vec![0.0; d];
            let mut retained = 0.0;
            let mut entries = Vec::new();
            for (i, &p) in row.values.iter().enumerate() {
                if p != 0.0 {
                    entries.push((i, p));
                    retained += p;
                    for (r, c) in retained_moment.iter_mut().zip(bx.state(i)) {
                        *r += p * c as f64;
                    }
                }
            }
            let contained = (0..d).all(|j| x.iter().zip(&kmax).map(|(&xi, k)| xi * k[j]).sum::<u32>() <= bx.upper[j]);
            rows.push(if contained {
                KernelRow { entries, overflow: 0.0, overflow_moment: vec![0.0; d] }
            } else {
                KernelRow {
                    entries,
                    overflow: (1.0 - retained).max(0.0),
                    overflow_moment: mean.iter().zip(&retained_moment).map(|(a, b)| (a - b).max(0.0)).collect(),
                }
            });
            dense.push(row);
        }
        Ok(TransitionKernel { bx: bx.clone(), rows })
    }

    /// `sum_x mu(x) P(x, .)` on the box.
    pub fn left_apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bx.len()];
        for (w, row) in mu.iter().zip(&self.rows) {
            if *w == 0.0 {
                continue;
            }
            for &(j, p) in &row.entries {
                out[j] += w * p;
            }
        }
        out
    }

    /// Reachability from `from` in at most `max_steps` steps, on supports.
    pub fn reachable(&self, from: usize, max_steps: usize) -> Vec<bool> {
        let mut seen = vec![false; self.bx.len()];
        seen[from] = true;
        let mut frontier = vec![from];
        for _ in 0..max_steps {
            let mut next = Vec::new();
            for &x in &frontier {
                for &(y, _) in &self.rows[x].entries {
                    if !seen[y] {
                        seen[y] = true;
                        next.push(y);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen
    }
}

/// Joint law of `(X_k, N_k)` where `N_k = X_0 + ... + X_k`.
#[derive(Clone, Debug)]
pub struct JointDistribution {
    pub state_box: LatticeBox,
    pub progeny_box: LatticeBox,
    /// Indexed by `state_index * progeny_box.len() + progeny_index`.
    pub mass: Vec<f64>,
    /// Mass whose state left `state_box` while its progeny stayed in range.
    pub overflow_state: f64,
    /// Mass whose progeny left `progeny_box` (it never comes back).
    pub overflow_progeny: f64,
}

impl JointDistribution {
    pub fn get(&self, x: &[u32], n: &[u32]) -> f64 {
        match (self.state_box.index(x), self.progeny_box.index(n)) {
            (Some(i), Some(j)) => self.mass[i * self.progeny_box.len() + j],
            _ => 0.0,
        }
    }

    /// Law of X_k (progeny summed out).
    pub fn state_marginal(&self) -> LatticeArray {
        let mut out = LatticeArray::zeros(&self.state_box);
        let np = self.progeny_box.len();
        for (i, v) in out.values.iter_mut().enumerate() {
            *v = self.mass[i * np..(i + 1) * np].iter().sum();
        }
        out
    }

    /// Mass at state 0 indexed by progeny.
    pub fn extinct_slice(&self) -> LatticeArray {
        let np = self.progeny_box.len();
        LatticeArray { bx: self.progeny_box.clone(), values: self.mass[..np].to_vec() }
    }
}

/// Forward dynamic programme over `(X_k, N_k)`.
pub fn joint_state_progeny(
    model: &BranchingModel,
    x0: &[u32],
    k: u32,
    state_box: &LatticeBox,
    progeny_box: &LatticeBox,
) -> Result<JointDistribution> {
    check_dim(model, x0)?;
    if !state_box.contains(x0) || !progeny_box.contains(x0) {
        return Err(GwError::Domain(format!("initial state {x0:?} lies outside the boxes")));
    }
    let d = model.dim();
    let ns = state_box.len();
    let np = progeny_box.len();
    if ns.saturating_mul(np) > MAX_KERNEL_ENTRIES {
        return Err(GwError::Unsupported("joint state/progeny table is too large".into()));
    }
    // One-step laws for every state, on a box wide enough for both targets.
    let reach = LatticeBox::new_unchecked(
        state_box.upper.iter().zip(&progeny_box.upper).map(|(a, b)| *a.max(b)).collect(),
    );
    let kernel = TransitionKernel::build(model, &reach)?;
    let mut mass = vec![0.0; ns * np];
    mass[state_box.index(x0).unwrap() * np + progeny_box.index(x0).unwrap()] = 1.0;
    let mut overflow_state = 0.0;
    let mut overflow_progeny = 0.0;
    let prog_coords = progeny_box.coordinates();
    // Per state: (target state index, offspring vector, progeny index offset, p).
    let moves: Vec<Vec<(Option<usize>, State, usize, f64)>> = (0..ns)
        .map(|si| {
            let row = &kernel.rows[reach.index(&state_box.state(si)).unwrap()];
            row.entries
                .iter()
                .map(|&(yi, p)| {
                    let y = reach.state(yi);
                    let offset = y.iter().zip(&progeny_box.strides).map(|(&c, s)| c as usize * s).sum();
                    (state_box.index(&y), y, offset, p)
                })
                .collect()
        })
        .collect();
    let row_overflow: Vec<f64> =
        (0..ns).map(|si| kernel.rows[reach.index(&state_box.state(si)).unwrap()].overflow).collect();
    let pu = &progeny_box.upper;
    for _ in 0..k {
        let mut next = vec![0.0; ns * np];
        for si in 0..ns {
            let slab = &mass[si * np..(si + 1) * np];
            if slab.iter().all(|&w| w == 0.0) {
                continue;
            }
            overflow_progeny += slab.iter().sum::<f64>() * row_overflow[si];
            for (pj, &w) in slab.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let m = &prog_coords[pj * d..(pj + 1) * d];
                for (target, y, offset, p) in &moves[si] {
                    if m.iter().zip(y).zip(pu).any(|((a, b), u)| a + b > *u) {
                        overflow_progeny += w * p;
                    } else if let Some(t) = target {
                        next[t * np + pj + offset] += w * p;
                    } else {
                        overflow_state += w * p;
                    }
                }
            }
        }
        mass = next;
    }
    Ok(JointDistribution {
        state_box: state_box.clone(),
        progeny_box: progeny_box.clone(),
        mass,
        overflow_state,
        overflow_progeny,
    })
}
