//! Multitype offspring laws with finite support, their generating functions
//! and moments.

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::matrix::Matrix;
use crate::spectral::primitivity_witness;

/// A point of the integer lattice N^d (a population or an offspring vector).
pub type State = Vec<u32>;

/// Tolerance on the total mass of an input law.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Totals closer to one than this are kept as given, which makes loading a
/// saved model idempotent.
const ROUNDOFF_TOL: f64 = 1e-15;

/// `r^k = prod r_i^{k_i}`.
pub fn lattice_pow(r: &[f64], k: &[u32]) -> f64 {
    r.iter().zip(k).map(|(&ri, &ki)| ri.powi(ki as i32)).product()
}

/// `1 - (1 - s)^k`, accurate when the entries of `s` are tiny.
pub fn one_minus_pow_complement(s: &[f64], k: &[u32]) -> f64 {
    let mut log = 0.0;
    for (&si, &ki) in s.iter().zip(k) {
        if ki > 0 {
            log += ki as f64 * (-si).ln_1p();
        }
    }
    -log.exp_m1()
}

/// Offspring distribution of one type: finitely many atoms `(k, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffspringLaw {
    atoms: Vec<(State, f64)>,
}

impl OffspringLaw {
    /// Unvalidated constructor; [`BranchingModel::new`] does the checks.
    pub fn new(atoms: Vec<(State, f64)>) -> Self {
        OffspringLaw { atoms }
    }

    pub fn atoms(&self) -> &[(State, f64)] {
        &self.atoms
    }

    /// Atoms carrying positive mass.
    pub fn support(&self) -> impl Iterator<Item = &(State, f64)> {
        self.atoms.iter().filter(|(_, p)| *p > 0.0)
    }

    /// `sum_k p(k) r^k` for any nonnegative `r` (no domain check).
    pub fn pgf(&self, r: &[f64]) -> f64 {
        self.atoms.iter().map(|(k, p)| p * lattice_pow(r, k)).sum()
    }

    /// `1 - pgf(1 - s)` evaluated without cancellation.
    pub fn pgf_complement(&self, s: &[f64]) -> f64 {
        self.atoms
            .iter()
            .map(|(k, p)| p * one_minus_pow_complement(s, k))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.atoms.first().map_or(0, |(k, _)| k.len());
        let mut m = vec![0.0; d];
        for (k, p) in &self.atoms {
            for (mj, &kj) in m.iter_mut().zip(k) {
                *mj += p * kj as f64;
            }
        }
        m
    }

    pub fn covariance(&self) -> Matrix {
        let m = self.mean();
        let d = m.len();
        let mut c = Matrix::zeros(d);
        for (k, p) in &self.atoms {
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += p * (k[i] as f64 - m[i]) * (k[j] as f64 - m[j]);
                }
            }
        }
        c
    }
}

/// A d-type Galton-Watson offspring mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct BranchingModel {
    d: usize,
    laws: Vec<OffspringLaw>,
}

/// Structural facts about a model, computed from the finite supports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub nonsingular: bool,
    pub positive_regular: bool,
    /// Smallest n with M^n > 0, when one exists.
    pub primitivity_witness: Option<u32>,
    pub aperiodic_a5: bool,
    /// Not decided here; see `tilt::extinction_vector`.
    pub q_positive: Option<bool>,
    /// `None` means moments of every order exist (finite support).
    pub moment_orders_available: Option<u32>,
}

impl BranchingModel {
    /// Validates and builds a model. Laws whose total mass is within
    /// [`NORMALIZATION_TOL`] of one are renormalized, others rejected.
    pub fn new(laws: Vec<OffspringLaw>) -> Result<Self> {
        let d = laws.len();
        if d == 0 {
            return Err(GwError::InvalidModel("a model needs at least one type".into()));
        }
        let mut out = Vec::with_capacity(d);
        for (i, law) in laws.into_iter().enumerate() {
            let bad = |message: String| GwError::InvalidLaw { type_index: i, message };
            if law.atoms.is_empty() {
                return Err(bad("law has no atoms".into()));
            }
            let mut seen = std::collections::HashSet::new();
            let mut total = 0.0;
            for (k, p) in &law.atoms {
                if k.len() != d {
                    return Err(bad(format!("offspring vector {k:?} has length {} but d = {d}", k.len())));
                }
                if !p.is_finite() || *p < 0.0 {
                    return Err(bad(format!("mass {p} at {k:?} is not a probability")));
                }
                if !seen.insert(k.clone()) {
                    return Err(bad(format!("offspring vector {k:?} listed twice")));
                }
                total += p;
            }
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(bad(format!("masses sum to {total}, not 1")));
            }
            let scale = if (total - 1.0).abs() <= ROUNDOFF_TOL { 1.0 } else { total };
            let atoms = law.atoms.into_iter().map(|(k, p)| (k, p / scale)).collect();
            out.push(OffspringLaw { atoms });
        }
        Ok(BranchingModel { d, laws: out })
    }

    /// Convenience constructor from `(k, p)` lists, one per type.
    pub fn from_atoms(laws: Vec<Vec<(State, f64)>>) -> Result<Self> {
        Self::new(laws.into_iter().map(OffspringLaw::new).collect())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn laws(&self) -> &[OffspringLaw] {
        &self.laws
    }

    pub fn law(&self, i: usize) -> &OffspringLaw {
        &self.laws[i]
    }

    fn check_unit_cube(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.d {
            return Err(GwError::Domain(format!("expected {} coordinates, got {}", self.d, r.len())));
        }
        if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(GwError::Domain(format!("{r:?} is not in [0,1]^d")));
        }
        Ok(())
    }

    /// Offspring generating function on `[0,1]^d`.
    pub fn gen_fn(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_unit_cube(r)?;
        Ok(self.evaluate(r))
    }

    /// `f(r)` for any nonnegative `r`; tilting needs points outside the cube.
    pub fn evaluate(&self, r: &[f64]) -> Vec<f64> {
        self.laws.iter().map(|l| l.pgf(r)).collect()
    }

    /// `f_n(r)`, the n-fold composition.
    pub fn gen_fn_iterate(&self, r: &[f64], n: u32) -> Result<Vec<f64>> {
        self.check_unit_cube(r)?;
        let mut x = r.to_vec();
        for _ in 0..n {
            x = self.evaluate(&x);
        }
        Ok(x)
    }

    /// `s -> 1 - f(1 - s)`; iterating it from `s = 1` gives survival
    /// probabilities `1 - f_n(0)` at full relative precision.
    pub fn complement_step(&self, s: &[f64]) -> Vec<f64> {
        self.laws.iter().map(|l| l.pgf_complement(s)).collect()
    }

    /// `1 - f_n(0)` for n = 0..=n_max.
    pub fn survival_sequence(&self, n_max: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n_max + 1);
        let mut s = vec![1.0; self.d];
        out.push(s.clone());
        for _ in 0..n_max {
            s = self.complement_step(&s);
            out.push(s.clone());
        }
        out
    }

    pub fn mean_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.laws.iter().map(|l| l.mean()).collect::<Vec<_>>())
    }

    pub fn covariance_matrices(&self) -> Vec<Matrix> {
        self.laws.iter().map(|l| l.covariance()).collect()
    }

    pub fn validate(&self) -> ModelDiagnostics {
        // f(r) = Mr identically iff every individual has exactly one child.
        let nonsingular = self
            .laws
            .iter()
            .any(|l| l.support().any(|(k, _)| k.iter().sum::<u32>() != 1));
        let witness = primitivity_witness(&self.mean_matrix());
        ModelDiagnostics {
            nonsingular,
            positive_regular: witness.is_some(),
            primitivity_witness: witness,
            aperiodic_a5: self.aperiodic_direction().is_none(),
            q_positive: None,
            moment_orders_available: None,
        }
    }

    /// First direction j for which no type has two support points differing
    /// by e_j, if any.
    pub fn aperiodic_direction(&self) -> Option<usize> {
        (0..self.d).find(|&j| {
            !self.laws.iter().any(|l| {
                l.support().any(|(k, _)| {
                    let mut shifted = k.clone();
                    shifted[j] += 1;
                    l.support().any(|(k2, _)| *k2 == shifted)
                })
            })
        })
    }

    pub fn to_file(&self) -> ModelFile {
        self.clone().into()
    }
}

// ---------------------------------------------------------------------------
// JSON representation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomFile {
    pub k: Vec<u32>,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeFile {
    pub atoms: Vec<AtomFile>,
}

/// On-disk model: `{ "d": .., "types": [ { "atoms": [ { "k": [..], "p": .. } ] } ] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub d: usize,
    pub types: Vec<TypeFile>,
}

impl TryFrom<ModelFile> for BranchingModel {
    type Error = GwError;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.types.len() != file.d {
            return Err(GwError::InvalidModel(format!(
                "d = {} but {} types were given",
                file.d,
                file.types.len()
            )));
        }
        BranchingModel::from_atoms(
            file.types
                .into_iter()
                .map(|t| t.atoms.into_iter().map(|a| (a.k, a.p)).collect())
                .collect(),
        )
    }
}

impl From<BranchingModel> for ModelFile {
    fn from(m: BranchingModel) -> Self {
        ModelFile {
            d: m.d,
            types: m
                .laws
                .into_iter()
                .map(|l| TypeFile {
                    atoms: l.atoms.into_iter().map(|(k, p)| AtomFile { k, p }).collect(),
                })
                .collect(),
        }
    }
}

impl BranchingModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| GwError::InvalidModel(e.to_string()))?;
        BranchingModel::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }
}
