//! Plain simulation and rejection sampling, used as an independent check on
//! the exact routines. Each replicate draws from its own ChaCha stream
//! `(seed, replicate)`, and only integer counts are merged, so results do
//! not depend on the number of worker threads.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conditioning::ConditioningSet;
use crate::error::{GwError, Result};
use crate::lattice::PathEvent;
use crate::model::{BranchingModel, State};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: u64,
    /// Maximum number of generations simulated.
    pub horizon: u32,
    /// A replicate whose population `||X_k||_1` exceeds this is censored.
    pub population_cap: u64,
    /// A replicate whose progeny `||N_k||_1` exceeds this is censored.
    pub progeny_cap: u64,
}

impl SimConfig {
    pub fn new(seed: u64, replicates: u64, horizon: u32) -> Result<Self> {
        if replicates == 0 || horizon == 0 {
            return Err(GwError::Domain("replicates and horizon must be at least 1".into()));
        }
        Ok(SimConfig { seed, replicates, horizon, population_cap: 100_000, progeny_cap: u64::MAX })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub estimate: f64,
    pub std_error: f64,
    /// Replicates satisfying the condition.
    pub effective: u64,
    pub replicates: u64,
    pub censored: u64,
}

impl EstimateWithError {
    fn from_counts(hits: u64, effective: u64, replicates: u64, censored: u64) -> Result<Self> {
        if effective == 0 {
            return Err(GwError::NoAcceptance { replicates });
        }
        let p = hits as f64 / effective as f64;
        Ok(EstimateWithError {
            estimate: p,
            std_error: (p * (1.0 - p) / effective as f64).sqrt(),
            effective,
            replicates,
            censored,
        })
    }

    /// `|estimate - exact| <= k * std_error`.
    pub fn agrees_with(&self, exact: f64, k: f64) -> bool {
        (self.estimate - exact).abs() <= k * self.std_error
    }
}

/// One simulated trajectory, `states[k] = X_k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    /// Generation at which the population hit 0, if it did.
    pub extinct_at: Option<u32>,
    pub censored: bool,
    /// `N_k` at the last simulated generation.
    pub progeny: State,
}

impl Trajectory {
    /// `X_k`, with 0 after extinction; `None` beyond the simulated range.
    pub fn at(&self, k: u32) -> Option<State> {
        match self.states.get(k as usize) {
            Some(x) => Some(x.clone()),
            None if self.extinct_at.is_some() => Some(vec![0; self.progeny.len()]),
            None => None,
        }
    }

    pub fn follows(&self, ev: &PathEvent) -> bool {
        ev.steps.iter().all(|(k, x)| self.at(*k).as_ref() == Some(x))
    }
}

struct Sampler {
    children: Vec<Vec<State>>,
    index: Vec<WeightedIndex<f64>>,
}

impl Sampler {
    fn new(model: &BranchingModel) -> Result<Self> {
        let mut children = Vec::new();
        let mut index = Vec::new();
        for law in model.laws() {
            let atoms: Vec<&(State, f64)> = law.support().collect();
            children.push(atoms.iter().map(|a| a.0.clone()).collect());
            index.push(
                WeightedIndex::new(atoms.iter().map(|a| a.1))
                    .map_err(|e| GwError::InvalidModel(format!("cannot sample offspring law: {e}")))?,
            );
        }
        Ok(Sampler { children, index })
    }

    fn step(&self, x: &[u32], rng: &mut ChaCha8Rng) -> State {
        let mut next = vec![0u32; x.len()];
        for (i, &count) in x.iter().enumerate() {
            for _ in 0..count {
                let child = &self.children[i][self.index[i].sample(rng)];
                for (n, c) in next.iter_mut().zip(child) {
                    *n += c;
                }
            }
        }
        next
    }
}

/// When a replicate may stop early.
#[derive(Clone, Copy, Debug)]
struct StopRule {
    /// Generations that must be simulated (unless extinct first).
    min_generations: u32,
    /// Keep going after `min_generations` until extinction.
    to_extinction: bool,
}

fn run(model_sampler: &Sampler, x0: &[u32], cfg: &SimConfig, rep: u64, stop: StopRule) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep);
    let mut x = x0.to_vec();
    let mut progeny = x0.to_vec();
    let mut states = vec![x.clone()];
    let norm = |s: &[u32]| s.iter().map(|&c| c as u64).sum::<u64>();
    let mut censored = false;
    let mut extinct_at = None;
    for k in 1..=cfg.horizon {
        if x.iter().all(|&c| c == 0) {
            extinct_at = Some(k - 1);
            break;
        }
        if k > stop.min_generations && !stop.to_extinction {
            break;
        }
        x = model_sampler.step(&x, &mut rng);
        for (n, c) in progeny.iter_mut().zip(&x) {
            *n += c;
        }
        states.push(x.clone());
        if norm(&x) > cfg.population_cap || norm(&progeny) > cfg.progeny_cap {
            censored = true;
            break;
        }
    }
    if extinct_at.is_none() && !censored && x.iter().all(|&c| c == 0) {
        extinct_at = Some(states.len() as u32 - 1);
    }
    if extinct_at.is_none() && !censored && stop.to_extinction {
        censored = true;
    }
    Trajectory { states, extinct_at, censored, progeny }
}

/// `cfg.replicates` independent trajectories of length at most the horizon.
pub fn simulate(model: &BranchingModel, x0: &[u32], cfg: &SimConfig) -> Result<Vec<Trajectory>> {
    let sampler = Sampler::new(model)?;
    check_start(model, x0)?;
    let stop = StopRule { min_generations: cfg.horizon, to_extinction: false };
    Ok((0..cfg.replicates).into_par_iter().map(|rep| run(&sampler, x0, cfg, rep, stop)).collect())
}

fn check_start(model: &BranchingModel, x0: &[u32]) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(GwError::Domain(format!("x0 has dimension {}, model has {}", x0.len(), model.dim())));
    }
    Ok(())
}

/// Fraction of trajectories extinct by the horizon, with its standard error.
pub fn extinct_fraction(sample: &[Trajectory]) -> EstimateWithError {
    let hits = sample.iter().filter(|t| t.extinct_at.is_some()).count() as u64;
    let censored = sample.iter().filter(|t| t.censored).count() as u64;
    let n = sample.len() as u64;
    EstimateWithError::from_counts(hits, n, n, censored).expect("nonempty sample")
}

/// Componentwise sample mean of X_k and its standard error.
pub fn mean_at(sample: &[Trajectory], k: u32) -> Option<(Vec<f64>, Vec<f64>)> {
    let xs: Vec<State> = sample.iter().map(|t| t.at(k)).collect::<Option<_>>()?;
    let n = xs.len() as f64;
    let d = xs.first()?.len();
    let mean: Vec<f64> = (0..d).map(|i| xs.iter().map(|x| x[i] as f64).sum::<f64>() / n).collect();
    let se = (0..d)
        .map(|i| {
            let var = xs.iter().map(|x| (x[i] as f64 - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    Some((mean, se))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Condition {
    /// No conditioning.
    Always,
    /// `X_{k_j + lag} in S`, optionally together with `T < inf`.
    SetAtLag { set: ConditioningSet, lag: u32, given_extinction: bool },
    /// `N = n`.
    Progeny(State),
}

/// `P(path | condition)` by rejection.
///
/// Under `given_extinction` a replicate must die out within the horizon to
/// be accepted; replicates censored by the caps are counted as surviving.
pub fn conditioned_estimate(
    model: &BranchingModel,
    ev: &PathEvent,
    condition: &Condition,
    cfg: &SimConfig,
) -> Result<EstimateWithError> {
    check_start(model, &ev.x0)?;
    let sampler = Sampler::new(model)?;
    let kj = ev.last_time();
    let stop = match condition {
        Condition::Always => StopRule { min_generations: kj, to_extinction: false },
        Condition::SetAtLag { lag, given_extinction, .. } => {
            StopRule { min_generations: kj + lag, to_extinction: *given_extinction }
        }
        Condition::Progeny(_) => StopRule { min_generations: kj, to_extinction: true },
    };
    if stop.min_generations > cfg.horizon {
        return Err(GwError::Domain(format!("horizon {} is shorter than the event ({})", cfg.horizon, stop.min_generations)));
    }
    let mut local = cfg.clone();
    if let Condition::Progeny(n) = condition {
        if n.len() != model.dim() {
            return Err(GwError::Domain("progeny target has the wrong dimension".into()));
        }
        // Past ||n||_1 the event is already decided.
        local.progeny_cap = local.progeny_cap.min(n.iter().map(|&c| c as u64).sum());
    }
    let (hits, accepted, censored) = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| {
            let t = run(&sampler, &ev.x0, &local, rep, stop);
            let ok = match condition {
                Condition::Always => !t.censored,
                Condition::SetAtLag { set, lag, given_extinction } => {
                    !t.censored
                        && t.at(kj + lag).is_some_and(|x| set.contains(&x))
                        && (!given_extinction || t.extinct_at.is_some())
                }
                Condition::Progeny(n) => t.extinct_at.is_some() && t.progeny == *n,
            };
            let progeny_overrun = matches!(condition, Condition::Progeny(_)) && t.extinct_at.is_none();
            let censored = t.censored && !progeny_overrun;
            (u64::from(ok && t.follows(ev)), u64::from(ok), u64::from(censored))
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    EstimateWithError::from_counts(hits, accepted, cfg.replicates, censored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn deterministic_law_is_constant() {
        let m = BranchingModel::from_atoms(vec![vec![(vec![1], 1.0)]]).unwrap();
        let s = simulate(&m, &[1], &SimConfig::new(1, 50, 10).unwrap()).unwrap();
        assert!(s.iter().all(|t| t.states.iter().all(|x| x == &vec![1])));
    }

    #[test]
    fn same_seed_same_numbers() {
        let c = fixtures::model_c();
        let cfg = SimConfig::new(7, 2000, 6).unwrap();
        let ev = PathEvent::single(vec![1, 1], 2, vec![1, 1]).unwrap();
        let cond = Condition::SetAtLag { set: ConditioningSet::NonExtinct, lag: 2, given_extinction: false };
        let a = conditioned_estimate(&c, &ev, &cond, &cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| conditioned_estimate(&c, &ev, &cond, &cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(simulate(&c, &[1, 0], &cfg).unwrap(), simulate(&c, &[1, 0], &cfg).unwrap());
    }

    #[test]
    fn model_a_dies_a_third_of_the_time() {
        let a = fixtures::model_a();
        let mut cfg = SimConfig::new(11, 100_000, 60).unwrap();
        cfg.population_cap = 200;
        let s = simulate(&a, &[1], &cfg).unwrap();
        let e = extinct_fraction(&s);
        assert!(e.agrees_with(1.0 / 3.0, 3.0), "{e:?}");
    }

    #[test]
    fn model_c_mean() {
        let c = fixtures::model_c();
        let s = simulate(&c, &[1, 0], &SimConfig::new(3, 100_000, 3).unwrap()).unwrap();
        let (mean, se) = mean_at(&s, 3).unwrap();
        let m3 = c.mean_matrix().pow(3);
        for j in 0..2 {
            assert!((mean[j] - m3[(0, j)]).abs() <= 3.0 * se[j], "{j}: {} vs {}", mean[j], m3[(0, j)]);
        }
    }

    #[test]
    fn progeny_condition_model_b() {
        let b = fixtures::model_b();
        let ev = PathEvent::single(vec![1], 1, vec![2]).unwrap();
        let est = conditioned_estimate(&b, &ev, &Condition::Progeny(vec![7]), &SimConfig::new(5, 100_000, 50).unwrap()).unwrap();
        let exact = crate::progeny::progeny_conditioned_path_law(&b, &ev, &[7]).unwrap();
        assert!(est.agrees_with(exact, 3.0), "{est:?} vs {exact}");
    }

    #[test]
    fn no_acceptance_is_an_error() {
        let a = fixtures::model_a();
        let ev = PathEvent::single(vec![1], 1, vec![2]).unwrap();
        let cond = Condition::SetAtLag { set: ConditioningSet::FiniteSet(vec![vec![1]]), lag: 3, given_extinction: true };
        let r = conditioned_estimate(&a, &ev, &cond, &SimConfig::new(1, 1000, 50).unwrap());
        assert!(matches!(r, Err(GwError::NoAcceptance { replicates: 1000 })));
    }
}
