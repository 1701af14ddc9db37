use std::fmt;

use serde::Serialize;

use crate::error::{GwError, Result};
use crate::model::State;

/// A target set S of nonzero populations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ConditioningSet {
    FiniteSet(Vec<State>),
    /// S is everything nonzero except the listed states.
    CofiniteComplement(Vec<State>),
    NormEquals(u32),
    NormAtLeast(u32),
    NonExtinct,
}

fn norm(x: &[u32]) -> u32 {
    x.iter().sum()
}

/// All states of N^d with `||x||_1 = m`, in lexicographic order.
pub fn norm_level(d: usize, m: u32) -> Vec<State> {
    fn rec(d: usize, m: u32, prefix: &mut State, out: &mut Vec<State>) {
        if d == 1 {
            prefix.push(m);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=m).rev() {
            prefix.push(a);
            rec(d - 1, m - a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, m, &mut Vec::with_capacity(d), &mut out);
    out
}

impl ConditioningSet {
    pub fn validate(&self, d: usize) -> Result<()> {
        let check = |states: &[State]| -> Result<()> {
            for s in states {
                if s.len() != d {
                    return Err(GwError::Domain(format!("state {s:?} does not have {d} coordinates")));
                }
                if norm(s) == 0 {
                    return Err(GwError::Domain("the zero state never belongs to S".into()));
                }
            }
            Ok(())
        };
        match self {
            ConditioningSet::FiniteSet(s) => {
                if s.is_empty() {
                    return Err(GwError::Domain("finite conditioning set is empty".into()));
                }
                check(s)
            }
            ConditioningSet::CofiniteComplement(s) => check(s),
            ConditioningSet::NormEquals(m) | ConditioningSet::NormAtLeast(m) if *m == 0 => {
                Err(GwError::Domain("norm level must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &[u32]) -> bool {
        let n = norm(x);
        if n == 0 {
            return false;
        }
        match self {
            ConditioningSet::FiniteSet(s) => s.iter().any(|y| y.as_slice() == x),
            ConditioningSet::CofiniteComplement(s) => !s.iter().any(|y| y.as_slice() == x),
            ConditioningSet::NormEquals(m) => n == *m,
            ConditioningSet::NormAtLeast(m) => n >= *m,
            ConditioningSet::NonExtinct => true,
        }
    }

    /// `Some(states)` when S is finite.
    pub fn finite_members(&self, d: usize) -> Option<Vec<State>> {
        match self {
            ConditioningSet::FiniteSet(s) => Some(dedup(s.clone())),
            ConditioningSet::NormEquals(m) => Some(norm_level(d, *m)),
            _ => None,
        }
    }

    /// Nonzero states outside S, when there are finitely many.
    pub fn finite_complement(&self, d: usize) -> Option<Vec<State>> {
        match self {
            ConditioningSet::CofiniteComplement(s) => Some(dedup(s.clone())),
            ConditioningSet::NormAtLeast(m) => Some((1..*m).flat_map(|k| norm_level(d, k)).collect()),
            ConditioningSet::NonExtinct => Some(Vec::new()),
            _ => None,
        }
    }

    /// Parses `finite:[(1,1),(2,0)]`, `cofinite:[...]`, `norm=3`,
    /// `norm>=3` or `nonextinct`. One-type states may omit the parentheses.
    pub fn parse(text: &str, d: usize) -> Result<Self> {
        let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let set = if t == "nonextinct" {
            ConditioningSet::NonExtinct
        } else if let Some(m) = t.strip_prefix("norm>=") {
            ConditioningSet::NormAtLeast(parse_u32(m)?)
        } else if let Some(m) = t.strip_prefix("norm=") {
            ConditioningSet::NormEquals(parse_u32(m)?)
        } else if let Some(list) = t.strip_prefix("finite:") {
            ConditioningSet::FiniteSet(parse_state_list(list, d)?)
        } else if let Some(list) = t.strip_prefix("cofinite:") {
            ConditioningSet::CofiniteComplement(parse_state_list(list, d)?)
        } else {
            return Err(GwError::Domain(format!("cannot parse conditioning set {text:?}")));
        };
        set.validate(d)?;
        Ok(set)
    }
}

fn dedup(mut v: Vec<State>) -> Vec<State> {
    v.sort();
    v.dedup();
    v
}

fn parse_u32(s: &str) -> Result<u32> {
    s.parse().map_err(|_| GwError::Domain(format!("expected a nonnegative integer, got {s:?}")))
}

/// Parses one state: `(1,2)`, `1,2` or `3`.
pub fn parse_state(text: &str, d: usize) -> Result<State> {
    let t = text.trim().trim_start_matches('(').trim_end_matches(')');
    let s: State = t.split(',').map(|c| parse_u32(c.trim())).collect::<Result<_>>()?;
    if s.len() != d {
        return Err(GwError::Domain(format!("state {text:?} does not have {d} coordinates")));
    }
    Ok(s)
}

/// Parses `[(1,1),(2,0)]` (or `[1,2,3]` when d = 1).
pub fn parse_state_list(text: &str, d: usize) -> Result<Vec<State>> {
    let inner = text
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| GwError::Domain(format!("expected a bracketed list, got {text:?}")))?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    if !inner.contains('(') {
        if d != 1 {
            return Err(GwError::Domain("multitype states need parentheses".into()));
        }
        return inner.split(',').map(|c| parse_state(c, 1)).collect();
    }
    inner
        .split(')')
        .map(|c| c.trim_start_matches(',').trim())
        .filter(|c| !c.is_empty())
        .map(|c| parse_state(c, d))
        .collect()
}

impl fmt::Display for ConditioningSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |s: &[State]| {
            s.iter()
                .map(|x| format!("({})", x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")))
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            ConditioningSet::FiniteSet(s) => write!(f, "finite:[{}]", list(s)),
            ConditioningSet::CofiniteComplement(s) => write!(f, "cofinite:[{}]", list(s)),
            ConditioningSet::NormEquals(m) => write!(f, "norm={m}"),
            ConditioningSet::NormAtLeast(m) => write!(f, "norm>={m}"),
            ConditioningSet::NonExtinct => write!(f, "nonextinct"),
        }
    }
}
