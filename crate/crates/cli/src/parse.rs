use gwlab::conditioning::set::{parse_state, ConditioningSet};
use gwlab::tilt::TiltVector;
use gwlab::{GwError, LatticeBox, PathEvent, Result, State};

pub fn state(text: &str, d: usize) -> Result<State> {
    parse_state(text, d)
}

/// `c` (a cube) or `c1,...,cd`.
pub fn lattice_box(text: &str, d: usize) -> Result<LatticeBox> {
    let caps: Vec<u32> = text
        .trim()
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split(',')
        .map(|c| c.trim().parse().map_err(|_| GwError::Domain(format!("bad box cap {c:?}"))))
        .collect::<Result<_>>()?;
    match caps.len() {
        1 => LatticeBox::cube(d, caps[0]),
        n if n == d => LatticeBox::new(caps),
        _ => Err(GwError::Domain(format!("box {text:?} needs 1 or {d} caps"))),
    }
}

/// `x0;k1:x1;k2:x2`, e.g. `(1,0);2:(1,1)` or `1;1:2`.
pub fn path(text: &str, d: usize) -> Result<PathEvent> {
    let mut parts = text.split(';');
    let x0 = state(parts.next().unwrap_or(""), d)?;
    let steps = parts
        .map(|p| {
            let (k, x) = p
                .split_once(':')
                .ok_or_else(|| GwError::Domain(format!("path step {p:?} is not of the form k:state")))?;
            let k = k.trim().parse().map_err(|_| GwError::Domain(format!("bad time {k:?}")))?;
            Ok((k, state(x, d)?))
        })
        .collect::<Result<Vec<_>>>()?;
    PathEvent::new(x0, steps)
}

pub fn set(text: &str, d: usize) -> Result<ConditioningSet> {
    ConditioningSet::parse(text, d)
}

/// `a..b`, `a..b:step` or a comma list.
pub fn range(text: &str) -> Result<Vec<u32>> {
    let bad = || GwError::Domain(format!("bad range {text:?}"));
    let num = |s: &str| s.trim().parse::<u32>().map_err(|_| bad());
    if let Some((a, rest)) = text.split_once("..") {
        let (b, step) = match rest.split_once(':') {
            Some((b, s)) => (num(b)?, num(s)?),
            None => (num(rest)?, 1),
        };
        let a = num(a)?;
        if step == 0 || b < a {
            return Err(bad());
        }
        return Ok((a..=b).step_by(step as usize).collect());
    }
    text.split(',').map(num).collect()
}

pub fn vector(text: &str, d: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .trim()
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split(',')
        .map(|c| c.trim().parse().map_err(|_| GwError::Domain(format!("bad number {c:?}"))))
        .collect::<Result<_>>()?;
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v),
        _ => Err(GwError::Domain(format!("vector {text:?} needs 1 or {d} entries"))),
    }
}

pub fn tilt(text: &str, d: usize) -> Result<TiltVector> {
    TiltVector::new(vector(text, d)?)
}
