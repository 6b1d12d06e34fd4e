use serde::Serialize;

use super::ControlProblem;
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;

const COARSE_POINTS: usize = 64;
const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianEval {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub alpha: Vec<f64>,
    pub value: f64,
}

/// `H = b . y + f`.
pub fn hamiltonian(
    p: &ControlProblem,
    t: f64,
    x: &[f64],
    y: &[f64],
    mu: &EmpiricalMeasure,
    alpha: &[f64],
) -> Result<HamiltonianEval> {
    let b =
        p.b.as_ref()
            .ok_or_else(|| Error::Config("the control problem does not supply b".into()))?;
    let f =
        p.f.as_ref()
            .ok_or_else(|| Error::Config("the control problem does not supply f".into()))?;
    let bv = b(t, x, mu, alpha);
    let value = bv.iter().zip(y).map(|(b, y)| b * y).sum::<f64>() + f(t, x, mu, alpha);
    if !value.is_finite() {
        return Err(Error::numeric("Hamiltonian", alpha));
    }
    Ok(HamiltonianEval {
        t,
        x: x.to_vec(),
        y: y.to_vec(),
        alpha: alpha.to_vec(),
        value,
    })
}

/// `alpha_hat(t, x, y, mu)` when the problem supplies it; otherwise a
/// grid-bracketed golden-section search over `alpha_bounds` (nested for
/// two controls).
pub fn argmin_hamiltonian(
    p: &ControlProblem,
    t: f64,
    x: &[f64],
    y: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<Vec<f64>> {
    if let Some(a) = &p.alpha_hat {
        return Ok(a(t, x, y, mu));
    }
    let bounds = p.alpha_bounds.as_ref().ok_or_else(|| {
        Error::Config("supply alpha_hat or alpha_bounds to minimize the Hamiltonian".into())
    })?;
    if bounds.len() != p.k {
        return Err(Error::Config(format!(
            "alpha_bounds has {} intervals, k = {}",
            bounds.len(),
            p.k
        )));
    }
    let h = |a: &[f64]| hamiltonian(p, t, x, y, mu, a).map(|e| e.value);
    match p.k {
        1 => {
            let (lo, hi) = bounds[0];
            minimize_1d(|a| h(&[a]), lo, hi).map(|(a, _)| vec![a])
        }
        2 => {
            let (lo1, hi1) = bounds[0];
            let (lo2, hi2) = bounds[1];
            let inner = |a1: f64| minimize_1d(|a2| h(&[a1, a2]), lo2, hi2);
            let (a1, _) = minimize_1d(|a1| inner(a1).map(|(_, v)| v), lo1, hi1)?;
            let (a2, _) = inner(a1)?;
            Ok(vec![a1, a2])
        }
        k => Err(Error::Unsupported(format!(
            "numerical Hamiltonian minimization supports k <= 2 controls, got {k}"
        ))),
    }
}

/// Coarse grid scan, then golden-section inside the best cell pair.
/// Returns `(argmin, min)`; the result is never worse than the best grid
/// point.
pub(crate) fn minimize_1d<F>(h: F, lo: f64, hi: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!(
            "invalid control interval [{lo}, {hi}]"
        )));
    }
    if lo == hi {
        return Ok((lo, h(lo)?));
    }
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let mut best = (lo, h(lo)?);
    for i in 1..COARSE_POINTS {
        let a = if i + 1 == COARSE_POINTS {
            hi
        } else {
            lo + i as f64 * step
        };
        let v = h(a)?;
        if v < best.1 {
            best = (a, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (h(c)?, h(d)?);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (1.0 + best.0.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = h(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = h(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let fm = h(mid)?;
    Ok([(mid, fm), (c, fc), (d, fd), best]
        .into_iter()
        .fold(
            (f64::NAN, f64::INFINITY),
            |acc, v| if v.1 < acc.1 { v } else { acc },
        ))
}
