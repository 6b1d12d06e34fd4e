use serde::{Deserialize, Serialize};

use super::field::DecouplingField;
use super::forward::ParticlePaths;
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::measure::{diamond, w2, MeasureFlow};

/// RMS over particles and steps of
/// `Y_{k+1} - Y_k + F(t_k, X_k, Y_k, Z_k, nu_k) dt - Z_k dW_k`.
pub fn bsde_residual(
    paths: &ParticlePaths,
    field: &DecouplingField,
    c: &CoefficientSet,
    flow: &MeasureFlow,
) -> Result<f64> {
    let (p, m) = (c.dims.p, c.dims.m);
    if paths.dims != c.dims || field.value_dim() != p {
        return Err(Error::Dimension(
            "paths, field and coefficients disagree on dimensions".into(),
        ));
    }
    if flow.len() != paths.n_times() {
        return Err(Error::Grid(format!(
            "flow has {} time nodes, paths have {}",
            flow.len(),
            paths.n_times()
        )));
    }
    let n = paths.particles();
    let steps = paths.n_steps();
    let mut total = 0.0;
    for i in 0..n {
        for k in 0..steps {
            let (t, dt) = (paths.times[k], paths.dt(k));
            let (x, y, z, dw) = (paths.x(i, k), paths.y(i, k), paths.z(i, k), paths.dw(i, k));
            let f = (c.driver)(t, x, y, z, flow.at(k));
            let y1 = paths.y(i, k + 1);
            for q in 0..p {
                let noise: f64 = (0..m).map(|r| z[q * m + r] * dw[r]).sum();
                let r = y1[q] - y[q] + f[q] * dt - noise;
                total += r * r;
            }
        }
    }
    Ok((total / (n * steps) as f64).sqrt())
}

/// One side of a coupled comparison: the inputs `(phi, mu)` and the
/// particles they produced.
#[derive(Clone, Copy)]
pub struct StabilityRun<'a> {
    pub phi: &'a DecouplingField,
    /// Input law flow on R^d.
    pub mu: &'a MeasureFlow,
    pub paths: &'a ParticlePaths,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityGap {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// `ratio <= gamma_cap`.
    pub within_cap: bool,
}

/// Compares the pathwise distance of two coupled runs with the
/// Wasserstein distance of their inputs.
pub fn stability_gap(
    run1: StabilityRun<'_>,
    run2: StabilityRun<'_>,
    gamma_cap: f64,
) -> Result<StabilityGap> {
    let (a, b) = (run1.paths, run2.paths);
    if a.seed != b.seed {
        return Err(Error::InvalidComparison(format!(
            "runs use different Brownian seeds ({} and {})",
            a.seed, b.seed
        )));
    }
    if a.dims != b.dims || a.times != b.times || a.particles() != b.particles() {
        return Err(Error::InvalidComparison(
            "runs differ in grid, dimensions or particle count".into(),
        ));
    }
    if run1.phi.grid() != run2.phi.grid()
        || run1.mu.len() != a.n_times()
        || run2.mu.len() != a.n_times()
    {
        return Err(Error::InvalidComparison(
            "inputs do not share the path time grid".into(),
        ));
    }
    let n = a.particles();
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(s, t)| (s - t) * (s - t)).sum::<f64>();
    let mut lhs = 0.0;
    for i in 0..n {
        let mut sup_x = 0.0f64;
        let mut sup_y = 0.0f64;
        let mut int_z = 0.0;
        for k in 0..a.n_times() {
            sup_x = sup_x.max(sq(a.x(i, k), b.x(i, k)));
            sup_y = sup_y.max(sq(a.y(i, k), b.y(i, k)));
            if k < a.n_steps() {
                int_z += sq(a.z(i, k), b.z(i, k)) * a.dt(k);
            }
        }
        lhs += sup_x + sup_y + int_z;
    }
    lhs /= n as f64;

    let terminal = w2(run1.mu.terminal(), run2.mu.terminal())?;
    let mut rhs = terminal * terminal;
    for k in 0..a.n_steps() {
        let (p1, p2) = (run1.phi, run2.phi);
        let j1 = diamond(|x| p1.eval_level(k, x), run1.mu.at(k))?;
        let j2 = diamond(|x| p2.eval_level(k, x), run2.mu.at(k))?;
        let w = w2(&j1, &j2)?;
        rhs += w * w * a.dt(k);
    }
    let ratio = if rhs == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        lhs / rhs
    };
    Ok(StabilityGap {
        lhs,
        rhs,
        ratio,
        within_cap: ratio <= gamma_cap,
    })
}
