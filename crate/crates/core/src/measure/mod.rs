//! Empirical probability measures, 2-Wasserstein distances and the
//! function-space distances used by the outer iteration.

mod assignment;
mod empirical;
pub mod io;
mod wasserstein;

pub use assignment::solve_assignment;
pub use empirical::{EmpiricalMeasure, MeasureFlow};
pub use wasserstein::{
    assignment_coupling, flow_distance, w2, w2_1d, w2_assignment, w2_assignment_capped, w2_sliced,
    w2_to_gaussian_1d, w2_with_method, W2Method, DEFAULT_ASSIGNMENT_CAP, DEFAULT_PROJECTIONS,
};

use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::inner_solver::DecouplingField;

/// Lift `mu` on R^d to the law of `(X, psi(X))` on R^{d+p}.
pub fn diamond<F>(psi: F, mu: &EmpiricalMeasure) -> Result<EmpiricalMeasure>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    mu.push_forward(|x| {
        let y = psi(x);
        let mut atom = Vec::with_capacity(x.len() + y.len());
        atom.extend_from_slice(x);
        atom.extend(y);
        atom
    })
    .map_err(|e| match e {
        Error::Numeric { point, .. } => Error::Numeric {
            context: "diamond map".into(),
            point: point[..mu.dim()].to_vec(),
        },
        other => other,
    })
}

/// `sum_i w_i f(x_i)`.
pub fn integrate<F>(mu: &EmpiricalMeasure, f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    mu.integrate(f)
}

/// Grid version of `sup_{t,x} e^{-|x|} |u1(t,x) - u2(t,x)|`.
pub fn weighted_sup_distance(u1: &DecouplingField, u2: &DecouplingField) -> Result<f64> {
    if u1.grid() != u2.grid() || u1.value_dim() != u2.value_dim() {
        return Err(Error::Grid("fields live on different grids".into()));
    }
    let grid = u1.grid();
    let p = u1.value_dim();
    let mut worst = 0.0f64;
    for k in 0..grid.n_times() {
        let a = u1.level(k);
        let b = u2.level(k);
        for node in 0..grid.n_nodes() {
            let x = grid.node_coords(node);
            let w = (-x.iter().map(|v| v * v).sum::<f64>().sqrt()).exp();
            let diff: f64 = a[node * p..(node + 1) * p]
                .iter()
                .zip(&b[node * p..(node + 1) * p])
                .map(|(s, t)| (s - t) * (s - t))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(w * diff);
        }
    }
    Ok(worst)
}

/// Both sides of the estimate
/// `W2(phi<>mu, phi'<>mu') <= C [W2(mu, mu') + W2(phi(mu), phi(mu')) + ||phi - phi'||_{L2(mu')}]`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub holds: bool,
}

pub fn pre_w2_bound_check<F, G>(
    phi: F,
    phi_prime: G,
    mu: &EmpiricalMeasure,
    mu_prime: &EmpiricalMeasure,
    constant: f64,
) -> Result<BoundCheck>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(constant > 0.0) {
        return Err(Error::Domain("bound constant must be positive".into()));
    }
    let lifted = diamond(&phi, mu)?;
    let lifted_prime = diamond(&phi_prime, mu_prime)?;
    let lhs = exact_w2(&lifted, &lifted_prime)?;

    let base = exact_w2(mu, mu_prime)?;
    let image = exact_w2(&mu.push_forward(&phi)?, &mu_prime.push_forward(&phi)?)?;
    let mut l2 = 0.0;
    for (i, x) in mu_prime.points().enumerate() {
        let a = phi(x);
        let b = phi_prime(x);
        ensure_finite(&a, "phi", x)?;
        ensure_finite(&b, "phi'", x)?;
        l2 += mu_prime.weight(i) * a.iter().zip(&b).map(|(s, t)| (s - t).powi(2)).sum::<f64>();
    }
    let rhs = base + image + l2.sqrt();
    Ok(BoundCheck {
        lhs,
        rhs,
        constant,
        holds: lhs <= constant * rhs * (1.0 + 1e-12) + 1e-14,
    })
}

fn exact_w2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() == 1 {
        w2_1d(a, b)
    } else {
        w2_assignment(a, b)
    }
}
