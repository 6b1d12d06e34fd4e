use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::assignment::solve_assignment;
use super::empirical::{EmpiricalMeasure, MeasureFlow};
use crate::error::{Error, Result};

/// Largest cloud accepted by [`w2_assignment`].
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;
/// Projection count used when W2 falls back to slicing.
pub const DEFAULT_PROJECTIONS: usize = 64;

/// Exact W2 between one-dimensional clouds via the monotone coupling.
pub fn w2_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::Dimension(format!(
            "w2_1d needs one-dimensional clouds, got {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let xa = sorted_atoms(a);
    let xb = sorted_atoms(b);
    let cost = if a.is_uniform() && b.is_uniform() {
        uniform_quantile_cost(&xa, &xb)
    } else {
        weighted_quantile_cost(&xa, &xb)
    };
    Ok(cost.max(0.0).sqrt())
}

fn sorted_atoms(m: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = m
        .raw_points()
        .iter()
        .enumerate()
        .map(|(i, x)| (*x, m.weight(i)))
        .collect();
    v.sort_by(|p, q| p.0.total_cmp(&q.0));
    v
}

/// Squared cost of the quantile coupling for uniform clouds. Masses are
/// counted in integer units of 1/(na*nb) so unequal sizes split exactly.
fn uniform_quantile_cost(xa: &[(f64, f64)], xb: &[(f64, f64)]) -> f64 {
    let (na, nb) = (xa.len(), xb.len());
    if na == nb {
        let s: f64 = xa.iter().zip(xb).map(|(p, q)| (p.0 - q.0).powi(2)).sum();
        return s / na as f64;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (nb, na);
    let mut acc = 0.0;
    while i < na && j < nb {
        let m = ra.min(rb);
        acc += m as f64 * (xa[i].0 - xb[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra == 0 {
            i += 1;
            ra = nb;
        }
        if rb == 0 {
            j += 1;
            rb = na;
        }
    }
    acc / (na as f64 * nb as f64)
}

fn weighted_quantile_cost(xa: &[(f64, f64)], xb: &[(f64, f64)]) -> f64 {
    const EPS: f64 = 1e-15;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (xa[0].1, xb[0].1);
    let mut acc = 0.0;
    while i < xa.len() && j < xb.len() {
        let m = ra.min(rb);
        acc += m * (xa[i].0 - xb[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra <= EPS {
            i += 1;
            if i < xa.len() {
                ra = xa[i].1;
            }
        }
        if rb <= EPS {
            j += 1;
            if j < xb.len() {
                rb = xb[j].1;
            }
        }
    }
    acc
}

/// Exact W2 between equal-size uniform clouds by optimal assignment.
pub fn w2_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    w2_assignment_capped(a, b, DEFAULT_ASSIGNMENT_CAP)
}

pub fn w2_assignment_capped(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cap: usize) -> Result<f64> {
    let (cost, _) = assignment_coupling(a, b, cap)?;
    Ok(cost.max(0.0).sqrt())
}

/// Optimal assignment cost `sum |x_i - y_perm(i)|^2 / M` and the permutation.
pub fn assignment_coupling(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cap: usize,
) -> Result<(f64, Vec<usize>)> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "clouds of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.len() != b.len() || !a.is_uniform() || !b.is_uniform() {
        return Err(Error::Unsupported(
            "exact assignment W2 requires equal-size uniform clouds".into(),
        ));
    }
    let n = a.len();
    if n > cap {
        return Err(Error::Capacity { size: n, cap });
    }
    let mut cost = vec![0.0; n * n];
    for (i, x) in a.points().enumerate() {
        for (j, y) in b.points().enumerate() {
            cost[i * n + j] = sq_dist(x, y);
        }
    }
    let perm = solve_assignment(&cost, n);
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64, perm))
}

/// Sliced W2: mean over random unit directions of the 1D distance between
/// the projected clouds. Deterministic in `seed`; exact in dimension one.
pub fn w2_sliced(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if n_projections == 0 {
        return Err(Error::Domain("n_projections must be positive".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "clouds of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let k = a.dim();
    if k == 1 {
        return w2_1d(a, b);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = random_unit_vector(k, &mut rng);
        let project = |m: &EmpiricalMeasure| m.push_forward(|x| vec![dot(x, &dir)]);
        total += w2_1d(&project(a)?, &project(b)?)?;
    }
    Ok(total / n_projections as f64)
}

fn random_unit_vector(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Which W2 routine [`w2`] ended up using.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum W2Method {
    Quantile,
    Assignment,
    Sliced,
}

/// W2 with the cheapest exact method available, falling back to slicing
/// above the assignment cap.
pub fn w2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    w2_with_method(a, b).map(|(d, _)| d)
}

pub fn w2_with_method(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<(f64, W2Method)> {
    if a.dim() == 1 && b.dim() == 1 {
        return Ok((w2_1d(a, b)?, W2Method::Quantile));
    }
    if a.len() == b.len() && a.is_uniform() && b.is_uniform() && a.len() <= DEFAULT_ASSIGNMENT_CAP {
        return Ok((w2_assignment(a, b)?, W2Method::Assignment));
    }
    Ok((w2_sliced(a, b, DEFAULT_PROJECTIONS, 0)?, W2Method::Sliced))
}

/// Max over time nodes of the W2 distance between two flows on the same grid.
pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Grid(format!(
            "flows with {} and {} time nodes",
            a.len(),
            b.len()
        )));
    }
    let mut worst = 0.0f64;
    for (ma, mb) in a.measures().iter().zip(b.measures()) {
        worst = worst.max(w2(ma, mb)?);
    }
    Ok(worst)
}

/// Exact W2 between a one-dimensional cloud and the Gaussian N(mean, sd^2),
/// integrating the quantile coupling in closed form on each atom's mass
/// interval.
pub fn w2_to_gaussian_1d(a: &EmpiricalMeasure, mean: f64, sd: f64) -> Result<f64> {
    if a.dim() != 1 {
        return Err(Error::Dimension(
            "w2_to_gaussian_1d needs a 1D cloud".into(),
        ));
    }
    if !(sd >= 0.0) {
        return Err(Error::Domain(format!("standard deviation {sd} < 0")));
    }
    let atoms = sorted_atoms(a);
    if sd == 0.0 {
        let c: f64 = atoms.iter().map(|(x, w)| w * (x - mean).powi(2)).sum();
        return Ok(c.sqrt());
    }
    let std = Normal::standard();
    // (z, phi(z), z * phi(z)) at the left end of the current mass interval
    let tails = |u: f64| -> (f64, f64) {
        if u <= 0.0 || u >= 1.0 {
            (0.0, 0.0)
        } else {
            let z = std.inverse_cdf(u);
            let p = std.pdf(z);
            (p, z * p)
        }
    };
    let mut lo = 0.0f64;
    let (mut phi_lo, mut zphi_lo) = tails(lo);
    let mut total = 0.0;
    for (i, (x, w)) in atoms.iter().enumerate() {
        let hi = if i + 1 == atoms.len() {
            1.0
        } else {
            (lo + w).min(1.0)
        };
        let (phi_hi, zphi_hi) = tails(hi);
        let du = hi - lo;
        let d = phi_lo - phi_hi;
        let e = zphi_lo - zphi_hi;
        let a_m = x - mean;
        total += a_m * a_m * du - 2.0 * a_m * sd * d + sd * sd * (du + e);
        lo = hi;
        phi_lo = phi_hi;
        zphi_lo = zphi_hi;
    }
    Ok(total.max(0.0).sqrt())
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
