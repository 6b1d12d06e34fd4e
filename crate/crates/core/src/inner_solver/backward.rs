//! Backward grid induction for the decoupling field of a frozen-flow FBSDE.
//!
//! Each step applies one explicit finite-difference update of the
//! quasilinear system `du/dt + 1/2 tr(a D^2 u) + B . Du + F = 0` with
//! `a = Sigma Sigma^T`. Coefficients are evaluated at the already computed
//! later level (`y = u`, `z = Du Sigma`) and at the frozen measure of the
//! left time node.

use rayon::prelude::*;

use super::field::{nodal_gradient, DecouplingField};
use super::grid::GridSpec;
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureFlow};

#[derive(Clone, Copy, Debug, Default)]
pub struct BackwardOptions {
    /// Abort once the field's sup-norm exceeds ten times this value.
    pub gamma_cap: Option<f64>,
}

pub fn solve_backward(
    c: &CoefficientSet,
    flow: &MeasureFlow,
    terminal_mu: &EmpiricalMeasure,
    grid: &GridSpec,
) -> Result<DecouplingField> {
    solve_backward_with(c, flow, terminal_mu, grid, &BackwardOptions::default())
}

pub fn solve_backward_with(
    c: &CoefficientSet,
    flow: &MeasureFlow,
    terminal_mu: &EmpiricalMeasure,
    grid: &GridSpec,
    opts: &BackwardOptions,
) -> Result<DecouplingField> {
    let (d, p) = (c.dims.d, c.dims.p);
    check_inputs(c, flow, terminal_mu, grid)?;
    let nodes = NodeTable::new(grid);
    let n = grid.n_nodes();

    let mut cur = vec![0.0; n * p];
    for node in 0..n {
        let x = nodes.coords(node);
        let g = (c.terminal)(x, terminal_mu);
        if g.len() != p {
            return Err(Error::Dimension(format!(
                "G returned {} values, expected {p}",
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("terminal condition", x));
        }
        cur[node * p..(node + 1) * p].copy_from_slice(&g);
    }

    let mut values = vec![0.0; grid.n_times() * n * p];
    let level = |k: usize| k * n * p..(k + 1) * n * p;
    values[level(grid.n_steps())].copy_from_slice(&cur);

    let delta = grid.dt() / grid.substeps() as f64;
    let mut grad = vec![0.0; n * p * d];
    let mut next = vec![0.0; n * p];
    for k in (0..grid.n_steps()).rev() {
        let nu = flow.at(k);
        for j in (0..grid.substeps()).rev() {
            let t = grid.time(k) + j as f64 * delta;
            nodal_gradient(grid, &cur, p, &mut grad);
            explicit_step(c, grid, &nodes, &cur, &grad, t, delta, nu, &mut next)?;
            fill_boundary(grid, &nodes, &mut next, p);
            std::mem::swap(&mut cur, &mut next);
        }
        if let Some(cap) = opts.gamma_cap {
            let sup = cur
                .chunks_exact(p)
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            if sup > 10.0 * cap {
                return Err(Error::Divergence(format!(
                    "decoupling field sup-norm {sup:.4e} exceeds 10 x gamma_cap ({cap}) at t = {:.6}",
                    grid.time(k)
                )));
            }
        }
        values[level(k)].copy_from_slice(&cur);
    }
    DecouplingField::from_values(grid.clone(), p, values)
}

fn check_inputs(
    c: &CoefficientSet,
    flow: &MeasureFlow,
    terminal_mu: &EmpiricalMeasure,
    grid: &GridSpec,
) -> Result<()> {
    if grid.dim() != c.dims.d {
        return Err(Error::Grid(format!(
            "grid has {} space dimensions, coefficients have d = {}",
            grid.dim(),
            c.dims.d
        )));
    }
    if flow.len() != grid.n_times() {
        return Err(Error::Grid(format!(
            "flow has {} time nodes, grid has {}",
            flow.len(),
            grid.n_times()
        )));
    }
    for (k, t) in flow.times().iter().enumerate() {
        if (t - grid.time(k)).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(Error::Grid(format!(
                "flow time {t} differs from grid time {}",
                grid.time(k)
            )));
        }
    }
    if flow.dim() != c.dims.joint() {
        return Err(Error::Dimension(format!(
            "flow measures live on R^{}, expected R^{}",
            flow.dim(),
            c.dims.joint()
        )));
    }
    if terminal_mu.dim() != c.dims.d {
        return Err(Error::Dimension(format!(
            "terminal law lives on R^{}, expected R^{}",
            terminal_mu.dim(),
            c.dims.d
        )));
    }
    Ok(())
}

/// Precomputed node coordinates and neighbour offsets.
pub(crate) struct NodeTable {
    d: usize,
    coords: Vec<f64>,
    index: Vec<[usize; 2]>,
    interior: Vec<bool>,
    strides: Vec<usize>,
    steps: Vec<f64>,
    sizes: Vec<usize>,
}

impl NodeTable {
    pub(crate) fn new(grid: &GridSpec) -> Self {
        let d = grid.dim();
        let n = grid.n_nodes();
        let mut coords = Vec::with_capacity(n * d);
        let mut index = Vec::with_capacity(n);
        let mut interior = Vec::with_capacity(n);
        for node in 0..n {
            coords.extend(grid.node_coords(node));
            let mi = grid.multi_index(node);
            let mut idx = [0usize; 2];
            idx[..d].copy_from_slice(&mi);
            index.push(idx);
            interior.push(grid.is_interior(node));
        }
        Self {
            d,
            coords,
            index,
            interior,
            strides: grid.strides(),
            steps: grid.axes().iter().map(|a| a.step()).collect(),
            sizes: grid.axes().iter().map(|a| a.nodes).collect(),
        }
    }

    pub(crate) fn coords(&self, node: usize) -> &[f64] {
        &self.coords[node * self.d..(node + 1) * self.d]
    }
}

#[allow(clippy::too_many_arguments)]
fn explicit_step(
    c: &CoefficientSet,
    grid: &GridSpec,
    nodes: &NodeTable,
    cur: &[f64],
    grad: &[f64],
    t: f64,
    delta: f64,
    nu: &EmpiricalMeasure,
    next: &mut [f64],
) -> Result<()> {
    let crate::coefficients::Dims { d, p, m } = c.dims;
    let h = &nodes.steps;
    let st = &nodes.strides;
    next.par_chunks_mut(p)
        .enumerate()
        .try_for_each(|(node, out)| -> Result<()> {
            if !nodes.interior[node] {
                return Ok(());
            }
            let x = nodes.coords(node);
            let y = &cur[node * p..(node + 1) * p];
            let g = &grad[node * p * d..(node + 1) * p * d];
            let sigma = (c.volatility)(t, x, y, nu);
            if sigma.len() != d * m {
                return Err(Error::Dimension(format!(
                    "Sigma returned {} values, expected {}",
                    sigma.len(),
                    d * m
                )));
            }
            let mut a = [0.0f64; 4];
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] = (0..m).map(|r| sigma[i * m + r] * sigma[j * m + r]).sum();
                }
            }
            let a_max = if d == 1 {
                a[0]
            } else {
                let (tr, det) = (a[0] + a[3], a[0] * a[3] - a[1] * a[2]);
                0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt()
            };
            let stable = grid.stable_dt(a_max);
            if delta > stable * (1.0 + 1e-12) {
                return Err(Error::Cfl {
                    dt: delta,
                    required: stable,
                    substeps: (grid.dt() / stable).ceil() as usize,
                });
            }
            let mut v = vec![0.0; p * m];
            for q in 0..p {
                for r in 0..m {
                    v[q * m + r] = (0..d).map(|j| g[q * d + j] * sigma[j * m + r]).sum();
                }
            }
            let b = (c.drift)(t, x, y, &v, nu);
            let f = (c.driver)(t, x, y, &v, nu);
            if b.len() != d || f.len() != p {
                return Err(Error::Dimension(
                    "B or F returned the wrong number of values".into(),
                ));
            }
            if b.iter().chain(&f).chain(&sigma).any(|v| !v.is_finite()) {
                return Err(Error::numeric("coefficient evaluation in backward step", x));
            }
            for q in 0..p {
                let u = |nb: usize| cur[nb * p + q];
                let u0 = u(node);
                let mut rate = f[q];
                for j in 0..d {
                    let (lo, hi) = (node - st[j], node + st[j]);
                    rate += 0.5 * a[j * d + j] * (u(hi) - 2.0 * u0 + u(lo)) / (h[j] * h[j]);
                    // Central differences unless the cell Peclet number loses monotonicity.
                    let slope = if b[j].abs() * h[j] > a[j * d + j] {
                        if b[j] > 0.0 {
                            (u(hi) - u0) / h[j]
                        } else {
                            (u0 - u(lo)) / h[j]
                        }
                    } else {
                        g[q * d + j]
                    };
                    rate += b[j] * slope;
                }
                if d == 2 {
                    let (s0, s1) = (st[0], st[1]);
                    let cross = (u(node + s0 + s1) - u(node + s0 - s1) - u(node - s0 + s1)
                        + u(node - s0 - s1))
                        / (4.0 * h[0] * h[1]);
                    rate += a[1] * cross;
                }
                out[q] = u0 + delta * rate;
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("backward update", x));
            }
            Ok(())
        })
}

/// Linear extrapolation into boundary nodes, one axis at a time. Pass `j`
/// fills nodes on the boundary of axis `j` whose later-axis indices are
/// interior, so corners are completed by the last pass.
fn fill_boundary(_grid: &GridSpec, nodes: &NodeTable, level: &mut [f64], p: usize) {
    let d = nodes.d;
    for j in 0..d {
        let n_j = nodes.sizes[j];
        let s = nodes.strides[j];
        for node in 0..nodes.index.len() {
            let idx = nodes.index[node];
            let later_interior = (j + 1..d).all(|l| idx[l] > 0 && idx[l] + 1 < nodes.sizes[l]);
            if !later_interior {
                continue;
            }
            let (n1, n2) = if idx[j] == 0 {
                (node + s, node + 2 * s)
            } else if idx[j] + 1 == n_j {
                (node - s, node - 2 * s)
            } else {
                continue;
            };
            for q in 0..p {
                level[node * p + q] = 2.0 * level[n1 * p + q] - level[n2 * p + q];
            }
        }
    }
}
