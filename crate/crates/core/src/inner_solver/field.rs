use std::io::Write;

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::measure::io::fmt_f64;

/// Values of `u: [0,T] x R^d -> R^p` on the nodes of a [`GridSpec`].
///
/// Evaluation is multilinear in space and nearest-node in time. Off-grid
/// points are clamped to the box.
#[derive(Clone, Debug, PartialEq)]
pub struct DecouplingField {
    grid: GridSpec,
    p: usize,
    /// `[time][node][component]`
    values: Vec<f64>,
}

impl DecouplingField {
    pub fn from_values(grid: GridSpec, p: usize, values: Vec<f64>) -> Result<Self> {
        let expected = grid.n_times() * grid.n_nodes() * p;
        if p == 0 || values.len() != expected {
            return Err(Error::Grid(format!(
                "field buffer has {} values, grid needs {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let node = (i / p) % grid.n_nodes();
            return Err(Error::numeric("field value", &grid.node_coords(node)));
        }
        Ok(Self { grid, p, values })
    }

    /// Samples `f(t, x)` at every node.
    pub fn from_fn<F>(grid: GridSpec, p: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(grid.n_times() * grid.n_nodes() * p);
        for k in 0..grid.n_times() {
            let t = grid.time(k);
            for node in 0..grid.n_nodes() {
                let v = f(t, &grid.node_coords(node));
                if v.len() != p {
                    return Err(Error::Dimension(format!(
                        "field function returned {} values, expected {p}",
                        v.len()
                    )));
                }
                values.extend(v);
            }
        }
        Self::from_values(grid, p, values)
    }

    pub fn constant(grid: GridSpec, value: &[f64]) -> Result<Self> {
        let n = grid.n_times() * grid.n_nodes();
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(n * value.len())
            .collect();
        Self::from_values(grid, value.len(), values)
    }

    /// Moves the values onto `grid`, which must have the same nodes.
    pub fn regrid(self, grid: GridSpec) -> Result<Self> {
        if !self.grid.same_nodes(&grid) {
            return Err(Error::Grid("target grid has different nodes".into()));
        }
        Ok(Self { grid, ..self })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn value_dim(&self) -> usize {
        self.p
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.n_nodes() * self.p;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_value(&self, k: usize, node: usize) -> &[f64] {
        &self.level(k)[node * self.p..(node + 1) * self.p]
    }

    /// `u(t_k, x)` by multilinear interpolation.
    pub fn eval_level_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        interpolate(&self.grid, self.level(k), self.p, x, out);
    }

    pub fn eval_level(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.eval_level_into(k, x, &mut out);
        out
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.eval_level(self.grid.nearest_time_index(t), x)
    }

    /// Node-wise `(1 - theta) * self + theta * other`.
    pub fn blend(&self, other: &Self, theta: f64) -> Result<Self> {
        if self.grid != other.grid || self.p != other.p {
            return Err(Error::Grid("cannot blend fields on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                if theta == 1.0 {
                    *b
                } else {
                    (1.0 - theta) * a + theta * b
                }
            })
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            p: self.p,
            values,
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.p)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest slope between neighbouring nodes along any axis.
    pub fn lipschitz_x(&self) -> f64 {
        let strides = self.grid.strides();
        let mut worst = 0.0f64;
        for k in 0..self.grid.n_times() {
            let lvl = self.level(k);
            for node in 0..self.grid.n_nodes() {
                let idx = self.grid.multi_index(node);
                for (j, axis) in self.grid.axes().iter().enumerate() {
                    if idx[j] + 1 < axis.nodes {
                        let nb = node + strides[j];
                        let diff = dist(
                            &lvl[node * self.p..(node + 1) * self.p],
                            &lvl[nb * self.p..(nb + 1) * self.p],
                        );
                        worst = worst.max(diff / axis.step());
                    }
                }
            }
        }
        worst
    }

    /// `max |u(t_{k+1}, x) - u(t_k, x)| / dt^{1/2}` over nodes.
    pub fn holder_time_ratio(&self) -> f64 {
        let scale = self.grid.dt().sqrt();
        let mut worst = 0.0f64;
        for k in 0..self.grid.n_steps() {
            let (a, b) = (self.level(k), self.level(k + 1));
            for (u, v) in a.chunks_exact(self.p).zip(b.chunks_exact(self.p)) {
                worst = worst.max(dist(u, v) / scale);
            }
        }
        worst
    }

    /// Nodal Jacobians `du_q/dx_j`, central inside and one-sided on the
    /// boundary, stored `[time][node][q][j]`.
    pub fn gradient(&self) -> GradientField {
        let d = self.grid.dim();
        let n = self.grid.n_nodes();
        let mut out = vec![0.0; self.grid.n_times() * n * self.p * d];
        for k in 0..self.grid.n_times() {
            let lvl = self.level(k);
            let dst = &mut out[k * n * self.p * d..(k + 1) * n * self.p * d];
            nodal_gradient(&self.grid, lvl, self.p, dst);
        }
        GradientField {
            grid: self.grid.clone(),
            p: self.p,
            values: out,
        }
    }

    /// CSV with columns `t,x_1..x_d,u_1..u_p`, one row per space-time node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.grid.dim()).map(|j| format!("x_{j}")));
        header.extend((1..=self.p).map(|q| format!("u_{q}")));
        w.write_record(&header)?;
        for k in 0..self.grid.n_times() {
            let t = self.grid.time(k);
            for node in 0..self.grid.n_nodes() {
                let mut row = vec![fmt_f64(t)];
                row.extend(self.grid.node_coords(node).into_iter().map(fmt_f64));
                row.extend(self.node_value(k, node).iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Nodal Jacobians of a [`DecouplingField`].
#[derive(Clone, Debug)]
pub struct GradientField {
    grid: GridSpec,
    p: usize,
    values: Vec<f64>,
}

impl GradientField {
    fn block(&self) -> usize {
        self.p * self.grid.dim()
    }

    pub fn node_value(&self, k: usize, node: usize) -> &[f64] {
        let b = self.block();
        let off = (k * self.grid.n_nodes() + node) * b;
        &self.values[off..off + b]
    }

    /// Row-major `p x d` Jacobian at `(t_k, x)`, interpolated from the nodes.
    pub fn eval_level_into(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let b = self.block();
        let n = self.grid.n_nodes();
        interpolate(
            &self.grid,
            &self.values[k * n * b..(k + 1) * n * b],
            b,
            x,
            out,
        );
    }
}

pub(crate) fn interpolate(
    grid: &GridSpec,
    level: &[f64],
    width: usize,
    x: &[f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    grid.stencil(x).for_each(|node, w| {
        if w != 0.0 {
            for (o, v) in out.iter_mut().zip(&level[node * width..(node + 1) * width]) {
                *o += w * v;
            }
        }
    });
}

/// Jacobians of one level into `dst`, `[node][q][j]`.
pub(crate) fn nodal_gradient(grid: &GridSpec, level: &[f64], p: usize, dst: &mut [f64]) {
    let d = grid.dim();
    let strides = grid.strides();
    for node in 0..grid.n_nodes() {
        let idx = grid.multi_index(node);
        for (j, axis) in grid.axes().iter().enumerate() {
            let h = axis.step();
            let (lo, hi, span) = if idx[j] == 0 {
                (node, node + strides[j], h)
            } else if idx[j] + 1 == axis.nodes {
                (node - strides[j], node, h)
            } else {
                (node - strides[j], node + strides[j], 2.0 * h)
            };
            for q in 0..p {
                dst[(node * p + q) * d + j] = (level[hi * p + q] - level[lo * p + q]) / span;
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
