use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default safety factor applied to `1 / (2d)` in the explicit-scheme bound.
pub const DEFAULT_CFL_SHARE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Boundary {
    /// Boundary nodes are linearly extrapolated from the two nearest
    /// interior nodes after every step.
    #[default]
    ClampedGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub half_width: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step()
    }
}

/// Uniform space-time grid on `[0, T] x [-x_max, x_max]^d`, `d <= 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    horizon: f64,
    n_steps: usize,
    axes: Vec<Axis>,
    /// Explicit PDE steps per time interval of the output grid.
    substeps: usize,
    cfl_factor: f64,
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(horizon: f64, n_steps: usize, axes: Vec<Axis>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps < 1 {
            return Err(Error::Config("grid needs at least one time step".into()));
        }
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!(
                "grids support 1 or 2 space dimensions, got {}",
                axes.len()
            )));
        }
        for a in &axes {
            if a.nodes < 3 {
                return Err(Error::Config(format!(
                    "axis needs at least 3 nodes, got {}",
                    a.nodes
                )));
            }
            if !(a.half_width > 0.0) || !a.half_width.is_finite() {
                return Err(Error::Config(format!(
                    "axis half-width must be positive, got {}",
                    a.half_width
                )));
            }
        }
        let d = axes.len();
        Ok(Self {
            horizon,
            n_steps,
            axes,
            substeps: 1,
            cfl_factor: DEFAULT_CFL_SHARE / (2.0 * d as f64),
            boundary: Boundary::ClampedGradient,
        })
    }

    /// Same `n_x` nodes on `[-x_max, x_max]` along each of `d` axes.
    pub fn uniform(horizon: f64, n_steps: usize, d: usize, x_max: f64, n_x: usize) -> Result<Self> {
        Self::new(
            horizon,
            n_steps,
            vec![
                Axis {
                    half_width: x_max,
                    nodes: n_x
                };
                d
            ],
        )
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        self.substeps = substeps;
        Ok(self)
    }

    pub fn with_cfl_factor(mut self, cfl: f64) -> Result<Self> {
        let max = 1.0 / (2.0 * self.dim() as f64);
        if !(cfl > 0.0) || cfl > max {
            return Err(Error::Config(format!(
                "cfl factor must lie in (0, {max}], got {cfl}"
            )));
        }
        self.cfl_factor = cfl;
        Ok(self)
    }

    /// Largest stable PDE step for diffusion eigenvalue bound `a_max`.
    pub fn stable_dt(&self, a_max: f64) -> f64 {
        if a_max <= 0.0 {
            return f64::INFINITY;
        }
        self.cfl_factor * self.min_step().powi(2) / a_max
    }

    /// Smallest substep count meeting the stability bound for `a_max`.
    pub fn required_substeps(&self, a_max: f64) -> usize {
        let bound = self.stable_dt(a_max);
        if bound.is_infinite() {
            return 1;
        }
        ((self.dt() / bound) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn with_auto_substeps(self, a_max: f64) -> Result<Self> {
        let s = self.required_substeps(a_max).max(self.substeps);
        self.with_substeps(s)
    }

    /// Same time and space nodes, ignoring substeps and the CFL factor.
    pub fn same_nodes(&self, other: &Self) -> bool {
        self.horizon == other.horizon && self.n_steps == other.n_steps && self.axes == other.axes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn cfl_factor(&self) -> f64 {
        self.cfl_factor
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_times()).map(|k| self.time(k)).collect()
    }

    /// Nearest time node to `t`, clamped to the grid.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        (k.max(0.0) as usize).min(self.n_steps)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn min_step(&self) -> f64 {
        self.axes
            .iter()
            .map(Axis::step)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for j in (0..self.dim().saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.axes[j + 1].nodes;
        }
        s
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rem = node;
        let mut idx = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            idx[j] = rem % self.axes[j].nodes;
            rem /= self.axes[j].nodes;
        }
        idx
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coord(i))
            .collect()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.multi_index(node)
            .iter()
            .zip(&self.axes)
            .all(|(&i, a)| i > 0 && i + 1 < a.nodes)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.axes)
            .all(|(v, a)| v.abs() <= a.half_width)
    }

    /// Cell corner indices and multilinear weights for `x`, clamped to the box.
    pub(crate) fn stencil(&self, x: &[f64]) -> Stencil {
        let strides = self.strides();
        let mut base = 0usize;
        let mut frac = [0.0f64; 2];
        let mut offs = [0usize; 2];
        for (j, a) in self.axes.iter().enumerate() {
            let s = ((x[j] + a.half_width) / a.step()).clamp(0.0, (a.nodes - 1) as f64);
            let i = (s.floor() as usize).min(a.nodes - 2);
            frac[j] = s - i as f64;
            base += i * strides[j];
            offs[j] = strides[j];
        }
        Stencil {
            base,
            frac,
            offs,
            dim: self.dim(),
        }
    }
}

pub(crate) struct Stencil {
    base: usize,
    frac: [f64; 2],
    offs: [usize; 2],
    dim: usize,
}

impl Stencil {
    /// Calls `f(node, weight)` for each of the `2^d` cell corners.
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        match self.dim {
            1 => {
                f(self.base, 1.0 - self.frac[0]);
                f(self.base + self.offs[0], self.frac[0]);
            }
            _ => {
                let (a, b) = (self.frac[0], self.frac[1]);
                f(self.base, (1.0 - a) * (1.0 - b));
                f(self.base + self.offs[1], (1.0 - a) * b);
                f(self.base + self.offs[0], a * (1.0 - b));
                f(self.base + self.offs[0] + self.offs[1], a * b);
            }
        }
    }
}
