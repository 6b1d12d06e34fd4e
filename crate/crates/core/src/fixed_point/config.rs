use serde::{Deserialize, Serialize};

use crate::coefficients::{max_eigen_aat, CoefficientSet};
use crate::error::{Error, Result};
use crate::inner_solver::GridSpec;
use crate::measure::EmpiricalMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub x0: Vec<f64>,
    /// Time horizon and space box; `T` is `grid.horizon()`.
    pub grid: GridSpec,
    pub particles: usize,
    /// Damping in `(0, 1]`; 1 is plain Picard.
    pub theta: f64,
    /// Tolerance on the weighted sup distance of consecutive fields.
    pub tol_u: f64,
    /// Tolerance on the max-over-time W2 distance of consecutive flows.
    pub tol_flow: f64,
    pub max_iters: usize,
    /// Strictly increasing truncation levels, empty for a direct solve.
    pub truncation_ladder: Vec<f64>,
    pub seed: u64,
    /// Bound on `sup |u|`; derived from the coefficients when absent.
    pub gamma_cap: Option<f64>,
    /// Bound on the grid Lipschitz constant of `u`.
    pub lipschitz_cap: Option<f64>,
    /// Bound on `E sup_t |X_t|^4`.
    pub gamma_prime: Option<f64>,
    pub antithetic: bool,
    /// Raise the grid's substep count to meet the explicit-scheme bound.
    pub auto_substeps: bool,
}

impl SolverConfig {
    pub fn new(x0: Vec<f64>, grid: GridSpec, particles: usize) -> Self {
        Self {
            x0,
            grid,
            particles,
            theta: 0.5,
            tol_u: 1e-2,
            tol_flow: 1e-2,
            max_iters: 50,
            truncation_ladder: Vec::new(),
            seed: 0,
            gamma_cap: None,
            lipschitz_cap: None,
            gamma_prime: None,
            antithetic: true,
            auto_substeps: true,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!(
                "solver.theta must lie in (0, 1], got {}",
                self.theta
            )));
        }
        if !(self.tol_u >= 0.0) || !(self.tol_flow >= 0.0) {
            return Err(Error::Config(
                "solver.tol_u and solver.tol_flow must be nonnegative".into(),
            ));
        }
        if self.particles == 0 {
            return Err(Error::Config("solver.particles must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("solver.max_iters must be positive".into()));
        }
        if self.x0.len() != self.grid.dim() {
            return Err(Error::Config(format!(
                "x0 has {} entries but the grid has {} axes",
                self.x0.len(),
                self.grid.dim()
            )));
        }
        if !self.grid.contains(&self.x0) {
            return Err(Error::Config("x0 lies outside the grid box".into()));
        }
        if self.truncation_ladder.iter().any(|n| !(*n > 0.0))
            || self.truncation_ladder.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Config(
                "solver.truncation_ladder must be positive and strictly increasing".into(),
            ));
        }
        for (name, v) in [
            ("gamma_cap", self.gamma_cap),
            ("lipschitz_cap", self.lipschitz_cap),
            ("gamma_prime", self.gamma_prime),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!(
                        "caps.{name} must be positive, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Box half-width `|x0| + 6 sqrt(a_max T) + n T` for drift bound `n`.
    pub fn default_box_half_width(x0: &[f64], a_max: f64, horizon: f64, drift_bound: f64) -> f64 {
        let r = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        r + 6.0 * (a_max * horizon).sqrt() + drift_bound * horizon
    }

    /// Caps actually enforced for `c`, filling in defaults.
    pub fn resolved_caps(&self, c: &CoefficientSet) -> Caps {
        let t = self.horizon();
        let l = c.effective_l();
        let x_max = self
            .grid
            .axes()
            .iter()
            .map(|a| a.half_width)
            .fold(0.0, f64::max);
        let delta = EmpiricalMeasure::dirac(&self.x0);
        let g0 = (0..self.grid.n_nodes())
            .map(|n| norm(&(c.terminal)(&self.grid.node_coords(n), &delta)))
            .fold(0.0, f64::max);
        // Any bounded driver keeps |u| under sup|G| + T sup|F|; without a known
        // bound, use the linear growth allowance at the box edge.
        let f_bound = c.bound.unwrap_or(l * (1.0 + x_max + g0));
        let gamma_cap = self.gamma_cap.unwrap_or(2.0 * (g0 + t * f_bound) + 1.0);
        let lipschitz_cap = self.lipschitz_cap.unwrap_or(100.0 * l.max(1.0) * (1.0 + t));
        let x0 = norm(&self.x0);
        let gamma_prime = self
            .gamma_prime
            .unwrap_or(8.0 * (x0 + l * t + l * t.sqrt()).powi(4));
        Caps {
            gamma_cap,
            lipschitz_cap,
            gamma_prime,
        }
    }

    /// Copy of the grid with enough substeps for the diffusion seen at the
    /// nodes, evaluated at `y = G(x, delta_x0)` and a Dirac joint law.
    pub fn resolved_grid(&self, c: &CoefficientSet) -> Result<GridSpec> {
        if !self.auto_substeps {
            return Ok(self.grid.clone());
        }
        let (d, m) = (c.dims.d, c.dims.m);
        let delta = EmpiricalMeasure::dirac(&self.x0);
        let y0 = (c.terminal)(&self.x0, &delta);
        let mut joint = self.x0.clone();
        joint.extend_from_slice(&y0);
        let nu = EmpiricalMeasure::dirac(&joint);
        let mut a_max = 0.0f64;
        for t in [0.0, 0.5 * self.horizon(), self.horizon()] {
            for node in 0..self.grid.n_nodes() {
                let x = self.grid.node_coords(node);
                let y = (c.terminal)(&x, &delta);
                let sigma = (c.volatility)(t, &x, &y, &nu);
                if sigma.len() != d * m {
                    return Err(Error::Dimension(format!(
                        "Sigma returned {} values, expected {}",
                        sigma.len(),
                        d * m
                    )));
                }
                a_max = a_max.max(max_eigen_aat(&sigma, d, m));
            }
        }
        self.grid.clone().with_auto_substeps(a_max)
    }
}

/// The E1 / E2 bounds and Lipschitz monitor enforced on every iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub gamma_cap: f64,
    pub lipschitz_cap: f64,
    pub gamma_prime: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
