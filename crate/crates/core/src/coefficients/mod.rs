//! Coefficient bundles `(B, F, Sigma, G)` of a McKean-Vlasov FBSDE,
//! radial truncation, and empirical auditing of the standing assumptions.

mod probe;

pub(crate) use probe::{max_eigen_aat, min_eigen_aat};
pub use probe::{
    probe_assumptions, AssumptionReport, GrowthViolation, LipschitzEstimates, ProbeOptions,
};

use std::fmt;
use std::sync::Arc;

use crate::measure::EmpiricalMeasure;

/// `(t, x, y, z, nu) -> R^d` or `R^p`; `z` is a row-major `p x m` matrix and
/// `nu` the joint law on R^{d+p}.
pub type DriftFn =
    Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;
/// `(t, x, y, nu) -> R^{d x m}`, row-major.
pub type VolatilityFn =
    Arc<dyn Fn(f64, &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;
/// `(x, mu_T) -> R^p` with `mu_T` on R^d.
pub type TerminalFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    /// Forward state dimension.
    pub d: usize,
    /// Backward state dimension.
    pub p: usize,
    /// Brownian dimension.
    pub m: usize,
}

impl Dims {
    pub fn new(d: usize, p: usize, m: usize) -> Self {
        Self { d, p, m }
    }

    pub fn scalar() -> Self {
        Self::new(1, 1, 1)
    }

    pub fn joint(&self) -> usize {
        self.d + self.p
    }
}

/// The drift `B`, driver `F`, volatility `Sigma` and terminal map `G`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub dims: Dims,
    pub drift: DriftFn,
    pub driver: DriftFn,
    pub volatility: VolatilityFn,
    pub terminal: TerminalFn,
    /// Constant L of the standing assumptions; audited, never inferred.
    pub declared_l: f64,
    /// Known uniform bound on |B| and |F|, if any.
    pub bound: Option<f64>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dims", &self.dims)
            .field("declared_l", &self.declared_l)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// B = 0, F = 0, Sigma = identity (padded with zeros when m != d), G = 0.
    pub fn zero(dims: Dims, declared_l: f64) -> Self {
        let Dims { d, p, m } = dims;
        Self {
            dims,
            drift: Arc::new(move |_, _, _, _, _| vec![0.0; d]),
            driver: Arc::new(move |_, _, _, _, _| vec![0.0; p]),
            volatility: Arc::new(move |_, _, _, _| {
                let mut s = vec![0.0; d * m];
                for i in 0..d.min(m) {
                    s[i * m + i] = 1.0;
                }
                s
            }),
            terminal: Arc::new(move |_, _| vec![0.0; p]),
            declared_l,
            bound: Some(0.0),
        }
    }

    pub fn with_drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self.bound = None;
        self
    }

    pub fn with_driver<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        self.driver = Arc::new(f);
        self.bound = None;
        self
    }

    pub fn with_volatility<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        self.volatility = Arc::new(f);
        self
    }

    pub fn with_terminal<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        self.terminal = Arc::new(f);
        self
    }

    pub fn with_bound(mut self, bound: Option<f64>) -> Self {
        self.bound = bound;
        self
    }

    /// Largest of `declared_l` and the known drift/driver bound.
    pub fn effective_l(&self) -> f64 {
        self.bound
            .map_or(self.declared_l, |b| b.max(self.declared_l))
    }
}

/// Orthogonal projection onto the closed ball of radius `radius`.
pub fn project_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    project_ball_in_place(&mut out, radius);
    out
}

pub fn project_ball_in_place(v: &mut [f64], radius: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Replace B and F by their projections onto the ball of radius `n`;
/// Sigma and G are kept.
pub fn truncate(c: &CoefficientSet, n: f64) -> CoefficientSet {
    assert!(n > 0.0, "truncation level must be positive");
    let drift = Arc::clone(&c.drift);
    let driver = Arc::clone(&c.driver);
    CoefficientSet {
        dims: c.dims,
        drift: Arc::new(move |t, x, y, z, nu| {
            let mut v = drift(t, x, y, z, nu);
            project_ball_in_place(&mut v, n);
            v
        }),
        driver: Arc::new(move |t, x, y, z, nu| {
            let mut v = driver(t, x, y, z, nu);
            project_ball_in_place(&mut v, n);
            v
        }),
        volatility: Arc::clone(&c.volatility),
        terminal: Arc::clone(&c.terminal),
        declared_l: c.declared_l,
        bound: Some(c.bound.map_or(n, |b| b.min(n))),
    }
}
