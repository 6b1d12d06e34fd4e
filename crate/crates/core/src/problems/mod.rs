//! Built-in problems with known solutions, addressable by name.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::sync::Arc;

use crate::applications::{assemble_mfg, ControlProblem};
use crate::coefficients::{CoefficientSet, Dims};
use crate::error::{Error, Result};
use crate::fixed_point::{gaussian_flow, Init, SolverConfig};
use crate::inner_solver::{DecouplingField, GridSpec};

type PathFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type LawFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;
pub type InitFn = Arc<dyn Fn(&SolverConfig) -> Result<Init> + Send + Sync>;
pub type FamilyFn = Arc<dyn Fn(f64, &SolverConfig) -> Result<Init> + Send + Sync>;

/// Known means of X and Y, and optionally the Gaussian law of a scalar X.
#[derive(Clone)]
pub struct ReferenceSolution {
    pub description: String,
    pub validity: String,
    mean_x: PathFn,
    mean_y: PathFn,
    law_x: Option<LawFn>,
}

impl ReferenceSolution {
    pub fn new<X, Y>(
        description: impl Into<String>,
        validity: impl Into<String>,
        mean_x: X,
        mean_y: Y,
    ) -> Self
    where
        X: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        Y: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            description: description.into(),
            validity: validity.into(),
            mean_x: Arc::new(mean_x),
            mean_y: Arc::new(mean_y),
            law_x: None,
        }
    }

    /// Attach `t -> (mean, sd)` of a scalar Gaussian X_t.
    pub fn with_gaussian_law<L>(mut self, law: L) -> Self
    where
        L: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        self.law_x = Some(Arc::new(law));
        self
    }

    pub fn mean_x(&self, t: f64) -> Vec<f64> {
        (self.mean_x)(t)
    }

    pub fn mean_y(&self, t: f64) -> Vec<f64> {
        (self.mean_y)(t)
    }

    pub fn gaussian_x(&self, t: f64) -> Option<(f64, f64)> {
        self.law_x.as_ref().map(|f| f(t))
    }
}

impl fmt::Debug for ReferenceSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceSolution")
            .field("description", &self.description)
            .field("validity", &self.validity)
            .finish_non_exhaustive()
    }
}

/// A coefficient bundle with its default configuration and reference data.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub coefficients: CoefficientSet,
    pub config: SolverConfig,
    pub reference: Option<ReferenceSolution>,
    /// Problem-specific initialization; the generic default otherwise.
    pub init: Option<InitFn>,
    /// One-parameter family of initializations used by multi-start. When the
    /// key is also a problem parameter, each member is the initialization
    /// for the problem built with that parameter value.
    pub family: Option<(String, FamilyFn)>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("coefficients", &self.coefficients)
            .finish_non_exhaustive()
    }
}

/// `max(-r, min(r, s))`.
pub fn clip(s: f64, r: f64) -> f64 {
    s.clamp(-r, r)
}

pub const COUNTEREXAMPLE_HORIZON: f64 = FRAC_PI_4;

/// Scalar problem on `[0, pi/4]` with `B = clip_R(E[Y])`, `F = clip_R(E[X])`,
/// `Sigma = 1`, `G = clip_R(E[X_T])` and `x0 = 0`. Every `A` with
/// `|A| sqrt 2 < R` gives a solution with means `(A sin t, A cos t)`.
pub fn counterexample(a: f64, r: f64) -> Result<Problem> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("R must be positive, got {r}")));
    }
    if !(a.abs() * 2f64.sqrt() < r) {
        return Err(Error::Domain(format!(
            "need |A| sqrt(2) < R for the trajectory to stay where the coefficients are the identity (A = {a}, R = {r})"
        )));
    }
    let c = CoefficientSet::zero(Dims::scalar(), r.max(1.0))
        .with_drift(move |_, _, _, _, nu| vec![clip(nu.mean()[1], r)])
        .with_driver(move |_, _, _, _, nu| vec![clip(nu.mean()[0], r)])
        .with_terminal(move |_, mu| vec![clip(mu.mean()[0], r)])
        .with_bound(Some(r));
    let grid = GridSpec::uniform(COUNTEREXAMPLE_HORIZON, 200, 1, 8.0, 201)?;
    let config = SolverConfig::new(vec![0.0], grid, 20_000);
    let reference = ReferenceSolution::new(
        format!("x_t = {a} sin t, y_t = {a} cos t"),
        format!("|A| sqrt 2 < R = {r}"),
        move |t| vec![a * t.sin()],
        move |t| vec![a * t.cos()],
    )
    .with_gaussian_law(move |t| (a * t.sin(), t.sqrt()));
    let family: FamilyFn = Arc::new(counterexample_init);
    Ok(Problem {
        name: "counterexample".into(),
        params: BTreeMap::from([("A".into(), a), ("R".into(), r)]),
        coefficients: c,
        config,
        reference: Some(reference),
        init: Some(Arc::new(move |cfg| counterexample_init(a, cfg))),
        family: Some(("A".into(), family)),
    })
}

/// `phi0(t, x) = A cos t` and `mu0` the law of `A sin t + W_t`.
pub fn counterexample_init(a: f64, cfg: &SolverConfig) -> Result<Init> {
    let grid = &cfg.grid;
    let phi = DecouplingField::from_fn(grid.clone(), 1, |t, _| vec![a * t.cos()])?;
    let mu = gaussian_flow(
        grid,
        Dims::scalar(),
        &cfg.x0,
        &[1.0],
        cfg.particles,
        cfg.seed,
        cfg.antithetic,
        |t| vec![a * t.sin()],
    )?;
    Ok(Init { phi, mu })
}

/// `B = 0`, `F = 0`, `Sigma = 1`, `G = c`: `X = x0 + W`, `Y = c`, `Z = 0`.
pub fn decoupled_oracle(value: f64) -> Result<Problem> {
    let c = CoefficientSet::zero(Dims::scalar(), value.abs().max(1.0))
        .with_terminal(move |_, _| vec![value]);
    let grid = GridSpec::uniform(1.0, 50, 1, 6.0, 61)?;
    let config = SolverConfig::new(vec![0.0], grid, 2_000);
    let reference = ReferenceSolution::new(
        format!("X = W, Y = {value}, Z = 0"),
        "all t",
        |_| vec![0.0],
        move |_| vec![value],
    )
    .with_gaussian_law(|t| (0.0, t.sqrt()));
    Ok(Problem {
        name: "decoupled".into(),
        params: BTreeMap::from([("c".into(), value)]),
        coefficients: c,
        config,
        reference: Some(reference),
        init: None,
        family: Some(("v".into(), Arc::new(constant_init))),
    })
}

/// `phi0 = v` everywhere and `mu0` the law of `x0 + v + W_t`.
pub fn constant_init(v: f64, cfg: &SolverConfig) -> Result<Init> {
    let d = cfg.grid.dim();
    let phi = DecouplingField::constant(cfg.grid.clone(), &[v])?;
    let sigma: Vec<f64> = (0..d * d)
        .map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 })
        .collect();
    let mu = gaussian_flow(
        &cfg.grid,
        Dims::new(d, 1, d),
        &cfg.x0,
        &sigma,
        cfg.particles,
        cfg.seed,
        cfg.antithetic,
        |_| vec![v; d],
    )?;
    Ok(Init { phi, mu })
}

/// `B = -(x - E[X])`, `F = 0`, `Sigma = 1`, `G = clip_10(x)`. The mean of X
/// is invariant, and X is an Ornstein-Uhlenbeck process around `x0`.
pub fn mean_reversion_reference(x0: f64) -> Result<Problem> {
    const R: f64 = 10.0;
    let c = CoefficientSet::zero(Dims::scalar(), R)
        .with_drift(|_, x, _, _, nu| vec![-(x[0] - nu.mean()[0])])
        .with_terminal(|x, _| vec![clip(x[0], R)]);
    let grid = GridSpec::uniform(1.0, 100, 1, x0.abs() + 6.0, 121)?;
    let config = SolverConfig::new(vec![x0], grid, 4_000);
    let reference = ReferenceSolution::new(
        format!("E[X_t] = E[Y_t] = {x0}"),
        "|x0| well inside the clipping radius 10",
        move |_| vec![x0],
        move |_| vec![x0],
    )
    .with_gaussian_law(move |t| (x0, ((1.0 - (-2.0 * t).exp()) / 2.0).sqrt()));
    Ok(Problem {
        name: "mean-reversion".into(),
        params: BTreeMap::from([("x0".into(), x0)]),
        coefficients: c,
        config,
        reference: Some(reference),
        init: None,
        family: Some(("v".into(), Arc::new(constant_init))),
    })
}

/// `B = x` (unbounded), `F = sin(x) / 2`, `Sigma = 1`, `G = tanh(x)`, meant
/// for truncation-ladder continuation.
pub fn linear_drift() -> Result<Problem> {
    let c = CoefficientSet::zero(Dims::scalar(), 1.0)
        .with_drift(|_, x, _, _, _| vec![x[0]])
        .with_driver(|_, x, _, _, _| vec![0.5 * x[0].sin()])
        .with_terminal(|x, _| vec![x[0].tanh()]);
    let grid = GridSpec::uniform(1.0, 100, 1, 12.0, 241)?;
    let mut config = SolverConfig::new(vec![0.0], grid, 2_000);
    config.truncation_ladder = vec![1.0, 2.0, 4.0, 8.0];
    Ok(Problem {
        name: "linear-drift".into(),
        params: BTreeMap::new(),
        coefficients: c,
        config,
        reference: None,
        init: None,
        family: Some(("v".into(), Arc::new(constant_init))),
    })
}

/// Linear-quadratic mean-field game `b = alpha`, `f = alpha^2 / 2`,
/// `g = x^2 / 2`, `sigma = 1`: `dX = -Y dt + dW`, `Y_T = X_T`, whose
/// solution is `Y_t = X_t / (1 + T - t)` and `E[X_t] = x0 (1 + T - t) / (1 + T)`.
pub fn lq_mfg(x0: f64) -> Result<Problem> {
    let cp = ControlProblem::new(1, 1, 1)
        .with_drift(|_, _, _, a| vec![a[0]], |_, _, _, _| vec![0.0])
        .with_running_cost(|_, _, _, a| 0.5 * a[0] * a[0], |_, _, _, _| vec![0.0])
        .with_terminal_cost(|x, _| 0.5 * x[0] * x[0], |x, _| vec![x[0]])
        .with_sigma(vec![1.0])
        .with_alpha_hat(|_, _, y, _| vec![-y[0]]);
    let c = assemble_mfg(&cp)?;
    let t_end = 1.0;
    let grid = GridSpec::uniform(t_end, 100, 1, x0.abs() + 6.0, 121)?;
    let config = SolverConfig::new(vec![x0], grid, 4_000);
    let m = move |t: f64| x0 * (1.0 + t_end - t) / (1.0 + t_end);
    let reference = ReferenceSolution::new(
        "E[X_t] = x0 (1 + T - t) / (1 + T), E[Y_t] = x0 / (1 + T)",
        "all t",
        move |t| vec![m(t)],
        move |_| vec![x0 / (1.0 + t_end)],
    );
    Ok(Problem {
        name: "lq-mfg".into(),
        params: BTreeMap::from([("x0".into(), x0)]),
        coefficients: c,
        config,
        reference: Some(reference),
        init: None,
        family: Some(("v".into(), Arc::new(constant_init))),
    })
}

/// Scalar bundle `B = b x`, `F = f x`, `Sigma = sigma`, `G = g x` with
/// declared constant `l`, for probing assumption checks.
pub fn scalar_linear(b: f64, f: f64, sigma: f64, g: f64, l: f64) -> Result<Problem> {
    if !(l > 0.0) {
        return Err(Error::Domain(format!("L must be positive, got {l}")));
    }
    let c = CoefficientSet::zero(Dims::scalar(), l)
        .with_drift(move |_, x, _, _, _| vec![b * x[0]])
        .with_driver(move |_, x, _, _, _| vec![f * x[0]])
        .with_volatility(move |_, _, _, _| vec![sigma])
        .with_terminal(move |x, _| vec![g * x[0]]);
    let grid = GridSpec::uniform(1.0, 100, 1, 8.0, 161)?;
    let config = SolverConfig::new(vec![0.0], grid, 2_000);
    Ok(Problem {
        name: "scalar-linear".into(),
        params: BTreeMap::from([
            ("L".into(), l),
            ("b".into(), b),
            ("f".into(), f),
            ("g".into(), g),
            ("sigma".into(), sigma),
        ]),
        coefficients: c,
        config,
        reference: None,
        init: None,
        family: Some(("v".into(), Arc::new(constant_init))),
    })
}

pub const PROBLEM_NAMES: &[&str] = &[
    "counterexample",
    "decoupled",
    "mean-reversion",
    "linear-drift",
    "lq-mfg",
    "scalar-linear",
];

/// Splits `name?key=value&key=value`.
pub fn parse_problem_spec(spec: &str) -> Result<(String, BTreeMap<String, f64>)> {
    let (name, query) = spec.split_once('?').unwrap_or((spec, ""));
    let mut params = BTreeMap::new();
    for pair in query.split('&').filter(|s| !s.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("problem parameter `{pair}` is not key=value")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("problem parameter {k} = `{v}` is not a number")))?;
        params.insert(k.trim().to_string(), value);
    }
    Ok((name.trim().to_string(), params))
}

/// Builds a registered problem; unknown parameters are rejected.
pub fn build_problem(name: &str, params: &BTreeMap<String, f64>) -> Result<Problem> {
    let allowed: &[&str] = match name {
        "counterexample" => &["A", "R"],
        "decoupled" => &["c"],
        "mean-reversion" | "lq-mfg" => &["x0"],
        "linear-drift" => &[],
        "scalar-linear" => &["b", "f", "sigma", "g", "L"],
        _ => {
            return Err(Error::Config(format!(
                "unknown problem `{name}`; registered problems: {}",
                PROBLEM_NAMES.join(", ")
            )))
        }
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::Config(format!(
            "problem `{name}` has no parameter `{k}` (accepted: {})",
            if allowed.is_empty() {
                "none".to_string()
            } else {
                allowed.join(", ")
            }
        )));
    }
    let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
    match name {
        "counterexample" => counterexample(get("A", 1.0), get("R", 10.0)),
        "decoupled" => decoupled_oracle(get("c", 0.5)),
        "mean-reversion" => mean_reversion_reference(get("x0", 1.0)),
        "linear-drift" => linear_drift(),
        "lq-mfg" => lq_mfg(get("x0", 1.0)),
        "scalar-linear" => scalar_linear(
            get("b", 0.0),
            get("f", 0.0),
            get("sigma", 1.0),
            get("g", 0.0),
            get("L", 1.0),
        ),
        _ => unreachable!("names are checked above"),
    }
}

pub fn problem_from_spec(spec: &str) -> Result<Problem> {
    let (name, params) = parse_problem_spec(spec)?;
    build_problem(&name, &params)
}
