use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Caps, SolverConfig};
use crate::coefficients::{CoefficientSet, Dims};
use crate::error::{Error, Result};
use crate::inner_solver::{
    bsde_residual, simulate_forward, solve_backward_with, z_field, BackwardOptions,
    DecouplingField, ForwardConfig, GridSpec, ParticlePaths, ZField,
};
use crate::measure::io::fmt_f64;
use crate::measure::{
    diamond, flow_distance, weighted_sup_distance, EmpiricalMeasure, MeasureFlow,
};

/// Starting point `(phi0, mu0)` of the outer iteration.
#[derive(Clone, Debug)]
pub struct Init {
    pub phi: DecouplingField,
    /// Law flow on R^d.
    pub mu: MeasureFlow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta_u: f64,
    pub delta_flow: f64,
    pub sup_u: f64,
    pub lipschitz_u: f64,
    pub fourth_moment: f64,
    pub reflected: usize,
}

#[derive(Clone, Debug)]
pub struct IterationState {
    pub phi: DecouplingField,
    pub mu_flow: MeasureFlow,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub reflections: usize,
}

impl IterationState {
    pub fn new(init: Init) -> Self {
        Self {
            phi: init.phi,
            mu_flow: init.mu,
            iteration: 0,
            history: Vec::new(),
            reflections: 0,
        }
    }
}

/// One application of the outer map.
#[derive(Clone, Debug)]
pub struct PhiOutput {
    pub u: DecouplingField,
    /// Empirical marginals of X.
    pub law: MeasureFlow,
    /// The frozen joint flow `phi(t, .) <> mu_t` fed to the coefficients.
    pub joint: MeasureFlow,
    pub paths: ParticlePaths,
}

/// Particles of `x0 + mean_path(t) + sigma W_t` on the grid times, using the
/// same Brownian streams as [`simulate_forward`].
#[allow(clippy::too_many_arguments)]
pub fn gaussian_flow<F>(
    grid: &GridSpec,
    dims: Dims,
    x0: &[f64],
    sigma: &[f64],
    particles: usize,
    seed: u64,
    antithetic: bool,
    mean_path: F,
) -> Result<MeasureFlow>
where
    F: Fn(f64) -> Vec<f64>,
{
    if sigma.len() != dims.d * dims.m {
        return Err(Error::Dimension("sigma must be a d x m matrix".into()));
    }
    let sig = sigma.to_vec();
    let c = CoefficientSet::zero(dims, 1.0).with_volatility(move |_, _, _, _| sig.clone());
    let field = DecouplingField::constant(grid.clone(), &vec![0.0; dims.p])?;
    let nu = MeasureFlow::constant(
        grid.times(),
        EmpiricalMeasure::dirac(&vec![0.0; dims.joint()]),
    )?;
    let mut cfg = ForwardConfig::new(x0.to_vec(), particles, seed);
    cfg.antithetic = antithetic;
    let paths = simulate_forward(&c, &field, &nu, &cfg)?;
    let measures = (0..grid.n_times())
        .map(|k| {
            let shift = mean_path(grid.time(k));
            paths.law_x(k).shifted(&shift)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(grid.times(), measures)
}

/// `phi0(t, x) = G(x, delta_x0)` for all t and `mu0` the law of
/// `x0 + Sigma(0, x0, phi0(x0), delta) W_t`.
pub fn default_init(c: &CoefficientSet, cfg: &SolverConfig, grid: &GridSpec) -> Result<Init> {
    let delta = EmpiricalMeasure::dirac(&cfg.x0);
    let term = c.terminal.clone();
    let phi = DecouplingField::from_fn(grid.clone(), c.dims.p, |_, x| term(x, &delta))?;
    let y0 = (c.terminal)(&cfg.x0, &delta);
    let mut joint = cfg.x0.clone();
    joint.extend_from_slice(&y0);
    let sigma = (c.volatility)(0.0, &cfg.x0, &y0, &EmpiricalMeasure::dirac(&joint));
    let d = c.dims.d;
    let mu = gaussian_flow(
        grid,
        c.dims,
        &cfg.x0,
        &sigma,
        cfg.particles,
        cfg.seed,
        cfg.antithetic,
        |_| vec![0.0; d],
    )?;
    Ok(Init { phi, mu })
}

/// `Phi(phi, mu)`: freeze `nu_t = phi(t, .) <> mu_t`, solve the backward
/// problem with terminal law `mu_T`, then simulate the particles.
pub fn phi_map(
    state: &IterationState,
    c: &CoefficientSet,
    cfg: &SolverConfig,
    caps: &Caps,
) -> Result<PhiOutput> {
    let grid = state.phi.grid();
    if state.mu_flow.len() != grid.n_times() {
        return Err(Error::Grid(
            "iterate flow and field have different time grids".into(),
        ));
    }
    let measures = (0..grid.n_times())
        .map(|k| diamond(|x| state.phi.eval_level(k, x), state.mu_flow.at(k)))
        .collect::<Result<Vec<_>>>()?;
    let joint = MeasureFlow::new(grid.times(), measures)?;
    let opts = BackwardOptions {
        gamma_cap: Some(caps.gamma_cap),
    };
    let u = solve_backward_with(c, &joint, state.mu_flow.terminal(), grid, &opts)?;
    let dump = |what: String| {
        Error::Divergence(format!(
            "{what} at outer iteration {}; history (delta_u, delta_flow): {:?}",
            state.iteration + 1,
            state
                .history
                .iter()
                .map(|r| (r.delta_u, r.delta_flow))
                .collect::<Vec<_>>()
        ))
    };
    let sup = u.sup_norm();
    if sup > caps.gamma_cap {
        return Err(dump(format!(
            "sup |u| = {sup:.4e} exceeds gamma_cap {:.4e}",
            caps.gamma_cap
        )));
    }
    let lip = u.lipschitz_x();
    if lip > caps.lipschitz_cap {
        return Err(dump(format!(
            "grid Lipschitz constant {lip:.4e} exceeds lipschitz_cap {:.4e}",
            caps.lipschitz_cap
        )));
    }
    let mut fwd = ForwardConfig::new(cfg.x0.clone(), cfg.particles, cfg.seed);
    fwd.antithetic = cfg.antithetic;
    let paths = simulate_forward(c, &u, &joint, &fwd)?;
    let m4 = paths.sup_fourth_moment();
    if m4 > caps.gamma_prime {
        return Err(dump(format!(
            "E sup |X|^4 = {m4:.4e} exceeds gamma_prime {:.4e}",
            caps.gamma_prime
        )));
    }
    Ok(PhiOutput {
        u,
        law: paths.x_flow(),
        joint,
        paths,
    })
}

/// Replaces a seeded `theta`-share of the particles of `old` by those of
/// `new`, using the same indices at every time. Antithetic pairs are kept
/// together.
pub fn blend_flows(
    old: &MeasureFlow,
    new: &MeasureFlow,
    theta: f64,
    paired: bool,
    seed: u64,
) -> Result<MeasureFlow> {
    if theta >= 1.0 {
        return Ok(new.clone());
    }
    let n = new.particles();
    if old.len() != new.len() || old.particles() != n || old.dim() != new.dim() {
        return Err(Error::Config(
            "damped flows must share times, size and dimension".into(),
        ));
    }
    if old
        .measures()
        .iter()
        .chain(new.measures())
        .any(|m| !m.is_uniform())
    {
        return Err(Error::Unsupported(
            "flow blending needs uniform-weight clouds".into(),
        ));
    }
    let pairs = paired && n.is_multiple_of(2);
    let units = if pairs { n / 2 } else { n };
    let take = (theta * units as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, units, take);
    let d = new.dim();
    let measures = old
        .measures()
        .iter()
        .zip(new.measures())
        .map(|(a, b)| {
            let mut pts = a.raw_points().to_vec();
            let src = b.raw_points();
            for u in chosen.iter() {
                let range = if pairs {
                    2 * u * d..(2 * u + 2) * d
                } else {
                    u * d..(u + 1) * d
                };
                pts[range.clone()].copy_from_slice(&src[range]);
            }
            EmpiricalMeasure::uniform(d, pts)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(new.times().to_vec(), measures)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub bsde_residual: f64,
    pub caps: Option<Caps>,
    pub sup_u: f64,
    pub lipschitz_u: f64,
    /// `max |u(t_{k+1}, x) - u(t_k, x)| / dt^{1/2}`, reported only.
    pub holder_time_ratio: f64,
    pub fourth_moment: f64,
    pub reflected: usize,
    pub reflections: usize,
    pub substeps: usize,
}

/// Result of an outer iteration run.
#[derive(Clone)]
pub struct SolutionBundle {
    pub field: DecouplingField,
    pub z: ZField,
    /// Marginal laws of X from the final particles.
    pub flow: MeasureFlow,
    /// Joint law the coefficients saw in the final application.
    pub joint_flow: MeasureFlow,
    pub paths: ParticlePaths,
    pub converged: bool,
    pub iterations: usize,
    pub delta_u: f64,
    pub delta_flow: f64,
    pub history: Vec<IterationRecord>,
    pub diagnostics: Diagnostics,
}

impl std::fmt::Debug for SolutionBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolutionBundle")
            .field("converged", &self.converged)
            .field("iterations", &self.iterations)
            .field("delta_u", &self.delta_u)
            .field("delta_flow", &self.delta_flow)
            .field("diagnostics", &self.diagnostics)
            .finish_non_exhaustive()
    }
}

impl SolutionBundle {
    /// `E[X_{t_k}]` per component.
    pub fn mean_x(&self, k: usize) -> Vec<f64> {
        self.flow.at(k).mean().to_vec()
    }

    /// `E[Y_{t_k}]` per component.
    pub fn mean_y(&self, k: usize) -> Vec<f64> {
        let n = self.paths.particles();
        let p = self.paths.dims.p;
        let mut m = vec![0.0; p];
        for i in 0..n {
            for (a, v) in m.iter_mut().zip(self.paths.y(i, k)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    }

    pub fn to_init(&self) -> Init {
        Init {
            phi: self.field.clone(),
            mu: self.flow.clone(),
        }
    }
}

pub fn write_history_csv<W: Write>(history: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "delta_u",
        "delta_flow",
        "sup_u",
        "lipschitz_u",
        "fourth_moment",
        "reflected",
    ])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            fmt_f64(r.delta_u),
            fmt_f64(r.delta_flow),
            fmt_f64(r.sup_u),
            fmt_f64(r.lipschitz_u),
            fmt_f64(r.fourth_moment),
            r.reflected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Damped Picard iteration on `(phi, mu)`.
///
/// Convergence compares consecutive outputs of the outer map, so at least
/// two applications are always made. Non-convergence is reported through
/// `converged = false`, not as an error.
pub fn solve(c: &CoefficientSet, cfg: &SolverConfig, init: Option<Init>) -> Result<SolutionBundle> {
    cfg.validate()?;
    if cfg.grid.dim() != c.dims.d {
        return Err(Error::Config(format!(
            "grid has {} axes, problem has d = {}",
            cfg.grid.dim(),
            c.dims.d
        )));
    }
    let grid = cfg.resolved_grid(c)?;
    let caps = cfg.resolved_caps(c);
    let init = match init {
        Some(i) => Init {
            phi: i.phi.regrid(grid.clone())?,
            mu: i.mu,
        },
        None => default_init(c, cfg, &grid)?,
    };
    if init.phi.value_dim() != c.dims.p || init.mu.dim() != c.dims.d {
        return Err(Error::Dimension(
            "initial field or flow does not match the problem dimensions".into(),
        ));
    }
    let mut state = IterationState::new(init);
    let mut previous: Option<PhiOutput> = None;
    let mut converged = false;
    let (mut delta_u, mut delta_flow) = (f64::INFINITY, f64::INFINITY);

    while state.iteration < cfg.max_iters {
        let out = phi_map(&state, c, cfg, &caps)?;
        state.iteration += 1;
        let (ref_u, ref_flow) = match &previous {
            Some(p) => (&p.u, &p.law),
            None => (&state.phi, &state.mu_flow),
        };
        delta_u = weighted_sup_distance(&out.u, ref_u)?;
        delta_flow = flow_distance(&out.law, ref_flow)?;
        state.reflections += out.paths.reflections;
        state.history.push(IterationRecord {
            iteration: state.iteration,
            delta_u,
            delta_flow,
            sup_u: out.u.sup_norm(),
            lipschitz_u: out.u.lipschitz_x(),
            fourth_moment: out.paths.sup_fourth_moment(),
            reflected: out.paths.reflected,
        });
        if previous.is_some() && delta_u <= cfg.tol_u && delta_flow <= cfg.tol_flow {
            converged = true;
            previous = Some(out);
            break;
        }
        let blend_seed = cfg.seed ^ (state.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        state.phi = state.phi.blend(&out.u, cfg.theta)?;
        state.mu_flow = blend_flows(
            &state.mu_flow,
            &out.law,
            cfg.theta,
            cfg.antithetic,
            blend_seed,
        )?;
        previous = Some(out);
    }

    let last = previous.expect("max_iters >= 1 guarantees one application");
    let z = z_field(&last.u, c, &last.joint)?;
    let residual = bsde_residual(&last.paths, &last.u, c, &last.joint)?;
    let diagnostics = Diagnostics {
        bsde_residual: residual,
        caps: Some(caps),
        sup_u: last.u.sup_norm(),
        lipschitz_u: last.u.lipschitz_x(),
        holder_time_ratio: last.u.holder_time_ratio(),
        fourth_moment: last.paths.sup_fourth_moment(),
        reflected: last.paths.reflected,
        reflections: state.reflections,
        substeps: grid.substeps(),
    };
    Ok(SolutionBundle {
        field: last.u,
        z,
        flow: last.law,
        joint_flow: last.joint,
        paths: last.paths,
        converged,
        iterations: state.iteration,
        delta_u,
        delta_flow,
        history: state.history,
        diagnostics,
    })
}
