use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{DecouplingField, GradientField};
use crate::coefficients::{CoefficientSet, Dims, VolatilityFn};
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureFlow};

/// Share of particles that may be reflected at the box before a run aborts.
pub const MAX_REFLECTED_SHARE: f64 = 0.05;

/// `v(t, x) = D_x u(t, x) Sigma(t, x, u(t, x), nu_t)`, row-major `p x m`.
#[derive(Clone)]
pub struct ZField {
    dims: Dims,
    field: DecouplingField,
    gradient: GradientField,
    volatility: VolatilityFn,
    flow: MeasureFlow,
}

pub fn z_field(field: &DecouplingField, c: &CoefficientSet, flow: &MeasureFlow) -> Result<ZField> {
    if field.grid().dim() != c.dims.d || field.value_dim() != c.dims.p {
        return Err(Error::Dimension(
            "field shape does not match the coefficient dimensions".into(),
        ));
    }
    if flow.len() != field.grid().n_times() {
        return Err(Error::Grid(format!(
            "flow has {} time nodes, field has {}",
            flow.len(),
            field.grid().n_times()
        )));
    }
    Ok(ZField {
        dims: c.dims,
        field: field.clone(),
        gradient: field.gradient(),
        volatility: c.volatility.clone(),
        flow: flow.clone(),
    })
}

impl ZField {
    pub fn eval_level(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let y = self.field.eval_level(k, x);
        let mut jac = vec![0.0; self.dims.p * self.dims.d];
        self.gradient.eval_level_into(k, x, &mut jac);
        let sigma = (self.volatility)(self.field.grid().time(k), x, &y, self.flow.at(k));
        mat_mul(&jac, &sigma, self.dims)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.eval_level(self.field.grid().nearest_time_index(t), x)
    }
}

/// `(p x d) * (d x m)`.
fn mat_mul(jac: &[f64], sigma: &[f64], dims: Dims) -> Vec<f64> {
    let Dims { d, p, m } = dims;
    let mut z = vec![0.0; p * m];
    for q in 0..p {
        for r in 0..m {
            z[q * m + r] = (0..d).map(|j| jac[q * d + j] * sigma[j * m + r]).sum();
        }
    }
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    pub x0: Vec<f64>,
    pub particles: usize,
    pub seed: u64,
    /// Pair particle `2j + 1` with the negated increments of particle `2j`.
    pub antithetic: bool,
}

impl ForwardConfig {
    pub fn new(x0: Vec<f64>, particles: usize, seed: u64) -> Self {
        Self {
            x0,
            particles,
            seed,
            antithetic: true,
        }
    }
}

/// Particle trajectories, particle-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticlePaths {
    pub dims: Dims,
    pub times: Vec<f64>,
    pub seed: u64,
    /// `[particle][time][d]`
    pub x: Vec<f64>,
    /// `[particle][time][p]`
    pub y: Vec<f64>,
    /// `[particle][step][p * m]`
    pub z: Vec<f64>,
    /// `[particle][step][m]`
    pub dw: Vec<f64>,
    /// Particles reflected at least once.
    pub reflected: usize,
    /// Total reflection events.
    pub reflections: usize,
}

impl ParticlePaths {
    pub fn particles(&self) -> usize {
        self.x.len() / (self.times.len() * self.dims.d)
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn x(&self, i: usize, k: usize) -> &[f64] {
        let d = self.dims.d;
        let off = (i * self.n_times() + k) * d;
        &self.x[off..off + d]
    }

    pub fn y(&self, i: usize, k: usize) -> &[f64] {
        let p = self.dims.p;
        let off = (i * self.n_times() + k) * p;
        &self.y[off..off + p]
    }

    pub fn z(&self, i: usize, k: usize) -> &[f64] {
        let w = self.dims.p * self.dims.m;
        let off = (i * self.n_steps() + k) * w;
        &self.z[off..off + w]
    }

    pub fn dw(&self, i: usize, k: usize) -> &[f64] {
        let m = self.dims.m;
        let off = (i * self.n_steps() + k) * m;
        &self.dw[off..off + m]
    }

    /// Empirical law of `X_{t_k}`.
    pub fn law_x(&self, k: usize) -> EmpiricalMeasure {
        let pts = (0..self.particles())
            .flat_map(|i| self.x(i, k).iter().copied())
            .collect();
        EmpiricalMeasure::uniform(self.dims.d, pts)
            .expect("particle clouds are nonempty and finite")
    }

    /// Empirical law of `(X_{t_k}, Y_{t_k})`.
    pub fn law_xy(&self, k: usize) -> EmpiricalMeasure {
        let pts = (0..self.particles())
            .flat_map(|i| self.x(i, k).iter().chain(self.y(i, k)).copied())
            .collect();
        EmpiricalMeasure::uniform(self.dims.joint(), pts)
            .expect("particle clouds are nonempty and finite")
    }

    pub fn x_flow(&self) -> MeasureFlow {
        let ms = (0..self.n_times()).map(|k| self.law_x(k)).collect();
        MeasureFlow::new(self.times.clone(), ms).expect("path times are increasing")
    }

    pub fn xy_flow(&self) -> MeasureFlow {
        let ms = (0..self.n_times()).map(|k| self.law_xy(k)).collect();
        MeasureFlow::new(self.times.clone(), ms).expect("path times are increasing")
    }

    /// `E sup_t |X_t|^4` over particles.
    pub fn sup_fourth_moment(&self) -> f64 {
        let n = self.particles();
        let total: f64 = (0..n)
            .map(|i| {
                (0..self.n_times())
                    .map(|k| self.x(i, k).iter().map(|v| v * v).sum::<f64>().powi(2))
                    .fold(0.0, f64::max)
            })
            .sum();
        total / n as f64
    }
}

struct Path {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    dw: Vec<f64>,
    reflections: usize,
}

/// Euler-Maruyama particles driven by the decoupling field and the frozen
/// joint flow `nu`. Each particle (pair, with antithetic sampling) draws from
/// its own ChaCha stream, so results do not depend on the thread count.
pub fn simulate_forward(
    c: &CoefficientSet,
    field: &DecouplingField,
    flow: &MeasureFlow,
    cfg: &ForwardConfig,
) -> Result<ParticlePaths> {
    let Dims { d, p, m } = c.dims;
    if cfg.particles == 0 {
        return Err(Error::Config("particle count must be positive".into()));
    }
    if cfg.x0.len() != d {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, expected {d}",
            cfg.x0.len()
        )));
    }
    let grid = field.grid();
    if !grid.contains(&cfg.x0) {
        return Err(Error::Config(format!(
            "x0 = {:?} lies outside the grid box",
            cfg.x0
        )));
    }
    if flow.dim() != c.dims.joint() {
        return Err(Error::Dimension(format!(
            "forward simulation expects the joint flow on R^{}, got R^{}",
            c.dims.joint(),
            flow.dim()
        )));
    }
    let zf = z_field(field, c, flow)?;
    let n_steps = grid.n_steps();
    let times = grid.times();
    let half: Vec<f64> = grid.axes().iter().map(|a| a.half_width).collect();

    let simulate = |i: usize| -> Result<Path> {
        let (stream, sign) = if cfg.antithetic {
            (i / 2, if i % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (i, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        let mut path = Path {
            x: Vec::with_capacity((n_steps + 1) * d),
            y: Vec::with_capacity((n_steps + 1) * p),
            z: Vec::with_capacity(n_steps * p * m),
            dw: Vec::with_capacity(n_steps * m),
            reflections: 0,
        };
        let mut x = cfg.x0.clone();
        let mut jac = vec![0.0; p * d];
        let mut y = vec![0.0; p];
        for k in 0..n_steps {
            let t = times[k];
            let dt = times[k + 1] - t;
            let nu = flow.at(k);
            field.eval_level_into(k, &x, &mut y);
            zf.gradient.eval_level_into(k, &x, &mut jac);
            let sigma = (c.volatility)(t, &x, &y, nu);
            let z = mat_mul(&jac, &sigma, c.dims);
            let b = (c.drift)(t, &x, &y, &z, nu);
            let dw: Vec<f64> = (0..m)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    sign * g * dt.sqrt()
                })
                .collect();
            path.x.extend_from_slice(&x);
            path.y.extend_from_slice(&y);
            path.z.extend_from_slice(&z);
            path.dw.extend_from_slice(&dw);
            for j in 0..d {
                x[j] += b[j] * dt + (0..m).map(|r| sigma[j * m + r] * dw[r]).sum::<f64>();
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    "forward Euler step",
                    &path.x[path.x.len() - d..],
                ));
            }
            for (v, h) in x.iter_mut().zip(&half) {
                if v.abs() > *h {
                    *v = (v.signum() * 2.0 * h - *v).clamp(-h, *h);
                    path.reflections += 1;
                }
            }
        }
        field.eval_level_into(n_steps, &x, &mut y);
        path.x.extend_from_slice(&x);
        path.y.extend_from_slice(&y);
        Ok(path)
    };

    let paths: Vec<Path> = (0..cfg.particles)
        .into_par_iter()
        .map(simulate)
        .collect::<Result<_>>()?;

    let reflected = paths.iter().filter(|p| p.reflections > 0).count();
    if reflected as f64 > MAX_REFLECTED_SHARE * cfg.particles as f64 {
        return Err(Error::ParticleEscape {
            reflected,
            total: cfg.particles,
        });
    }
    let reflections = paths.iter().map(|p| p.reflections).sum();
    let mut out = ParticlePaths {
        dims: c.dims,
        times,
        seed: cfg.seed,
        x: Vec::with_capacity(cfg.particles * (n_steps + 1) * d),
        y: Vec::with_capacity(cfg.particles * (n_steps + 1) * p),
        z: Vec::with_capacity(cfg.particles * n_steps * p * m),
        dw: Vec::with_capacity(cfg.particles * n_steps * m),
        reflected,
        reflections,
    };
    for path in paths {
        out.x.extend(path.x);
        out.y.extend(path.y);
        out.z.extend(path.z);
        out.dw.extend(path.dw);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner_solver::GridSpec;

    fn setup(c: &CoefficientSet, n_x: usize) -> (DecouplingField, MeasureFlow) {
        let grid = GridSpec::uniform(1.0, 20, 1, 8.0, n_x).unwrap();
        let field = DecouplingField::constant(grid.clone(), &[0.0]).unwrap();
        let flow = MeasureFlow::constant(
            grid.times(),
            EmpiricalMeasure::dirac(&vec![0.0; c.dims.joint()]),
        )
        .unwrap();
        (field, flow)
    }

    #[test]
    fn degenerate_noise_keeps_paths_constant() {
        let c = CoefficientSet::zero(Dims::scalar(), 1.0).with_volatility(|_, _, _, _| vec![0.0]);
        let (field, flow) = setup(&c, 33);
        let paths =
            simulate_forward(&c, &field, &flow, &ForwardConfig::new(vec![1.0], 10, 3)).unwrap();
        assert!(paths.x.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn brownian_moments() {
        let c = CoefficientSet::zero(Dims::scalar(), 1.0);
        let (field, flow) = setup(&c, 33);
        let m = 4000;
        let mut cfg = ForwardConfig::new(vec![0.0], m, 11);
        cfg.antithetic = false;
        let paths = simulate_forward(&c, &field, &flow, &cfg).unwrap();
        let xt: Vec<f64> = (0..m).map(|i| paths.x(i, 20)[0]).collect();
        let mean = xt.iter().sum::<f64>() / m as f64;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let tol = 1.0 / (m as f64).sqrt();
        assert!(mean.abs() < 4.0 * tol, "mean {mean}");
        assert!((var - 1.0).abs() < 5.0 * tol, "var {var}");
    }

    #[test]
    fn antithetic_pairs_mirror_each_other() {
        let c = CoefficientSet::zero(Dims::scalar(), 1.0);
        let (field, flow) = setup(&c, 33);
        let paths =
            simulate_forward(&c, &field, &flow, &ForwardConfig::new(vec![0.0], 6, 5)).unwrap();
        for k in 0..20 {
            assert_eq!(paths.dw(0, k)[0], -paths.dw(1, k)[0]);
        }
    }

    #[test]
    fn increments_do_not_depend_on_thread_count() {
        let c = CoefficientSet::zero(Dims::scalar(), 1.0);
        let (field, flow) = setup(&c, 33);
        let cfg = ForwardConfig::new(vec![0.0], 64, 9);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let two = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| simulate_forward(&c, &field, &flow, &cfg).unwrap());
        let b = two.install(|| simulate_forward(&c, &field, &flow, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn escaping_particles_abort() {
        let c = CoefficientSet::zero(Dims::scalar(), 1.0).with_drift(|_, _, _, _, _| vec![50.0]);
        let (field, flow) = setup(&c, 33);
        let err =
            simulate_forward(&c, &field, &flow, &ForwardConfig::new(vec![0.0], 20, 1)).unwrap_err();
        assert!(matches!(err, Error::ParticleEscape { .. }));
    }

    #[test]
    fn z_field_examples() {
        let grid = GridSpec::uniform(1.0, 4, 1, 2.0, 41).unwrap();
        let flow =
            MeasureFlow::constant(grid.times(), EmpiricalMeasure::dirac(&[0.0, 0.0])).unwrap();
        let c = CoefficientSet::zero(Dims::scalar(), 1.0).with_volatility(|_, _, _, _| vec![2.0]);
        let lin = DecouplingField::from_fn(grid.clone(), 1, |_, x| vec![x[0]]).unwrap();
        let zf = z_field(&lin, &c, &flow).unwrap();
        for x in [-1.9, -0.3, 0.0, 1.23] {
            assert!((zf.eval(0.5, &[x])[0] - 2.0).abs() < 1e-12);
        }
        let cst = DecouplingField::constant(grid, &[4.0]).unwrap();
        assert_eq!(
            z_field(&cst, &c, &flow).unwrap().eval(0.1, &[0.7]),
            vec![0.0]
        );
    }
}
