use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CoefficientSet;
use crate::error::{ensure_finite, Error, Result};
use crate::measure::EmpiricalMeasure;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub n_samples: usize,
    pub box_radius: f64,
    pub seed: u64,
    /// Probe times are drawn from `[0, horizon]`.
    pub horizon: f64,
    /// Atoms per random measure argument.
    pub cloud_size: usize,
    /// Number of equispaced times for the Sigma continuity scan.
    pub time_points: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            n_samples: 256,
            box_radius: 5.0,
            seed: 0,
            horizon: 1.0,
            cloud_size: 4,
            time_points: 21,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct LipschitzEstimates {
    pub drift: f64,
    pub driver: f64,
    pub volatility: f64,
    pub terminal: f64,
}

impl LipschitzEstimates {
    pub fn max(&self) -> f64 {
        self.drift
            .max(self.driver)
            .max(self.volatility)
            .max(self.terminal)
    }

    fn merge(&mut self, other: &Self) {
        self.drift = self.drift.max(other.drift);
        self.driver = self.driver.max(other.driver);
        self.volatility = self.volatility.max(other.volatility);
        self.terminal = self.terminal.max(other.terminal);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GrowthViolation {
    pub coefficient: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub declared_l: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Largest observed `|Δoutput| / (|Δ(x,y,z)| + W2(mu, mu'))` per coefficient.
    pub lipschitz_estimates: LipschitzEstimates,
    /// First violations of the growth bounds (at most [`MAX_LISTED`]).
    pub growth_violations: Vec<GrowthViolation>,
    pub growth_violation_count: usize,
    /// Smallest eigenvalue of Sigma Sigma^T seen at any probe.
    pub ellipticity_min: f64,
    /// Largest jump of `t -> Sigma(t, 0, 0, delta_0)` between adjacent probe times.
    pub sigma_time_continuity: f64,
}

pub const MAX_LISTED: usize = 50;

impl AssumptionReport {
    /// Ellipticity below `1/L` is the only hard failure.
    pub fn has_hard_violation(&self) -> bool {
        self.ellipticity_min < 1.0 / self.declared_l - 1e-12
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let l = self.declared_l;
        let est = &self.lipschitz_estimates;
        for (name, v) in [
            ("B", est.drift),
            ("F", est.driver),
            ("Sigma", est.volatility),
            ("G", est.terminal),
        ] {
            if v > l * (1.0 + 1e-9) {
                w.push(format!("Lipschitz ratio of {name} is {v:.4} > L = {l}"));
            }
        }
        if self.growth_violation_count > 0 {
            w.push(format!(
                "{} probe points violate the growth bounds with L = {l}",
                self.growth_violation_count
            ));
        }
        w
    }
}

struct SampleOutcome {
    lipschitz: LipschitzEstimates,
    violations: Vec<GrowthViolation>,
    ellipticity: f64,
}

/// Randomized audit of Lipschitz continuity, growth, boundedness and
/// ellipticity. Measure perturbations are rigid shifts of a random cloud, for
/// which W2 equals the shift length exactly.
pub fn probe_assumptions(c: &CoefficientSet, opts: &ProbeOptions) -> Result<AssumptionReport> {
    if opts.n_samples < 2 {
        return Err(Error::Domain("probe needs at least 2 samples".into()));
    }
    if !(opts.box_radius > 0.0) || !(opts.horizon > 0.0) || opts.cloud_size == 0 {
        return Err(Error::Domain(
            "probe box, horizon and cloud size must be positive".into(),
        ));
    }
    let outcomes: Vec<SampleOutcome> = (0..opts.n_samples)
        .into_par_iter()
        .map(|s| probe_sample(c, opts, s))
        .collect::<Result<_>>()?;

    let mut lipschitz = LipschitzEstimates::default();
    let mut growth = Vec::new();
    let mut count = 0;
    let mut ellipticity = f64::INFINITY;
    for o in &outcomes {
        lipschitz.merge(&o.lipschitz);
        count += o.violations.len();
        for v in &o.violations {
            if growth.len() < MAX_LISTED {
                growth.push(v.clone());
            }
        }
        ellipticity = ellipticity.min(o.ellipticity);
    }

    let Dims { d, p, .. } = c.dims;
    let origin_x = vec![0.0; d];
    let origin_y = vec![0.0; p];
    let delta0 = EmpiricalMeasure::dirac(&vec![0.0; d + p]);
    let mut prev: Option<Vec<f64>> = None;
    let mut continuity = 0.0f64;
    let steps = opts.time_points.max(2);
    for i in 0..steps {
        let t = opts.horizon * i as f64 / (steps - 1) as f64;
        let s = (c.volatility)(t, &origin_x, &origin_y, &delta0);
        ensure_finite(&s, "Sigma", &[t])?;
        if let Some(q) = &prev {
            continuity = continuity.max(norm_diff(&s, q));
        }
        prev = Some(s);
    }

    Ok(AssumptionReport {
        declared_l: c.declared_l,
        n_samples: opts.n_samples,
        seed: opts.seed,
        lipschitz_estimates: lipschitz,
        growth_violations: growth,
        growth_violation_count: count,
        ellipticity_min: ellipticity,
        sigma_time_continuity: continuity,
    })
}

use super::Dims;

#[derive(Clone)]
struct Input {
    t: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    shift: Vec<f64>,
}

fn probe_sample(c: &CoefficientSet, opts: &ProbeOptions, sample: usize) -> Result<SampleOutcome> {
    let Dims { d, p, m } = c.dims;
    let r = opts.box_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(sample as u64);
    let uniform = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-r..=r)).collect()
    };
    let base = Input {
        t: rng.random_range(0.0..=opts.horizon),
        x: uniform(d, &mut rng),
        y: uniform(p, &mut rng),
        z: uniform(p * m, &mut rng),
        shift: vec![0.0; d + p],
    };
    let cloud = EmpiricalMeasure::uniform(d + p, uniform((d + p) * opts.cloud_size, &mut rng))?;

    // Perturb one argument group at a time, then everything jointly.
    let mut perturbed = Vec::with_capacity(5);
    let step = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let scale = rng.random_range(1e-3..=0.5) * r;
        (0..n)
            .map(|_| rng.random_range(-1.0..=1.0) * scale)
            .collect()
    };
    for group in 0..5 {
        let mut q = base.clone();
        if group == 0 || group == 4 {
            add(&mut q.x, &step(d, &mut rng));
        }
        if group == 1 || group == 4 {
            add(&mut q.y, &step(p, &mut rng));
        }
        if group == 2 || group == 4 {
            add(&mut q.z, &step(p * m, &mut rng));
        }
        if group == 3 || group == 4 {
            q.shift = step(d + p, &mut rng);
        }
        perturbed.push(q);
    }

    let eval = |inp: &Input| -> Result<[Vec<f64>; 4]> {
        let nu = if inp.shift.iter().all(|s| *s == 0.0) {
            cloud.clone()
        } else {
            cloud.shifted(&inp.shift)?
        };
        let terminal_mu = nu.marginal(0..d)?;
        let point = [&[inp.t][..], &inp.x, &inp.y, &inp.z].concat();
        let b = (c.drift)(inp.t, &inp.x, &inp.y, &inp.z, &nu);
        ensure_finite(&b, "B", &point)?;
        let f = (c.driver)(inp.t, &inp.x, &inp.y, &inp.z, &nu);
        ensure_finite(&f, "F", &point)?;
        let s = (c.volatility)(inp.t, &inp.x, &inp.y, &nu);
        ensure_finite(&s, "Sigma", &point)?;
        let g = (c.terminal)(&inp.x, &terminal_mu);
        ensure_finite(&g, "G", &point)?;
        if b.len() != d || f.len() != p || s.len() != d * m || g.len() != p {
            return Err(Error::Dimension(format!(
                "coefficient output sizes ({}, {}, {}, {}) do not match (d, p, d*m, p) = ({d}, {p}, {}, {p})",
                b.len(),
                f.len(),
                s.len(),
                g.len(),
                d * m
            )));
        }
        Ok([b, f, s, g])
    };

    let base_out = eval(&base)?;
    let mut lipschitz = LipschitzEstimates::default();
    let mut violations = Vec::new();
    let mut ellipticity = min_eigen_aat(&base_out[2], d, m);
    check_growth(c, &base, &cloud, &base_out, &mut violations)?;

    for q in &perturbed {
        let out = eval(q)?;
        let dxyz = (norm_sq_diff(&q.x, &base.x)
            + norm_sq_diff(&q.y, &base.y)
            + norm_sq_diff(&q.z, &base.z))
        .sqrt();
        let w2 = norm(&q.shift);
        let denom = dxyz + w2;
        if denom > 0.0 {
            lipschitz.drift = lipschitz
                .drift
                .max(norm_diff(&out[0], &base_out[0]) / denom);
            lipschitz.driver = lipschitz
                .driver
                .max(norm_diff(&out[1], &base_out[1]) / denom);
            lipschitz.volatility = lipschitz
                .volatility
                .max(norm_diff(&out[2], &base_out[2]) / denom);
        }
        let denom_g = norm_diff(&q.x, &base.x) + norm(&q.shift[..d]);
        if denom_g > 0.0 {
            lipschitz.terminal = lipschitz
                .terminal
                .max(norm_diff(&out[3], &base_out[3]) / denom_g);
        }
        ellipticity = ellipticity.min(min_eigen_aat(&out[2], d, m));
        let nu = cloud.shifted(&q.shift)?;
        check_growth(c, q, &nu, &out, &mut violations)?;
    }

    Ok(SampleOutcome {
        lipschitz,
        violations,
        ellipticity,
    })
}

fn check_growth(
    c: &CoefficientSet,
    inp: &Input,
    nu: &EmpiricalMeasure,
    out: &[Vec<f64>; 4],
    violations: &mut Vec<GrowthViolation>,
) -> Result<()> {
    let l = c.declared_l;
    let d = c.dims.d;
    let joint_moment = nu.norm_sq_moment().sqrt();
    let y_moment = nu.block_norm_sq_moment(d..c.dims.joint()).sqrt();
    let bounds = [
        (
            "B",
            l * (1.0 + norm(&inp.x) + norm(&inp.y) + norm(&inp.z) + joint_moment),
        ),
        ("F", l * (1.0 + norm(&inp.y) + y_moment)),
        ("Sigma", l),
        ("G", l),
    ];
    for (value, (name, bound)) in out.iter().zip(bounds) {
        let v = norm(value);
        if v > bound * (1.0 + 1e-12) {
            violations.push(GrowthViolation {
                coefficient: name.into(),
                t: inp.t,
                x: inp.x.clone(),
                y: inp.y.clone(),
                value: v,
                bound,
            });
        }
    }
    Ok(())
}

/// Smallest eigenvalue of `A A^T` for a row-major `rows x cols` matrix.
pub(crate) fn min_eigen_aat(a: &[f64], rows: usize, cols: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, a);
    let aat = &m * m.transpose();
    aat.symmetric_eigenvalues().min()
}

/// Largest eigenvalue of `A A^T`.
pub(crate) fn max_eigen_aat(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 1 {
        return a.iter().map(|v| v * v).sum();
    }
    let m = DMatrix::from_row_slice(rows, cols, a);
    let aat = &m * m.transpose();
    aat.symmetric_eigenvalues().max()
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn norm_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    norm_sq_diff(a, b).sqrt()
}
