//! Coefficient bundles assembled from control problems: the adjoint system
//! of a mean-field game and, with Lions-derivative terms, of mean-field
//! (McKean-Vlasov) control.

mod argmin;

pub use argmin::{argmin_hamiltonian, hamiltonian, HamiltonianEval};

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coefficients::{CoefficientSet, Dims};
use crate::error::{Error, Result};
use crate::measure::{w2, EmpiricalMeasure};

/// `(t, x, mu_X, alpha) -> T`.
pub type ControlFn<T> = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> T + Send + Sync>;
/// `(t, x, mu_X, alpha, v) -> T`, the Lions derivative evaluated at `v`.
pub type LionsFn =
    Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// `(x, mu_X) -> T`.
pub type TerminalCostFn<T> = Arc<dyn Fn(&[f64], &EmpiricalMeasure) -> T + Send + Sync>;
/// `(x, mu_X, v) -> R^d`.
pub type TerminalLionsFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure, &[f64]) -> Vec<f64> + Send + Sync>;
/// `(t, x, y, mu_X) -> R^k`.
pub type AlphaHatFn = Arc<dyn Fn(f64, &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;

/// State dynamics `b`, running cost `f`, terminal cost `g`, constant
/// volatility, and the partial derivatives the adjoint systems need.
///
/// Matrices are row-major: `db_dx[i * d + j] = d b_i / d x_j` and
/// `lions_b(..)(v)[i * d + l] = d_mu b_i (v)_l`.
#[derive(Clone)]
pub struct ControlProblem {
    pub d: usize,
    pub m: usize,
    /// Control dimension.
    pub k: usize,
    pub b: Option<ControlFn<Vec<f64>>>,
    pub db_dx: Option<ControlFn<Vec<f64>>>,
    pub f: Option<ControlFn<f64>>,
    pub df_dx: Option<ControlFn<Vec<f64>>>,
    pub g: Option<TerminalCostFn<f64>>,
    pub dg_dx: Option<TerminalCostFn<Vec<f64>>>,
    pub lions_b: Option<LionsFn>,
    pub lions_f: Option<LionsFn>,
    pub lions_g: Option<TerminalLionsFn>,
    /// Row-major `d x m`.
    pub sigma: Option<Vec<f64>>,
    pub alpha_hat: Option<AlphaHatFn>,
    pub alpha_bounds: Option<Vec<(f64, f64)>>,
    pub declared_l: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("k", &self.k)
            .field("sigma", &self.sigma)
            .field("alpha_bounds", &self.alpha_bounds)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(d: usize, m: usize, k: usize) -> Self {
        Self {
            d,
            m,
            k,
            b: None,
            db_dx: None,
            f: None,
            df_dx: None,
            g: None,
            dg_dx: None,
            lions_b: None,
            lions_f: None,
            lions_g: None,
            sigma: None,
            alpha_hat: None,
            alpha_bounds: None,
            declared_l: 1.0,
        }
    }

    pub fn with_drift<B, DB>(mut self, b: B, db_dx: DB) -> Self
    where
        B: Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        DB: Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.b = Some(Arc::new(b));
        self.db_dx = Some(Arc::new(db_dx));
        self
    }

    pub fn with_running_cost<F, DF>(mut self, f: F, df_dx: DF) -> Self
    where
        F: Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> f64 + Send + Sync + 'static,
        DF: Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.f = Some(Arc::new(f));
        self.df_dx = Some(Arc::new(df_dx));
        self
    }

    pub fn with_terminal_cost<G, DG>(mut self, g: G, dg_dx: DG) -> Self
    where
        G: Fn(&[f64], &EmpiricalMeasure) -> f64 + Send + Sync + 'static,
        DG: Fn(&[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        self.g = Some(Arc::new(g));
        self.dg_dx = Some(Arc::new(dg_dx));
        self
    }

    pub fn with_lions_drift<L>(mut self, l: L) -> Self
    where
        L: Fn(f64, &[f64], &EmpiricalMeasure, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.lions_b = Some(Arc::new(l));
        self
    }

    pub fn with_lions_cost<L>(mut self, l: L) -> Self
    where
        L: Fn(f64, &[f64], &EmpiricalMeasure, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.lions_f = Some(Arc::new(l));
        self
    }

    pub fn with_lions_terminal<L>(mut self, l: L) -> Self
    where
        L: Fn(&[f64], &EmpiricalMeasure, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.lions_g = Some(Arc::new(l));
        self
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_alpha_hat<A>(mut self, a: A) -> Self
    where
        A: Fn(f64, &[f64], &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        self.alpha_hat = Some(Arc::new(a));
        self
    }

    pub fn with_alpha_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.alpha_bounds = Some(bounds);
        self
    }

    pub fn with_declared_l(mut self, l: f64) -> Self {
        self.declared_l = l;
        self
    }

    fn dims(&self) -> Dims {
        Dims::new(self.d, self.d, self.m)
    }

    fn check_sigma(&self) -> Result<Vec<f64>> {
        let s = self.sigma.clone().ok_or_else(|| {
            Error::Config("the volatility must be a constant matrix; none was given".into())
        })?;
        if s.len() != self.d * self.m {
            return Err(Error::Config(format!(
                "sigma has {} entries, expected d x m = {}",
                s.len(),
                self.d * self.m
            )));
        }
        let ell = crate::coefficients::min_eigen_aat(&s, self.d, self.m);
        if !(ell > 0.0) {
            return Err(Error::Config(format!(
                "sigma sigma^T must be positive definite; smallest eigenvalue {ell}"
            )));
        }
        Ok(s)
    }
}

fn require<T: Clone>(v: &Option<T>, what: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Config(format!("the control problem does not supply {what}")))
}

/// Marks every output as NaN so grid and particle checks report the point.
fn poisoned(n: usize) -> Vec<f64> {
    vec![f64::NAN; n]
}

/// Shared pieces of both adjoint systems.
struct Parts {
    p: Arc<ControlProblem>,
    b: ControlFn<Vec<f64>>,
    db_dx: ControlFn<Vec<f64>>,
    df_dx: ControlFn<Vec<f64>>,
}

impl Parts {
    fn new(p: &ControlProblem) -> Result<(Self, Vec<f64>)> {
        let sigma = p.check_sigma()?;
        let parts = Self {
            p: Arc::new(p.clone()),
            b: require(&p.b, "the drift b")?,
            db_dx: require(&p.db_dx, "d_x b")?,
            df_dx: require(&p.df_dx, "d_x f")?,
        };
        if p.alpha_hat.is_none() && p.alpha_bounds.is_none() {
            return Err(Error::Config(
                "supply alpha_hat or alpha_bounds to minimize the Hamiltonian".into(),
            ));
        }
        require(&p.f, "the running cost f")?;
        require(&p.dg_dx, "d_x g")?;
        Ok((parts, sigma))
    }

    /// `d_x f + (d_x b)^T y` at `alpha_hat`.
    fn adjoint_driver(
        &self,
        t: f64,
        x: &[f64],
        y: &[f64],
        mu: &EmpiricalMeasure,
        a: &[f64],
    ) -> Vec<f64> {
        let d = self.p.d;
        let mut out = (self.df_dx)(t, x, mu, a);
        let jac = (self.db_dx)(t, x, mu, a);
        if out.len() != d || jac.len() != d * d {
            return poisoned(d);
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += (0..d).map(|i| jac[i * d + j] * y[i]).sum::<f64>();
        }
        out
    }
}

/// Adjoint system of the mean-field game: `B = b(alpha_hat)`,
/// `F = d_x f + (d_x b)^T y`, `Sigma = sigma`, `G = d_x g`, all reading only
/// the X-marginal of the joint law.
pub fn assemble_mfg(p: &ControlProblem) -> Result<CoefficientSet> {
    let (parts, sigma) = Parts::new(p)?;
    let parts = Arc::new(parts);
    let d = p.d;
    let dg_dx = require(&p.dg_dx, "d_x g")?;
    let (pb, pf) = (parts.clone(), parts);
    Ok(CoefficientSet::zero(p.dims(), p.declared_l)
        .with_drift(move |t, x, y, _, nu| {
            let Ok(mu) = nu.head_marginal(d) else {
                return poisoned(d);
            };
            match argmin_hamiltonian(&pb.p, t, x, y, &mu) {
                Ok(a) => (pb.b)(t, x, &mu, &a),
                Err(_) => poisoned(d),
            }
        })
        .with_driver(move |t, x, y, _, nu| {
            let Ok(mu) = nu.head_marginal(d) else {
                return poisoned(d);
            };
            match argmin_hamiltonian(&pf.p, t, x, y, &mu) {
                Ok(a) => pf.adjoint_driver(t, x, y, &mu, &a),
                Err(_) => poisoned(d),
            }
        })
        .with_volatility(move |_, _, _, _| sigma.clone())
        .with_terminal(move |x, mu| dg_dx(x, mu)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LionsPart {
    Drift,
    Cost,
}

/// Empirical tilde-expectation
/// `sum_j w_j d_mu h(t, X_j, mu_X, alpha_hat(t, X_j, Y_j, mu_X))(x_eval)`,
/// contracted with `Y_j` (or with `y_contract` when given) for the drift.
pub fn lions_term(
    p: &ControlProblem,
    which: LionsPart,
    t: f64,
    joint: &EmpiricalMeasure,
    x_eval: &[f64],
    y_contract: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let d = p.d;
    if joint.dim() != 2 * d {
        return Err(Error::Dimension(format!(
            "joint cloud lives on R^{}, expected R^{}",
            joint.dim(),
            2 * d
        )));
    }
    let h = match which {
        LionsPart::Drift => require(&p.lions_b, "the Lions derivative of b")?,
        LionsPart::Cost => require(&p.lions_f, "the Lions derivative of f")?,
    };
    let mu = joint.head_marginal(d)?;
    let mut out = vec![0.0; d];
    for (j, atom) in joint.points().enumerate() {
        let (xj, yj) = atom.split_at(d);
        let w = joint.weight(j);
        let a = argmin_hamiltonian(p, t, xj, yj, &mu)?;
        let v = h(t, xj, &mu, &a, x_eval);
        match which {
            LionsPart::Cost => {
                if v.len() != d {
                    return Err(Error::Dimension("d_mu f must return d values".into()));
                }
                out.iter_mut().zip(&v).for_each(|(o, vi)| *o += w * vi);
            }
            LionsPart::Drift => {
                if v.len() != d * d {
                    return Err(Error::Dimension("d_mu b must return a d x d matrix".into()));
                }
                let y = y_contract.unwrap_or(yj);
                for (l, o) in out.iter_mut().enumerate() {
                    *o += w * (0..d).map(|i| v[i * d + l] * y[i]).sum::<f64>();
                }
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("Lions term", x_eval));
    }
    Ok(out)
}

/// Adjoint system of mean-field control: the MFG bundle plus the
/// tilde-expectations of `d_mu f`, `d_mu b . Y~` and `d_mu g`, which read the
/// joint law of `(X, Y)`.
pub fn assemble_mkv_control(p: &ControlProblem) -> Result<CoefficientSet> {
    let (parts, sigma) = Parts::new(p)?;
    require(&p.lions_b, "the Lions derivative of b")?;
    require(&p.lions_f, "the Lions derivative of f")?;
    let lions_g = require(&p.lions_g, "the Lions derivative of g")?;
    let dg_dx = require(&p.dg_dx, "d_x g")?;
    let parts = Arc::new(parts);
    let d = p.d;
    let (pb, pf) = (parts.clone(), parts);
    Ok(CoefficientSet::zero(p.dims(), p.declared_l)
        .with_drift(move |t, x, y, _, nu| {
            let Ok(mu) = nu.head_marginal(d) else {
                return poisoned(d);
            };
            match argmin_hamiltonian(&pb.p, t, x, y, &mu) {
                Ok(a) => (pb.b)(t, x, &mu, &a),
                Err(_) => poisoned(d),
            }
        })
        .with_driver(move |t, x, y, _, nu| {
            let eval = || -> Result<Vec<f64>> {
                let mu = nu.head_marginal(d)?;
                let a = argmin_hamiltonian(&pf.p, t, x, y, &mu)?;
                let mut out = pf.adjoint_driver(t, x, y, &mu, &a);
                let lf = lions_term(&pf.p, LionsPart::Cost, t, nu, x, None)?;
                let lb = lions_term(&pf.p, LionsPart::Drift, t, nu, x, None)?;
                for j in 0..d {
                    out[j] += lf[j] + lb[j];
                }
                Ok(out)
            };
            eval().unwrap_or_else(|_| poisoned(d))
        })
        .with_volatility(move |_, _, _, _| sigma.clone())
        .with_terminal(move |x, mu| {
            let mut out = dg_dx(x, mu);
            if out.len() != d {
                return poisoned(d);
            }
            for (j, atom) in mu.points().enumerate() {
                let w = mu.weight(j);
                let v = lions_g(atom, mu, x);
                if v.len() != d {
                    return poisoned(d);
                }
                out.iter_mut().zip(&v).for_each(|(o, vi)| *o += w * vi);
            }
            out
        }))
}

/// Largest observed `|alpha(a) - alpha(b)| / (|dx| + |dy| + W2)` over
/// random probes; reported without a threshold.
pub fn alpha_hat_lipschitz(
    p: &ControlProblem,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    let d = p.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let vec = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-radius..radius)).collect()
    };
    for _ in 0..samples {
        let t = rng.random_range(0.0..1.0);
        let (x1, y1) = (vec(&mut rng, d), vec(&mut rng, d));
        let step = 1e-3 * radius;
        let x2: Vec<f64> = x1
            .iter()
            .map(|v| v + step * rng.random_range(-1.0..1.0))
            .collect();
        let y2: Vec<f64> = y1
            .iter()
            .map(|v| v + step * rng.random_range(-1.0..1.0))
            .collect();
        let cloud = EmpiricalMeasure::uniform(d, vec(&mut rng, 4 * d))?;
        let shift = vec(&mut rng, d)
            .iter()
            .map(|v| v * 1e-3)
            .collect::<Vec<_>>();
        let cloud2 = cloud.shifted(&shift)?;
        let a1 = argmin_hamiltonian(p, t, &x1, &y1, &cloud)?;
        let a2 = argmin_hamiltonian(p, t, &x2, &y2, &cloud2)?;
        let num = a1
            .iter()
            .zip(&a2)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let dist = |u: &[f64], v: &[f64]| {
            u.iter()
                .zip(v)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let den = dist(&x1, &x2) + dist(&y1, &y2) + w2(&cloud, &cloud2)?;
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq() -> ControlProblem {
        ControlProblem::new(1, 1, 1)
            .with_drift(|_, _, _, a| vec![a[0]], |_, _, _, _| vec![0.0])
            .with_running_cost(|_, _, _, a| 0.5 * a[0] * a[0], |_, _, _, _| vec![0.0])
            .with_terminal_cost(|x, _| 0.5 * x[0] * x[0], |x, _| vec![x[0]])
            .with_sigma(vec![1.0])
            .with_alpha_hat(|_, _, y, _| vec![-y[0]])
    }

    #[test]
    fn lq_mfg_bundle_matches_hand_assembly() {
        let c = assemble_mfg(&lq()).unwrap();
        let nu = EmpiricalMeasure::from_rows(&[vec![0.3, 1.0], vec![-0.2, 2.0]]).unwrap();
        let mu = nu.marginal(0..1).unwrap();
        for (x, y) in [(0.5, 1.5), (-2.0, 0.25), (0.0, 0.0)] {
            assert_eq!((c.drift)(0.1, &[x], &[y], &[0.0], &nu), vec![-y]);
            assert_eq!((c.driver)(0.1, &[x], &[y], &[0.0], &nu), vec![0.0]);
            assert_eq!((c.volatility)(0.1, &[x], &[y], &nu), vec![1.0]);
            assert_eq!((c.terminal)(&[x], &mu), vec![x]);
        }
    }

    #[test]
    fn constant_terminal_cost_gives_zero_g() {
        let p = lq().with_terminal_cost(|_, _| 3.0, |_, _| vec![0.0]);
        let c = assemble_mfg(&p).unwrap();
        assert_eq!(
            (c.terminal)(&[1.7], &EmpiricalMeasure::dirac(&[0.0])),
            vec![0.0]
        );
    }

    #[test]
    fn zero_adjoint_probe_reduces_to_dx_f() {
        let p = lq().with_running_cost(
            |_, x, _, a| x[0] * x[0] + a[0] * a[0],
            |_, x, _, _| vec![2.0 * x[0]],
        );
        let c = assemble_mfg(&p).unwrap();
        let nu = EmpiricalMeasure::dirac(&[0.0, 0.0]);
        assert_eq!((c.driver)(0.0, &[1.5], &[0.0], &[0.0], &nu), vec![3.0]);
    }

    #[test]
    fn missing_pieces_are_configuration_errors() {
        let no_sigma = ControlProblem::new(1, 1, 1)
            .with_drift(|_, _, _, a| vec![a[0]], |_, _, _, _| vec![0.0])
            .with_running_cost(|_, _, _, a| a[0] * a[0], |_, _, _, _| vec![0.0])
            .with_terminal_cost(|_, _| 0.0, |_, _| vec![0.0])
            .with_alpha_hat(|_, _, y, _| vec![-y[0]]);
        assert!(matches!(assemble_mfg(&no_sigma), Err(Error::Config(_))));
        let degenerate = lq().with_sigma(vec![0.0]);
        assert!(matches!(assemble_mfg(&degenerate), Err(Error::Config(_))));
        assert!(matches!(assemble_mkv_control(&lq()), Err(Error::Config(_))));
        let mut no_alpha = lq();
        no_alpha.alpha_hat = None;
        assert!(matches!(assemble_mfg(&no_alpha), Err(Error::Config(_))));
    }

    #[test]
    fn lions_term_examples() {
        let p = lq()
            .with_lions_cost(|_, xt, _, _, _| vec![xt[0]])
            .with_lions_drift(|_, _, _, _, _| vec![0.0]);
        let cloud = EmpiricalMeasure::from_rows(&[vec![1.0, 0.5], vec![2.0, -1.0], vec![6.0, 0.0]])
            .unwrap();
        let v = lions_term(&p, LionsPart::Cost, 0.0, &cloud, &[0.3], None).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-15);
        assert_eq!(
            lions_term(&p, LionsPart::Drift, 0.0, &cloud, &[0.3], None).unwrap(),
            vec![0.0]
        );

        let pb = lq().with_lions_drift(|_, xt, _, _, v| vec![xt[0] * v[0]]);
        let single = EmpiricalMeasure::dirac(&[2.0, 3.0]);
        let v = lions_term(&pb, LionsPart::Drift, 0.0, &single, &[0.5], None).unwrap();
        assert_eq!(v, vec![2.0 * 0.5 * 3.0]);
        let v = lions_term(&pb, LionsPart::Drift, 0.0, &single, &[0.5], Some(&[1.0])).unwrap();
        assert_eq!(v, vec![1.0]);
        assert!(lions_term(&lq(), LionsPart::Cost, 0.0, &single, &[0.5], None).is_err());
    }

    #[test]
    fn mkv_terminal_with_mean_interaction() {
        // g = x E[X]: d_x g = E[X], d_mu g(x~)(v) = x~, so G = 2 E[X].
        let p = lq()
            .with_terminal_cost(|x, mu| x[0] * mu.mean()[0], |_, mu| vec![mu.mean()[0]])
            .with_lions_terminal(|xt, _, _| vec![xt[0]])
            .with_lions_cost(|_, _, _, _, _| vec![0.0])
            .with_lions_drift(|_, _, _, _, _| vec![0.0]);
        let c = assemble_mkv_control(&p).unwrap();
        let mu = EmpiricalMeasure::from_scalars(&[1.0, 2.0, -0.5, 4.0, 0.25]).unwrap();
        let g = (c.terminal)(&[7.0], &mu)[0];
        assert!((g - 2.0 * 1.35).abs() < 1e-14, "{g}");
        let single = EmpiricalMeasure::dirac(&[3.0]);
        assert_eq!((c.terminal)(&[7.0], &single), vec![6.0]);
    }

    #[test]
    fn alpha_lipschitz_of_linear_feedback() {
        let l = alpha_hat_lipschitz(&lq(), 50, 2.0, 1).unwrap();
        assert!(l <= 1.0 + 1e-9 && l > 0.1, "{l}");
    }
}
