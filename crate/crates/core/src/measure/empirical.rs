use std::sync::{Arc, OnceLock};

use crate::error::{ensure_finite, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A probability measure supported on finitely many atoms of R^k.
///
/// Atoms are stored row-major in a flat buffer. Uniform clouds do not store
/// their weights. The mean and the leading-coordinate marginal are computed
/// at most once and cached, since coefficient functions query them at every
/// grid node and every particle.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Arc<[f64]>,
    weights: Option<Arc<[f64]>>,
    mean: OnceLock<Vec<f64>>,
    head: OnceLock<(usize, Arc<EmpiricalMeasure>)>,
}

impl EmpiricalMeasure {
    /// Uniform cloud from a flat row-major buffer of `points.len() / dim` atoms.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        Self::validate_points(dim, &points)?;
        Ok(Self::from_parts(dim, points.into(), None))
    }

    pub fn weighted(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::validate_points(dim, &points)?;
        let n = points.len() / dim;
        if weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights for {} atoms",
                weights.len(),
                n
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Domain(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self::from_parts(dim, points.into(), Some(weights.into())))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Domain("empty cloud".into()))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("rows of unequal length".into()));
        }
        Self::uniform(dim, rows.concat())
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self::from_parts(point.len(), point.to_vec().into(), None)
    }

    /// Uniform cloud of scalar atoms.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(1, values.to_vec())
    }

    fn validate_points(dim: usize, points: &[f64]) -> Result<()> {
        if dim == 0 {
            return Err(Error::Dimension(
                "point dimension must be at least 1".into(),
            ));
        }
        if points.is_empty() {
            return Err(Error::Domain("empty cloud".into()));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "buffer of length {} is not a multiple of dimension {}",
                points.len(),
                dim
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            let row = i / dim;
            return Err(Error::numeric(
                "cloud atom",
                &points[row * dim..(row + 1) * dim],
            ));
        }
        Ok(())
    }

    fn from_parts(dim: usize, points: Arc<[f64]>, weights: Option<Arc<[f64]>>) -> Self {
        Self {
            dim,
            points,
            weights,
            mean: OnceLock::new(),
            head: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn raw_points(&self) -> &[f64] {
        &self.points
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Sum of `w_i f(x_i)`.
    pub fn integrate<F>(&self, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut acc: Vec<f64> = Vec::new();
        for (i, x) in self.points().enumerate() {
            let v = f(x);
            ensure_finite(&v, "integrand", x)?;
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            } else if acc.len() != v.len() {
                return Err(Error::Dimension("integrand output length varies".into()));
            }
            let w = self.weight(i);
            for (a, vi) in acc.iter_mut().zip(&v) {
                *a += w * vi;
            }
        }
        Ok(acc)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| {
            let mut acc = vec![0.0; self.dim];
            for (i, x) in self.points().enumerate() {
                let w = self.weight(i);
                for (a, xi) in acc.iter_mut().zip(x) {
                    *a += w * xi;
                }
            }
            acc
        })
    }

    /// Per-coordinate second moments `E[x_j^2]`.
    pub fn second_moment(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for (i, x) in self.points().enumerate() {
            let w = self.weight(i);
            for (a, xi) in acc.iter_mut().zip(x) {
                *a += w * xi * xi;
            }
        }
        acc
    }

    /// `E|x|^2`.
    pub fn norm_sq_moment(&self) -> f64 {
        self.second_moment().iter().sum()
    }

    /// `E|x_range|^2` restricted to a block of coordinates.
    pub fn block_norm_sq_moment(&self, range: std::ops::Range<usize>) -> f64 {
        self.second_moment()[range].iter().sum()
    }

    /// Marginal on the coordinates `range`, keeping weights.
    pub fn marginal(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.dim {
            return Err(Error::Dimension(format!(
                "marginal {range:?} of a {}-dimensional cloud",
                self.dim
            )));
        }
        let k = range.len();
        let mut pts = Vec::with_capacity(self.len() * k);
        for x in self.points() {
            pts.extend_from_slice(&x[range.clone()]);
        }
        Ok(Self::from_parts(k, pts.into(), self.weights.clone()))
    }

    /// Cached marginal on the first `d` coordinates. Coefficients of the
    /// forward-backward system mostly read the state marginal of the joint law.
    pub fn head_marginal(&self, d: usize) -> Result<Arc<Self>> {
        if d == 0 || d > self.dim {
            return Err(Error::Dimension(format!(
                "head marginal of size {d} from a {}-dimensional cloud",
                self.dim
            )));
        }
        if let Some((cached_d, m)) = self.head.get() {
            if *cached_d == d {
                return Ok(Arc::clone(m));
            }
            return Ok(Arc::new(self.marginal(0..d)?));
        }
        let m = Arc::new(self.marginal(0..d)?);
        let _ = self.head.set((d, Arc::clone(&m)));
        Ok(m)
    }

    /// Translate every atom by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::Dimension("shift length".into()));
        }
        let pts: Vec<f64> = self
            .points()
            .flat_map(|x| x.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Ok(Self::from_parts(self.dim, pts.into(), self.weights.clone()))
    }

    /// Image of the cloud under `f`, weights preserved.
    pub fn push_forward<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut pts = Vec::new();
        let mut out_dim = 0;
        for x in self.points() {
            let v = f(x);
            ensure_finite(&v, "push-forward map", x)?;
            if out_dim == 0 {
                out_dim = v.len();
            } else if v.len() != out_dim {
                return Err(Error::Dimension("map output length varies".into()));
            }
            pts.extend(v);
        }
        if out_dim == 0 {
            return Err(Error::Dimension("map returned an empty vector".into()));
        }
        Ok(Self::from_parts(out_dim, pts.into(), self.weights.clone()))
    }

    /// Equality as weighted multisets, up to atom order.
    pub fn same_measure(&self, other: &Self) -> bool {
        if self.dim != other.dim || self.len() != other.len() {
            return false;
        }
        let key = |m: &Self| {
            let mut rows: Vec<(Vec<f64>, f64)> = m
                .points()
                .enumerate()
                .map(|(i, x)| (x.to_vec(), m.weight(i)))
                .collect();
            rows.sort_by(|a, b| a.partial_cmp(b).expect("finite atoms"));
            rows
        };
        key(self) == key(other)
    }
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.weights() == other.weights()
    }
}

/// Time-indexed family of clouds sharing one point dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFlow {
    times: Vec<f64>,
    measures: Vec<EmpiricalMeasure>,
}

impl MeasureFlow {
    pub fn new(times: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.len() != measures.len() {
            return Err(Error::Dimension(format!(
                "{} times for {} measures",
                times.len(),
                measures.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::Domain("empty measure flow".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "flow times must be strictly increasing".into(),
            ));
        }
        let dim = measures[0].dim();
        if measures.iter().any(|m| m.dim() != dim) {
            return Err(Error::Dimension("flow measures differ in dimension".into()));
        }
        Ok(Self { times, measures })
    }

    /// The same cloud repeated at every time.
    pub fn constant(times: Vec<f64>, measure: EmpiricalMeasure) -> Result<Self> {
        let measures = vec![measure; times.len()];
        Self::new(times, measures)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn at(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.measures.last().expect("flows are nonempty")
    }

    pub fn particles(&self) -> usize {
        self.measures[0].len()
    }

    pub fn into_measures(self) -> Vec<EmpiricalMeasure> {
        self.measures
    }
}
