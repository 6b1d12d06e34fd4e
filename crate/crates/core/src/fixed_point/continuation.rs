use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SolverConfig;
use super::iteration::{solve, Init, SolutionBundle};
use crate::coefficients::{truncate, CoefficientSet};
use crate::error::{Error, Result};
use crate::measure::{flow_distance, weighted_sup_distance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Distances to the previous level's solution; absent for the first level.
    pub delta_u: Option<f64>,
    pub delta_flow: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ContinuationOutcome {
    /// Solution at the largest level reached.
    pub bundle: SolutionBundle,
    pub levels: Vec<LevelRecord>,
    /// Error that stopped the ladder early, if any.
    pub aborted: Option<String>,
}

/// Solves with `truncate(c, n_j)` for each ladder level, warm-starting each
/// level from the previous solution. `init` seeds the first level only.
pub fn continuation_solve(
    c: &CoefficientSet,
    cfg: &SolverConfig,
    init: Option<Init>,
) -> Result<ContinuationOutcome> {
    if cfg.truncation_ladder.is_empty() {
        return Err(Error::Config(
            "continuation needs a nonempty truncation ladder".into(),
        ));
    }
    cfg.validate()?;
    let mut levels = Vec::new();
    let mut last: Option<SolutionBundle> = None;
    let mut first = init;
    for &n in &cfg.truncation_ladder {
        let cn = truncate(c, n);
        let init = match &last {
            Some(prev) => Some(prev.to_init()),
            None => first.take(),
        };
        match solve(&cn, cfg, init) {
            Ok(bundle) => {
                let (du, df) = match &last {
                    Some(prev) => (
                        Some(weighted_sup_distance(&bundle.field, &prev.field)?),
                        Some(flow_distance(&bundle.flow, &prev.flow)?),
                    ),
                    None => (None, None),
                };
                levels.push(LevelRecord {
                    level: n,
                    converged: bundle.converged,
                    iterations: bundle.iterations,
                    delta_u: du,
                    delta_flow: df,
                });
                last = Some(bundle);
            }
            Err(e) => match last {
                Some(bundle) => {
                    return Ok(ContinuationOutcome {
                        bundle,
                        levels,
                        aborted: Some(format!("level {n}: {e}")),
                    })
                }
                None => return Err(e),
            },
        }
    }
    Ok(ContinuationOutcome {
        bundle: last.expect("ladder is nonempty"),
        levels,
        aborted: None,
    })
}

#[derive(Clone, Debug)]
pub struct MultiStartResult {
    pub bundles: Vec<SolutionBundle>,
    /// Max-over-time W2 between converged flows.
    pub flow_distances: Vec<Vec<f64>>,
    /// Weighted sup distance between fields.
    pub field_distances: Vec<Vec<f64>>,
    /// `10 (tol_u + tol_flow)`.
    pub threshold: f64,
    /// Cluster label of each run; runs share a label when linked by pairs
    /// whose distances both stay below the threshold.
    pub labels: Vec<usize>,
    pub distinct: usize,
}

/// Runs [`solve`] from each initialization (concurrently) and compares
/// the results.
pub fn multi_start(
    c: &CoefficientSet,
    cfg: &SolverConfig,
    inits: Vec<Init>,
) -> Result<MultiStartResult> {
    if inits.len() < 2 {
        return Err(Error::Config(format!(
            "multi-start needs at least 2 inits, got {}",
            inits.len()
        )));
    }
    let bundles = inits
        .into_par_iter()
        .map(|init| solve(c, cfg, Some(init)))
        .collect::<Result<Vec<_>>>()?;
    let n = bundles.len();
    let mut flow_d = vec![vec![0.0; n]; n];
    let mut field_d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let f = flow_distance(&bundles[i].flow, &bundles[j].flow)?;
            let u = weighted_sup_distance(&bundles[i].field, &bundles[j].field)?;
            flow_d[i][j] = f;
            flow_d[j][i] = f;
            field_d[i][j] = u;
            field_d[j][i] = u;
        }
    }
    let threshold = 10.0 * (cfg.tol_u + cfg.tol_flow);
    let labels = cluster(&flow_d, &field_d, threshold);
    let distinct = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(MultiStartResult {
        bundles,
        flow_distances: flow_d,
        field_distances: field_d,
        threshold,
        labels,
        distinct,
    })
}

/// Connected components of the "closer than threshold" graph, labelled in
/// order of first appearance.
fn cluster(flow_d: &[Vec<f64>], field_d: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = flow_d.len();
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if labels[j] == usize::MAX
                    && flow_d[i][j] <= threshold
                    && field_d[i][j] <= threshold
                {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Dims;
    use crate::inner_solver::{DecouplingField, GridSpec};
    use crate::measure::{EmpiricalMeasure, MeasureFlow};

    #[test]
    fn clustering() {
        let d = vec![
            vec![0.0, 0.01, 5.0],
            vec![0.01, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
        ];
        assert_eq!(cluster(&d, &d, 0.1), vec![0, 0, 1]);
        assert_eq!(cluster(&d, &d, 10.0), vec![0, 0, 0]);
    }

    fn setup() -> (CoefficientSet, SolverConfig) {
        let c = CoefficientSet::zero(Dims::scalar(), 1.0).with_terminal(|_, _| vec![0.5]);
        let mut cfg = SolverConfig::new(
            vec![0.0],
            GridSpec::uniform(1.0, 10, 1, 6.0, 31).unwrap(),
            64,
        );
        cfg.seed = 8;
        (c, cfg)
    }

    #[test]
    fn decoupled_multistart_is_unique() {
        let (c, cfg) = setup();
        let grid = cfg.resolved_grid(&c).unwrap();
        let inits = [0.0, 2.0, -1.0]
            .iter()
            .map(|&v| Init {
                phi: DecouplingField::constant(grid.clone(), &[v]).unwrap(),
                mu: MeasureFlow::constant(
                    grid.times(),
                    EmpiricalMeasure::from_scalars(&[v; 64]).unwrap(),
                )
                .unwrap(),
            })
            .collect();
        let r = multi_start(&c, &cfg, inits).unwrap();
        assert_eq!(r.distinct, 1);
        assert!(r.flow_distances.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn single_init_is_rejected() {
        let (c, cfg) = setup();
        assert!(multi_start(&c, &cfg, Vec::new()).is_err());
    }

    #[test]
    fn loose_ladder_matches_direct_solve() {
        let (c, mut cfg) = setup();
        let direct = solve(&c, &cfg, None).unwrap();
        cfg.truncation_ladder = vec![3.0];
        let out = continuation_solve(&c, &cfg, None).unwrap();
        assert_eq!(out.levels.len(), 1);
        assert_eq!(out.bundle.field, direct.field);
        assert_eq!(out.bundle.paths, direct.paths);
    }
}
