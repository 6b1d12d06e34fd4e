use mkv_fbsde::coefficients::{probe_assumptions, ProbeOptions};
use mkv_fbsde::fixed_point::solve;
use mkv_fbsde::inner_solver::{simulate_forward, ForwardConfig};
use mkv_fbsde::problems::{
    counterexample, lq_mfg, mean_reversion_reference, problem_from_spec, COUNTEREXAMPLE_HORIZON,
    PROBLEM_NAMES,
};
use mkv_fbsde::{DecouplingField, EmpiricalMeasure, GridSpec, MeasureFlow};

fn probe(c: &mkv_fbsde::CoefficientSet, horizon: f64) -> mkv_fbsde::coefficients::AssumptionReport {
    let opts = ProbeOptions {
        n_samples: 2_000,
        seed: 3,
        horizon,
        ..ProbeOptions::default()
    };
    probe_assumptions(c, &opts).unwrap()
}

#[test]
fn counterexample_satisfies_its_declared_constants() {
    let p = counterexample(1.0, 10.0).unwrap();
    let r = probe(&p.coefficients, COUNTEREXAMPLE_HORIZON);
    assert!(
        r.lipschitz_estimates.max() <= 1.0 + 1e-9,
        "{:?}",
        r.lipschitz_estimates
    );
    assert!((r.ellipticity_min - 1.0).abs() < 1e-12);
    assert_eq!(r.growth_violation_count, 0);
    assert!(!r.has_hard_violation());
    assert!(r.warnings().is_empty(), "{:?}", r.warnings());
}

#[test]
fn mean_reversion_is_lipschitz() {
    let p = mean_reversion_reference(1.0).unwrap();
    let r = probe(&p.coefficients, 1.0);
    assert!(
        r.lipschitz_estimates.max() <= 2.0,
        "{:?}",
        r.lipschitz_estimates
    );
    assert!(!r.has_hard_violation());
}

#[test]
fn mean_reversion_forward_is_an_ou_process() {
    // The drift reads E[X] from the frozen joint law; feeding it a point mass
    // at x0 gives an OU process around x0 whatever the field.
    let x0 = 1.0;
    let p = mean_reversion_reference(x0).unwrap();
    let grid = GridSpec::uniform(1.0, 100, 1, 7.0, 141).unwrap();
    let field = DecouplingField::from_fn(grid.clone(), 1, |_, x| vec![x[0].tanh()]).unwrap();
    let flow = MeasureFlow::constant(grid.times(), EmpiricalMeasure::dirac(&[x0, 0.0])).unwrap();
    let m = 100_000;
    let paths = simulate_forward(
        &p.coefficients,
        &field,
        &flow,
        &ForwardConfig::new(vec![x0], m, 9),
    )
    .unwrap();
    let reference = p.reference.unwrap();
    for k in [50, 100] {
        let t = grid.times()[k];
        let law = paths.law_x(k);
        let mean = law.mean()[0];
        let var = law.second_moment()[0] - mean * mean;
        let (_, sd) = reference.gaussian_x(t).unwrap();
        assert!((mean - x0).abs() < 1e-2, "t = {t}: {mean}");
        // Euler's variance differs from the exact one by O(dt).
        assert!(
            (var - sd * sd).abs() < 1e-2,
            "t = {t}: {var} vs {}",
            sd * sd
        );
    }
}

#[test]
fn lq_game_matches_its_riccati_solution() {
    let p = lq_mfg(1.0).unwrap();
    let mut cfg = p.config.clone();
    cfg.seed = 6;
    let b = solve(&p.coefficients, &cfg, None).unwrap();
    assert!(b.converged);
    let r = p.reference.unwrap();
    let times = cfg.grid.times();
    for k in [0, 50, 100] {
        let ex = (b.mean_x(k)[0] - r.mean_x(times[k])[0]).abs();
        let ey = (b.mean_y(k)[0] - r.mean_y(times[k])[0]).abs();
        assert!(ex < 5e-2 && ey < 5e-2, "k = {k}: {ex} {ey}");
    }
}

#[test]
fn every_registered_problem_builds_with_defaults() {
    for name in PROBLEM_NAMES {
        let p = problem_from_spec(name).unwrap();
        assert_eq!(p.name, *name);
        p.config.validate().unwrap();
    }
}

#[test]
fn problem_strings_reject_bad_input() {
    assert!(problem_from_spec("counterexample?A=1&R=10").is_ok());
    assert!(problem_from_spec("counterexample?A=9").is_err());
    assert!(problem_from_spec("counterexample?B=1").is_err());
    assert!(problem_from_spec("counterexample?A=x").is_err());
    assert!(problem_from_spec("nope").is_err());
}
