use mkv_fbsde::applications::{
    argmin_hamiltonian, assemble_mfg, assemble_mkv_control, hamiltonian, lions_term,
    ControlProblem, LionsPart,
};
use mkv_fbsde::EmpiricalMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `b = a`, `f = a^2 / 2 + x a`: `H = a (y + x) + a^2 / 2`, minimized at
/// `a = -(x + y)`.
fn searched() -> ControlProblem {
    ControlProblem::new(1, 1, 1)
        .with_drift(|_, _, _, a| vec![a[0]], |_, _, _, _| vec![0.0])
        .with_running_cost(
            |_, x, _, a| 0.5 * a[0] * a[0] + x[0] * a[0],
            |_, _, _, a| vec![a[0]],
        )
        .with_terminal_cost(|x, _| 0.5 * x[0] * x[0], |x, _| vec![x[0]])
        .with_sigma(vec![1.0])
        .with_alpha_bounds(vec![(-5.0, 5.0)])
}

#[test]
fn hamiltonian_is_drift_against_adjoint_plus_cost() {
    let p = searched();
    let mu = EmpiricalMeasure::dirac(&[0.0]);
    let h = hamiltonian(&p, 0.2, &[0.7], &[-1.3], &mu, &[0.4]).unwrap();
    assert!((h.value - (0.4 * -1.3 + 0.5 * 0.16 + 0.7 * 0.4)).abs() < 1e-15);
}

#[test]
fn searched_minimizer_beats_random_controls() {
    let p = searched();
    let mu = EmpiricalMeasure::dirac(&[0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let x = [rng.random_range(-2.0..2.0)];
        let y = [rng.random_range(-2.0..2.0)];
        let a = argmin_hamiltonian(&p, 0.0, &x, &y, &mu).unwrap();
        assert!((a[0] + x[0] + y[0]).abs() < 1e-6, "{a:?} {x:?} {y:?}");
        let best = hamiltonian(&p, 0.0, &x, &y, &mu, &a).unwrap().value;
        for _ in 0..100 {
            let other = [rng.random_range(-5.0..5.0)];
            assert!(best <= hamiltonian(&p, 0.0, &x, &y, &mu, &other).unwrap().value + 1e-12);
        }
    }
}

fn cloud(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let ys = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (xs, ys)
}

fn joint(xs: &[f64], ys: &[f64]) -> EmpiricalMeasure {
    let rows: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| vec![*x, *y]).collect();
    EmpiricalMeasure::from_rows(&rows).unwrap()
}

fn central_difference(f: impl Fn(&[f64]) -> f64, xs: &[f64], i: usize) -> f64 {
    let h = 1e-5;
    let (mut up, mut down) = (xs.to_vec(), xs.to_vec());
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// For J(x_1..x_N) = (1/N) sum_j h(x_j, mu_N), N dJ/dx_i is the x-derivative of
// h at x_i plus the tilde-expectation of the Lions derivative evaluated at x_i.

#[test]
fn cost_lions_term_matches_particle_finite_differences() {
    // f = sin(x) E[X^2] / 2, so d_mu f(v) = sin(x) v.
    let p = ControlProblem::new(1, 1, 1)
        .with_running_cost(
            |_, x, mu, _| 0.5 * x[0].sin() * mu.second_moment()[0],
            |_, x, mu, _| vec![0.5 * x[0].cos() * mu.second_moment()[0]],
        )
        .with_lions_cost(|_, x, _, _, v| vec![x[0].sin() * v[0]])
        .with_alpha_hat(|_, _, _, _| vec![0.0]);
    let (xs, ys) = cloud(9, 1);
    let nu = joint(&xs, &ys);
    let j = |x: &[f64]| {
        let m2 = mean(&x.iter().map(|v| v * v).collect::<Vec<_>>());
        mean(&x.iter().map(|v| 0.5 * v.sin() * m2).collect::<Vec<_>>())
    };
    let m2 = mean(&xs.iter().map(|v| v * v).collect::<Vec<_>>());
    for i in [0, 4, 8] {
        let fd = xs.len() as f64 * central_difference(j, &xs, i) - 0.5 * xs[i].cos() * m2;
        let term = lions_term(&p, LionsPart::Cost, 0.0, &nu, &[xs[i]], None).unwrap();
        assert!((term[0] - fd).abs() < 1e-7, "{} {fd}", term[0]);
    }
}

#[test]
fn drift_lions_term_matches_particle_finite_differences() {
    // b = x E[X]^2, so d_mu b(v) = 2 x E[X]; contracted with each atom's y.
    let p = ControlProblem::new(1, 1, 1)
        .with_drift(
            |_, x, mu, _| vec![x[0] * mu.mean()[0].powi(2)],
            |_, _, mu, _| vec![mu.mean()[0].powi(2)],
        )
        .with_lions_drift(|_, x, mu, _, _| vec![2.0 * x[0] * mu.mean()[0]])
        .with_alpha_hat(|_, _, _, _| vec![0.0]);
    let (xs, ys) = cloud(7, 2);
    let nu = joint(&xs, &ys);
    let j = |x: &[f64]| {
        let m = mean(x);
        mean(
            &x.iter()
                .zip(&ys)
                .map(|(v, y)| v * m * m * y)
                .collect::<Vec<_>>(),
        )
    };
    let m = mean(&xs);
    for i in [0, 3, 6] {
        let fd = xs.len() as f64 * central_difference(j, &xs, i) - m * m * ys[i];
        let term = lions_term(&p, LionsPart::Drift, 0.0, &nu, &[xs[i]], None).unwrap();
        assert!((term[0] - fd).abs() < 1e-7, "{} {fd}", term[0]);
        let fixed = lions_term(&p, LionsPart::Drift, 0.0, &nu, &[xs[i]], Some(&[1.0])).unwrap();
        assert!((fixed[0] - 2.0 * m * m).abs() < 1e-12);
    }
}

#[test]
fn control_bundle_reduces_to_game_without_measure_dependence() {
    let p = searched()
        .with_lions_drift(|_, _, _, _, _| vec![0.0])
        .with_lions_cost(|_, _, _, _, _| vec![0.0])
        .with_lions_terminal(|_, _, _| vec![0.0]);
    let game = assemble_mfg(&p).unwrap();
    let control = assemble_mkv_control(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (xs, ys) = cloud(5, rng.random());
        let nu = joint(&xs, &ys);
        let mu = EmpiricalMeasure::from_scalars(&xs).unwrap();
        let (t, x, y) = (
            rng.random_range(0.0..1.0),
            [rng.random_range(-2.0..2.0)],
            [rng.random_range(-2.0..2.0)],
        );
        assert_eq!(
            (game.drift)(t, &x, &y, &[0.0], &nu),
            (control.drift)(t, &x, &y, &[0.0], &nu)
        );
        let (a, b) = (
            (game.driver)(t, &x, &y, &[0.0], &nu),
            (control.driver)(t, &x, &y, &[0.0], &nu),
        );
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert_eq!((game.terminal)(&x, &mu), (control.terminal)(&x, &mu));
    }
}

#[test]
fn control_bundle_requires_lions_derivatives() {
    assert!(assemble_mkv_control(&searched()).is_err());
    assert!(assemble_mfg(&searched()).is_ok());
}
