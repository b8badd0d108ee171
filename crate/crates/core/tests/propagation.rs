use nalgebra::DMatrix;
use proptest::prelude::*;
use qoct::propagator::{propagate, Direction, TimeGrid};
use qoct::qsystem::{expectation, DipoleOperator, GridSystem, NLevelSystem, Observable, Potential, SpatialGrid, Wavefunction};
use qoct::{ControlField, C64};

fn position_moments(psi: &Wavefunction) -> (f64, f64) {
    let g = psi.grid().unwrap();
    let rho = psi.density();
    let m1: f64 = rho.iter().enumerate().map(|(i, r)| g.x(i) * r).sum::<f64>() * g.dx();
    let m2: f64 = rho.iter().enumerate().map(|(i, r)| g.x(i).powi(2) * r).sum::<f64>() * g.dx();
    (m1, m2 - m1 * m1)
}

#[test]
fn free_gaussian_spreads_analytically() {
    let g = SpatialGrid::new(60.0, 2048).unwrap();
    let sys = GridSystem::from_samples(g, vec![0.0; 2048], vec![g.positions()]).unwrap();
    let (s0, k0, t) = (1.0, 0.8, 6.0);
    let psi0 = Wavefunction::gaussian(g, -3.0, s0, k0).unwrap();
    let tg = TimeGrid::new(t, 0.01).unwrap();
    let psi = propagate(&sys, &psi0, &ControlField::zeros(&tg, 1), &tg, Direction::Forward, None).unwrap();
    let (mean, var) = position_moments(&psi);
    let expected_var = s0 * s0 * (1.0 + (t / (2.0 * s0 * s0)).powi(2));
    assert!((mean - (-3.0 + k0 * t)).abs() < 1e-9, "mean {mean}");
    assert!((var - expected_var).abs() < 1e-9, "variance {var} vs {expected_var}");
}

#[test]
fn harmonic_ehrenfest_with_static_field() {
    let g = SpatialGrid::new(20.0, 512).unwrap();
    let sys = GridSystem::new(g, &Potential::Harmonic { omega: 1.0 });
    let (x0, eps) = (2.0, 0.3);
    let psi0 = Wavefunction::gaussian(g, x0, std::f64::consts::FRAC_1_SQRT_2, 0.0).unwrap();
    let tg = TimeGrid::new(7.0, 0.002).unwrap();
    let field = ControlField::constant(&tg, 1, eps);
    let mut worst: f64 = 0.0;
    let mut tap = |_: usize, t: f64, amps: &[C64]| {
        let w = Wavefunction::new(psi0.space(), amps.to_vec()).unwrap();
        let x = expectation(&Observable::Dipole(&DipoleOperator::Position), &w).unwrap();
        worst = worst.max((x - (eps + (x0 - eps) * t.cos())).abs());
    };
    propagate(&sys, &psi0, &field, &tg, Direction::Forward, Some(&mut tap)).unwrap();
    assert!(worst < 1e-5, "Ehrenfest deviation {worst}");
}

#[test]
fn split_operator_is_second_order() {
    let g = SpatialGrid::new(30.0, 512).unwrap();
    let sys = GridSystem::new(g, &Potential::double_well());
    let psi0 = Wavefunction::gaussian(g, -4.0, 0.7, 0.0).unwrap();
    let run = |dt: f64| {
        let tg = TimeGrid::new(20.0, dt).unwrap();
        let f = ControlField::from_fn(&tg, |t| 0.05 * (0.3 * t).sin());
        propagate(&sys, &psi0, &f, &tg, Direction::Forward, None).unwrap()
    };
    let diff = |a: &Wavefunction, b: &Wavefunction| {
        let d: f64 = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm_sqr()).sum();
        (d * g.dx()).sqrt()
    };
    let (a, b, c) = (run(0.04), run(0.02), run(0.01));
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((3.5..4.5).contains(&ratio), "convergence ratio {ratio}");
}

fn rk4_levels(h0: &DMatrix<f64>, mu: &DMatrix<f64>, field: impl Fn(f64) -> f64, c0: &[C64], t: f64, n: usize) -> Vec<C64> {
    let dt = t / n as f64;
    let rhs = |tt: f64, c: &[C64]| -> Vec<C64> {
        let e = field(tt);
        let dim = c.len();
        (0..dim)
            .map(|r| {
                let mut s = C64::new(0.0, 0.0);
                for k in 0..dim {
                    s += (h0[(r, k)] - mu[(r, k)] * e) * c[k];
                }
                -C64::i() * s
            })
            .collect()
    };
    let mut c = c0.to_vec();
    for i in 0..n {
        let tt = i as f64 * dt;
        let k1 = rhs(tt, &c);
        let y: Vec<C64> = c.iter().zip(&k1).map(|(a, k)| a + k * (0.5 * dt)).collect();
        let k2 = rhs(tt + 0.5 * dt, &y);
        let y: Vec<C64> = c.iter().zip(&k2).map(|(a, k)| a + k * (0.5 * dt)).collect();
        let k3 = rhs(tt + 0.5 * dt, &y);
        let y: Vec<C64> = c.iter().zip(&k3).map(|(a, k)| a + k * dt).collect();
        let k4 = rhs(tt + dt, &y);
        for (j, a) in c.iter_mut().enumerate() {
            *a += (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (dt / 6.0);
        }
    }
    c
}

#[test]
fn three_level_matches_runge_kutta() {
    let h0 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 1.1]);
    let mu = DMatrix::from_row_slice(3, 3, &[0.1, 0.8, 0.2, 0.8, -0.3, 0.6, 0.2, 0.6, 0.0]);
    let sys = NLevelSystem::new(h0.clone(), vec![mu.clone()]).unwrap();
    let f = |t: f64| 0.2 * (0.4 * t).cos();
    let tg = TimeGrid::new(30.0, 0.001).unwrap();
    let field = ControlField::from_fn(&tg, f);
    let psi = propagate(&sys, &Wavefunction::level(3, 0).unwrap(), &field, &tg, Direction::Forward, None).unwrap();
    let reference = rk4_levels(&h0, &mu, f, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)], 30.0, 60_000);
    let err: f64 = psi.amplitudes().iter().zip(&reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-6, "max amplitude error {err}");
}

#[test]
fn two_polarizations_propagate_unitarily() {
    let h0 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.9]);
    let mx = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let my = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let sys = NLevelSystem::new(h0, vec![mx, my]).unwrap();
    let tg = TimeGrid::new(50.0, 0.01).unwrap();
    let n = tg.n_steps();
    let field = ControlField::new(
        tg.dt(),
        vec![(0..n).map(|i| 0.1 * (0.5 * i as f64 * 0.01).cos()).collect(), (0..n).map(|i| 0.07 * (0.9 * i as f64 * 0.01).sin()).collect()],
    )
    .unwrap();
    let psi0 = Wavefunction::level(3, 0).unwrap();
    let psi = propagate(&sys, &psi0, &field, &tg, Direction::Forward, None).unwrap();
    assert!((psi.norm_sqr() - 1.0).abs() < 1e-10, "norm drift {}", psi.norm_sqr() - 1.0);
    let back = propagate(&sys, &psi, &field, &tg, Direction::Backward, None).unwrap();
    let err: f64 = back.amplitudes().iter().zip(psi0.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-10, "round trip error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn grid_round_trip_is_exact(amp in 0.0f64..0.2, freq in 0.05f64..1.5, x0 in -5.0f64..5.0, k0 in -1.0f64..1.0) {
        let g = SpatialGrid::new(30.0, 256).unwrap();
        let sys = GridSystem::new(g, &Potential::double_well());
        let psi0 = Wavefunction::gaussian(g, x0, 0.8, k0).unwrap();
        let tg = TimeGrid::new(10.0, 0.01).unwrap();
        let f = ControlField::from_fn(&tg, |t| amp * (freq * t).cos());
        let psi = propagate(&sys, &psi0, &f, &tg, Direction::Forward, None).unwrap();
        prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);
        let back = propagate(&sys, &psi, &f, &tg, Direction::Backward, None).unwrap();
        let err = back.amplitudes().iter().zip(psi0.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "reversibility error {}", err);
    }

    #[test]
    fn level_norm_is_conserved(e in proptest::collection::vec(-1.0f64..1.0, 200), w in 0.1f64..3.0) {
        let sys = NLevelSystem::two_level(0.0, w, 0.7);
        let field = ControlField::new(0.05, vec![e]).unwrap();
        let tg = TimeGrid::with_steps(10.0, 200).unwrap();
        let psi = propagate(&sys, &Wavefunction::level(2, 0).unwrap(), &field, &tg, Direction::Forward, None).unwrap();
        prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
    }
}
