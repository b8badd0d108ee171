use proptest::prelude::*;
use qoct::propagator::{propagate, Direction, TimeGrid};
use qoct::qsystem::Wavefunction;
use qoct::twolevel::{
    integrate_exact, perturbation_eigenfield, pi_pulse_yield, pulse_area_amplitude, resonant_pi_pulse, rwa_populations,
    RwaSolution, TwoLevelSystem,
};
use qoct::ControlField;

const MU: f64 = 0.3921;
const W: f64 = 0.1568;

/// Leading eigenvalues of the rank-two kernel on `t_k = k dt`, `k = 0..=n`.
fn kernel_oracle(mu: f64, omega: f64, n: usize, dt: f64) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for k in 0..=n {
        let a = 2.0 * omega * k as f64 * dt;
        re += a.cos();
        im += a.sin();
    }
    let half = 0.5 * (n + 1) as f64;
    let r = 0.5 * re.hypot(im);
    (mu * mu * dt * (half + r), mu * mu * dt * (half - r))
}

#[test]
fn kernel_eigenvalues_match_closed_form() {
    let sys = TwoLevelSystem::new(0.0, W, MU);
    for (t, dt) in [(400.0, 1.0), (400.0, 0.5), (100.0, 0.05)] {
        let tg = TimeGrid::new(t, dt).unwrap();
        let sol = perturbation_eigenfield(&sys, &tg).unwrap();
        let (l1, l2) = kernel_oracle(MU, W, tg.n_steps(), dt);
        assert!((sol.eigenvalues[0] - l1).abs() < 1e-9 * l1, "{} vs {l1}", sol.eigenvalues[0]);
        assert!((sol.eigenvalues[1] - l2).abs() < 1e-9 * l1, "{} vs {l2}", sol.eigenvalues[1]);
        assert!(sol.eigenvalues[2].abs() < 1e-10 * l1);
        let fl: f64 = sol.optimal.iter().map(|v| v * v).sum::<f64>() * dt;
        assert!((fl - 1.0 / sol.eigenvalues[0]).abs() < 1e-12);
    }
}

#[test]
fn nystrom_extension_reproduces_nodes() {
    let sys = TwoLevelSystem::new(0.0, W, MU);
    let tg = TimeGrid::new(200.0, 1.0).unwrap();
    let sol = perturbation_eigenfield(&sys, &tg).unwrap();
    for (t, v) in sol.times.iter().zip(&sol.optimal).step_by(17) {
        assert!((sol.optimal_at(*t) - v).abs() < 1e-10);
    }
}

#[test]
fn weak_resonant_pulse_follows_rwa() {
    let sys = TwoLevelSystem::new(0.0, W, MU);
    let tg = TimeGrid::new(800.0, 0.01).unwrap();
    let a = 0.2 * pulse_area_amplitude(MU, 800.0).unwrap();
    let f = ControlField::from_fn(&tg, |t| a * (W * t).cos());
    let (_, cb) = integrate_exact(&sys, &f, &tg).unwrap();
    let (_, pb) = RwaSolution::new(&sys, a, W).populations(800.0);
    assert!((cb.norm_sqr() - pb).abs() < 2e-3, "exact {} vs RWA {pb}", cb.norm_sqr());
}

#[test]
fn pi_pulse_inverts_slow_pulses() {
    let sys = TwoLevelSystem::new(0.0, W, MU);
    let tg = TimeGrid::new(800.0, 0.01).unwrap();
    let (p, e0) = pi_pulse_yield(&sys, &tg).unwrap();
    assert!(p > 0.999, "yield {p}");
    let a = pulse_area_amplitude(MU, 800.0).unwrap();
    assert!((MU * a * 800.0 - std::f64::consts::PI).abs() < 1e-12);
    assert!((e0 - 0.5 * a * a * 800.0).abs() < 1e-15);
    let field = resonant_pi_pulse(&sys, &tg).unwrap();
    let exact = a * a * (400.0 - (2.0 * W * 800.0).sin() / (4.0 * W));
    assert!((field.fluence()[0] - exact).abs() / exact < 1e-4);
}

#[test]
fn exact_integrator_agrees_with_split_propagator() {
    let sys = TwoLevelSystem::new(0.0, W, MU);
    let tg = TimeGrid::new(100.0, 0.005).unwrap();
    let f = ControlField::from_fn(&tg, |t| 0.05 * (W * t).cos() + 0.02 * (0.3 * t).sin());
    let (ca, cb) = integrate_exact(&sys, &f, &tg).unwrap();
    let psi = propagate(&sys.as_nlevel(), &Wavefunction::level(2, 0).unwrap(), &f, &tg, Direction::Forward, None).unwrap();
    assert!((psi.amplitudes()[0].norm_sqr() - ca.norm_sqr()).abs() < 1e-6);
    assert!((psi.amplitudes()[1].norm_sqr() - cb.norm_sqr()).abs() < 1e-6);
}

proptest! {
    #[test]
    fn rwa_populations_are_complementary(rabi in 0.0f64..1.0, det in -1.0f64..1.0, t in 0.0f64..500.0) {
        let (pa, pb) = rwa_populations(rabi, det, t);
        prop_assert!((pa + pb - 1.0).abs() < 1e-12);
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&pb));
        let bound = if rabi == 0.0 { 0.0 } else { rabi * rabi / (rabi * rabi + det * det) };
        prop_assert!(pb <= bound + 1e-12);
    }

    #[test]
    fn exact_norm_is_conserved(a in 0.0f64..0.5, nu in 0.01f64..1.0) {
        let sys = TwoLevelSystem::new(0.0, W, MU);
        let tg = TimeGrid::new(50.0, 0.01).unwrap();
        let f = ControlField::from_fn(&tg, |t| a * (nu * t).cos());
        let (ca, cb) = integrate_exact(&sys, &f, &tg).unwrap();
        prop_assert!((ca.norm_sqr() + cb.norm_sqr() - 1.0).abs() < 1e-8);
    }
}
