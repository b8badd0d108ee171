//! Two-level dynamics: exact coefficient equations, rotating-wave solutions,
//! pulse areas and the first-order optimal field.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::field::ControlField;
use crate::propagator::TimeGrid;
use crate::qsystem::NLevelSystem;

/// Levels `ω_a`, `ω_b` coupled by a real transition dipole `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelSystem {
    pub omega_a: f64,
    pub omega_b: f64,
    pub mu: f64,
}

impl TwoLevelSystem {
    pub fn new(omega_a: f64, omega_b: f64, mu: f64) -> Self {
        Self { omega_a, omega_b, mu }
    }

    pub fn omega_ba(&self) -> f64 {
        self.omega_b - self.omega_a
    }

    pub fn as_nlevel(&self) -> NLevelSystem {
        NLevelSystem::two_level(self.omega_a, self.omega_b, self.mu)
    }
}

/// Integrates `ċ_a = −iω_a c_a + iεμ c_b`, `ċ_b = −iω_b c_b + iεμ c_a` from `c_a(0) = 1`.
pub fn integrate_exact(sys: &TwoLevelSystem, field: &ControlField, tg: &TimeGrid) -> Result<(C64, C64)> {
    integrate_exact_from(sys, field, tg, (C64::new(1.0, 0.0), C64::new(0.0, 0.0)))
}

/// Classical fourth-order Runge–Kutta with the field held constant over each step.
pub fn integrate_exact_from(sys: &TwoLevelSystem, field: &ControlField, tg: &TimeGrid, c0: (C64, C64)) -> Result<(C64, C64)> {
    field.check(tg, 1)?;
    let dt = tg.dt();
    let i = C64::i();
    let (wa, wb, mu) = (sys.omega_a, sys.omega_b, sys.mu);
    let rhs = |e: f64, a: C64, b: C64| (-i * wa * a + i * e * mu * b, -i * wb * b + i * e * mu * a);
    let (mut a, mut b) = c0;
    for &e in field.component(0) {
        let (k1a, k1b) = rhs(e, a, b);
        let (k2a, k2b) = rhs(e, a + k1a * (0.5 * dt), b + k1b * (0.5 * dt));
        let (k3a, k3b) = rhs(e, a + k2a * (0.5 * dt), b + k2b * (0.5 * dt));
        let (k4a, k4b) = rhs(e, a + k3a * dt, b + k3b * dt);
        a += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
        b += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (dt / 6.0);
    }
    Ok((a, b))
}

/// Rotating-wave solution for constant amplitude `A` at carrier `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwaSolution {
    /// `Ω_R = A μ`.
    pub rabi: f64,
    /// `Δ = ω_ba − ν`.
    pub detuning: f64,
}

impl RwaSolution {
    pub fn new(sys: &TwoLevelSystem, amplitude: f64, carrier: f64) -> Self {
        Self { rabi: amplitude * sys.mu, detuning: sys.omega_ba() - carrier }
    }

    /// `Ω = sqrt(Ω_R² + Δ²)`.
    pub fn generalized_rabi(&self) -> f64 {
        self.rabi.hypot(self.detuning)
    }

    /// Rotating-frame amplitudes `(g_a, g_b)` with `g_a(0) = 1`.
    pub fn amplitudes(&self, t: f64) -> (C64, C64) {
        let om = self.generalized_rabi();
        if om == 0.0 {
            return (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        }
        let (s, c) = (0.5 * om * t).sin_cos();
        let rot = C64::cis(0.5 * self.detuning * t);
        let ga = rot * C64::new(c, -self.detuning / om * s);
        let gb = rot.conj() * C64::new(0.0, self.rabi / om * s);
        (ga, gb)
    }

    pub fn populations(&self, t: f64) -> (f64, f64) {
        rwa_populations(self.rabi, self.detuning, t)
    }
}

/// `(|g_a|², |g_b|²)` with `|g_b|² = (Ω_R²/Ω²) sin²(Ω t / 2)`.
pub fn rwa_populations(rabi: f64, detuning: f64, t: f64) -> (f64, f64) {
    let om2 = rabi * rabi + detuning * detuning;
    if om2 == 0.0 {
        return (1.0, 0.0);
    }
    let pb = rabi * rabi / om2 * (0.5 * om2.sqrt() * t).sin().powi(2);
    (1.0 - pb, pb)
}

/// Resonant π-pulse amplitude `π/(μT)`.
pub fn pulse_area_amplitude(mu: f64, t_final: f64) -> Result<f64> {
    if mu == 0.0 || !mu.is_finite() {
        return Err(Error::InvalidParameter("transition dipole must be nonzero".into()));
    }
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter(format!("pulse duration must be positive, got {t_final}")));
    }
    Ok(PI / (mu * t_final))
}

/// `A sin(ω_ba t)` with the π-pulse amplitude for the duration of `tg`.
pub fn resonant_pi_pulse(sys: &TwoLevelSystem, tg: &TimeGrid) -> Result<ControlField> {
    let a = pulse_area_amplitude(sys.mu, tg.t_final())?;
    let w = sys.omega_ba();
    Ok(ControlField::from_fn(tg, |t| a * (w * t).sin()))
}

/// Exact excited-state yield of the resonant π-pulse and its estimate `A²T/2` of the fluence.
pub fn pi_pulse_yield(sys: &TwoLevelSystem, tg: &TimeGrid) -> Result<(f64, f64)> {
    let field = resonant_pi_pulse(sys, tg)?;
    let (_, b) = integrate_exact(sys, &field, tg)?;
    let a = pulse_area_amplitude(sys.mu, tg.t_final())?;
    Ok((b.norm_sqr(), 0.5 * a * a * tg.t_final()))
}

/// Off-resonant optimal amplitude and the associated maximal yield.
pub fn optimal_amplitude_offresonant(mu: f64, t_final: f64, detuning: f64, k: u32) -> Result<(f64, f64)> {
    pulse_area_amplitude(mu, t_final)?;
    let area = ((2 * k + 1) as f64) * PI / t_final;
    let rad = area * area - detuning * detuning;
    if rad < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "detuning {detuning} exceeds (2k+1)π/T for k = {k}; choose a larger k"
        )));
    }
    let amp = rad.sqrt() / mu;
    let max_yield = 1.0 - (detuning * t_final).powi(2) / (((2 * k + 1) as f64) * PI).powi(2);
    Ok((amp, max_yield))
}

/// Optimal first-order field from the kernel `μ² cos(ω_ba (t − t′))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSolution {
    /// Leading eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors of the two leading eigenvalues at `t_0..t_n`.
    pub eigenfields: Vec<Vec<f64>>,
    /// Leading eigenfield rescaled to `∫ε² dt = 1/λ₁`.
    pub optimal: Vec<f64>,
    pub times: Vec<f64>,
    /// Set when `λ₁` and `λ₂` agree within `1e−12` relative.
    pub ambiguous: bool,
    mu: f64,
    omega: f64,
    dt: f64,
}

impl PerturbationSolution {
    pub fn amplitude(&self) -> f64 {
        self.optimal.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nyström extension `ε(t) = (1/λ₁) Σ_j K(t, t_j) ε_j dt`.
    pub fn optimal_at(&self, t: f64) -> f64 {
        let (mut c, mut s) = (0.0, 0.0);
        for (tj, e) in self.times.iter().zip(&self.optimal) {
            let (sj, cj) = (self.omega * tj).sin_cos();
            c += cj * e;
            s += sj * e;
        }
        let (st, ct) = (self.omega * t).sin_cos();
        self.mu * self.mu * self.dt * (ct * c + st * s) / self.eigenvalues[0]
    }

    /// The optimal field resampled on `tg` for propagation.
    pub fn optimal_field(&self, tg: &TimeGrid) -> ControlField {
        let (mut c, mut s) = (0.0, 0.0);
        for (tj, e) in self.times.iter().zip(&self.optimal) {
            let (sj, cj) = (self.omega * tj).sin_cos();
            c += cj * e;
            s += sj * e;
        }
        let k = self.mu * self.mu * self.dt / self.eigenvalues[0];
        ControlField::from_fn(tg, |t| {
            let (st, ct) = (self.omega * t).sin_cos();
            k * (ct * c + st * s)
        })
    }
}

/// Largest order for which the dense symmetric solver is used.
pub const DENSE_LIMIT: usize = 2048;

/// Solves the discretized kernel eigenproblem on `t_i = i dt`, `i = 0..=n_steps`.
pub fn perturbation_eigenfield(sys: &TwoLevelSystem, tg: &TimeGrid) -> Result<PerturbationSolution> {
    if tg.n_steps() > 10_000 {
        return Err(Error::InvalidParameter(format!("at most 10^4 steps supported, got {}", tg.n_steps())));
    }
    let n = tg.n_steps() + 1;
    let dt = tg.dt();
    let omega = sys.omega_ba();
    let mu2 = sys.mu * sys.mu;
    let row: Vec<f64> = (0..n).map(|k| mu2 * (omega * k as f64 * dt).cos() * dt).collect();
    let (vals, vecs) = if n <= DENSE_LIMIT {
        let k = DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]);
        let eig = nalgebra::SymmetricEigen::new(k);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let take = idx.len().min(4);
        (
            idx[..take].iter().map(|&i| eig.eigenvalues[i]).collect::<Vec<_>>(),
            idx[..2.min(take)].iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect::<Vec<Vec<f64>>>(),
        )
    } else {
        subspace_iteration(&row, 4, 200, 1e-14)
    };
    let lam1 = vals[0];
    if !(lam1 > 0.0) {
        return Err(Error::DegenerateField("kernel has no positive eigenvalue".into()));
    }
    let ambiguous = vals.len() > 1 && (vals[0] - vals[1]).abs() <= 1e-12 * vals[0].abs();
    if ambiguous {
        log::warn!("leading kernel eigenvalues are degenerate; returning both eigenfields");
    }
    let lead = &vecs[0];
    let norm: f64 = lead.iter().map(|v| v * v).sum::<f64>() * dt;
    let scale = ((1.0 / lam1) / norm).sqrt();
    let optimal = lead.iter().map(|v| v * scale).collect();
    Ok(PerturbationSolution {
        eigenvalues: vals,
        eigenfields: vecs,
        optimal,
        times: (0..n).map(|i| i as f64 * dt).collect(),
        ambiguous,
        mu: sys.mu,
        omega,
        dt,
    })
}

/// `y = K x` for the symmetric Toeplitz matrix with first row `row`.
fn toeplitz_apply(row: &[f64], x: &[f64], y: &mut [f64]) {
    crate::par::for_each_chunk(y, 256, |c, chunk| {
        let base = c * 256;
        for (k, yi) in chunk.iter_mut().enumerate() {
            let i = base + k;
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate() {
                s += row[i.abs_diff(j)] * xj;
            }
            *yi = s;
        }
    });
}

/// Block subspace iteration with Rayleigh–Ritz for the leading `p` eigenpairs.
fn subspace_iteration(row: &[f64], p: usize, max_iter: usize, tol: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = row.len();
    let mut x = DMatrix::from_fn(n, p, |i, j| {
        let t = (i + 1) as f64 / n as f64;
        ((j + 1) as f64 * 7.3 * t + 0.37 * j as f64).sin() + 0.1 * t.powi(j as i32)
    });
    let mut prev = vec![f64::INFINITY; p];
    let mut ritz = vec![0.0; p];
    let mut y = DMatrix::zeros(n, p);
    for _ in 0..max_iter {
        let q = x.clone().qr().q();
        for j in 0..p {
            let col: Vec<f64> = q.column(j).iter().copied().collect();
            let mut out = vec![0.0; n];
            toeplitz_apply(row, &col, &mut out);
            y.set_column(j, &DVector::from_vec(out));
        }
        let h = q.transpose() * &y;
        let h = (&h + h.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(h);
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let v = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, idx[j])]);
        ritz = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        x = &y * &v;
        let scale = ritz[0].abs().max(1e-300);
        let done = ritz.iter().zip(&prev).take(2).all(|(a, b)| (a - b).abs() <= tol * scale);
        prev.clone_from(&ritz);
        if done {
            let basis = q * v;
            let vecs = (0..2).map(|j| basis.column(j).iter().copied().collect()).collect();
            return (ritz, vecs);
        }
    }
    let q = x.qr().q();
    (ritz, (0..2).map(|j| q.column(j).iter().copied().collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rwa_limits() {
        assert_eq!(rwa_populations(0.3, 0.0, 0.0), (1.0, 0.0));
        let (a, b) = rwa_populations(0.3, 0.0, PI / 0.3);
        assert!(a.abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let peak = (0..2000).map(|k| rwa_populations(0.2, 0.2, k as f64 * 0.05).1).fold(0.0, f64::max);
        assert!((peak - 0.5).abs() < 1e-6);
    }

    #[test]
    fn amplitude_formulas() {
        assert!((pulse_area_amplitude(PI, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(pulse_area_amplitude(0.0, 1.0).is_err());
        let t = 50.0;
        let (a, y) = optimal_amplitude_offresonant(1.0, t, 0.0, 0).unwrap();
        assert!((a - PI / t).abs() < 1e-15 && (y - 1.0).abs() < 1e-15);
        let (a, y) = optimal_amplitude_offresonant(1.0, t, PI / t, 0).unwrap();
        assert!(a.abs() < 1e-15 && y.abs() < 1e-15);
        let (a, y) = optimal_amplitude_offresonant(1.0, t, PI / t, 1).unwrap();
        assert!((a - PI / t * 8f64.sqrt()).abs() < 1e-14);
        assert!((y - 8.0 / 9.0).abs() < 1e-14);
        assert!(optimal_amplitude_offresonant(1.0, t, 1.1 * PI / t, 0).is_err());
    }

    #[test]
    fn rwa_amplitudes_match_populations() {
        let r = RwaSolution { rabi: 0.05, detuning: 0.02 };
        for t in [0.0, 3.0, 17.5, 80.0] {
            let (ga, gb) = r.amplitudes(t);
            let (pa, pb) = r.populations(t);
            assert!((ga.norm_sqr() - pa).abs() < 1e-14 && (gb.norm_sqr() - pb).abs() < 1e-14);
        }
    }

    #[test]
    fn subspace_matches_dense() {
        let sys = TwoLevelSystem::new(0.0, 0.1568, 0.3921);
        let n = 300;
        let row: Vec<f64> = (0..n).map(|k| 0.3921f64.powi(2) * (0.1568 * k as f64).cos()).collect();
        let (vals, _) = subspace_iteration(&row, 4, 200, 1e-14);
        let tg = TimeGrid::with_steps((n - 1) as f64, n - 1).unwrap();
        let dense = perturbation_eigenfield(&sys, &tg).unwrap();
        assert!((vals[0] - dense.eigenvalues[0]).abs() < 1e-10 * vals[0]);
        assert!((vals[1] - dense.eigenvalues[1]).abs() < 1e-10 * vals[0]);
    }
}
