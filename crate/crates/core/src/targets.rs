//! Target operators `Ô(t)` and time weights `w(t)`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::propagator::{trapezoid, TimeGrid, Trajectory};
use crate::qsystem::{braket, check_space, interpolate, SpatialGrid, Space, Wavefunction};

/// Time weight of the yield functional.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFunction {
    /// Only the final state counts.
    FinalTime,
    /// `w ≡ 1`.
    Uniform,
    /// Samples at every time point, normalized so that `(1/T) ∫ w dt = 1`.
    Sampled(Vec<f64>),
}

impl WeightFunction {
    /// Normalizes nonnegative samples `w(t_0..t_n)` with the trapezoid rule.
    pub fn sampled(values: Vec<f64>, tg: &TimeGrid) -> Result<Self> {
        let n = tg.n_steps();
        if values.len() != n + 1 {
            return Err(Error::LengthMismatch { what: "weight samples", expected: n + 1, got: values.len() });
        }
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = (0..=n).map(|i| trapezoid(tg, i) * values[i]).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weight function vanishes".into()));
        }
        Ok(WeightFunction::Sampled(values.into_iter().map(|w| w / total).collect()))
    }

    pub fn is_final_time(&self) -> bool {
        matches!(self, WeightFunction::FinalTime)
    }

    /// Weight samples on `tg`, or `None` for the final-time weight.
    pub fn samples(&self, tg: &TimeGrid) -> Result<Option<Vec<f64>>> {
        match self {
            WeightFunction::FinalTime => Ok(None),
            WeightFunction::Uniform => Ok(Some(vec![1.0; tg.n_steps() + 1])),
            WeightFunction::Sampled(w) => {
                if w.len() != tg.n_steps() + 1 {
                    return Err(Error::LengthMismatch { what: "weight samples", expected: tg.n_steps() + 1, got: w.len() });
                }
                Ok(Some(w.clone()))
            }
        }
    }
}

/// Piecewise-linear table of values over time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PathTable {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::InvalidParameter("path table needs matching, nonempty columns".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("path table times must increase".into()));
        }
        Ok(Self { times, values })
    }

    pub fn at(&self, t: f64) -> f64 {
        if self.times.len() == 1 {
            return self.values[0];
        }
        interpolate(&self.times, &self.values, t)
    }
}

/// Real coefficients `c_n(t)` of a follower target.
#[derive(Debug, Clone, PartialEq)]
pub enum FollowerCoefficients {
    /// Occupation path through states 0, 4, 3 and 1.
    OccupationPath,
    /// Linear interpolation between rows `(t, c_0, c_1, ...)`.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl FollowerCoefficients {
    /// Parses whitespace-separated rows `t c_0 c_1 ...`.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1))))
                .collect::<Result<_>>()?;
            if row.len() < 2 {
                return Err(Error::Parse(format!("line {}: expected t and at least one coefficient", ln + 1)));
            }
            if let Some(first) = values.first() {
                if first.len() != row.len() - 1 {
                    return Err(Error::Parse(format!("line {}: inconsistent column count", ln + 1)));
                }
            }
            let norm: f64 = row[1..].iter().map(|c| c * c).sum();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter(format!("line {}: coefficients have norm² {norm}", ln + 1)));
            }
            times.push(row[0]);
            values.push(row[1..].to_vec());
        }
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse("coefficient table needs increasing times".into()));
        }
        Ok(FollowerCoefficients::Table { times, values })
    }
}

/// Occupation path `c_0..c_4` over `[0, T]`; steps are right-continuous in `t`.
pub fn occupation_path(t: f64, t_final: f64) -> [f64; 5] {
    let on = |a: f64| if t >= a { 1.0 } else { 0.0 };
    let before = |a: f64| if t < a { 1.0 } else { 0.0 };
    let tt = t_final;
    let c0 = before(tt / 2.0) * (PI * t / tt).cos();
    let c1 = on(0.75 * tt) * (2.0 * PI * t / tt - 1.5 * PI).sin();
    let c2 = 0.0;
    let c4 = before(tt / 2.0) * (PI * t / tt).sin() + on(tt / 2.0) * before(0.625 * tt);
    let rest = (1.0 - c0 * c0 - c1 * c1 - c4 * c4).max(0.0);
    let c3 = on(tt / 2.0) * rest.sqrt();
    [c0, c1, c2, c3, c4]
}

/// Target state `Σ c_n(t) e^{-iE_n t} |n⟩` in a fixed eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerPath {
    basis: Vec<Wavefunction>,
    energies: Vec<f64>,
    coefficients: FollowerCoefficients,
    t_final: f64,
}

impl FollowerPath {
    pub fn new(basis: Vec<Wavefunction>, energies: Vec<f64>, coefficients: FollowerCoefficients, t_final: f64) -> Result<Self> {
        if basis.is_empty() || basis.len() != energies.len() {
            return Err(Error::InvalidParameter("follower basis and energies must match and be nonempty".into()));
        }
        if !(t_final > 0.0) {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
        }
        for b in &basis[1..] {
            check_space(basis[0].space(), b.space())?;
        }
        let needed = match &coefficients {
            FollowerCoefficients::OccupationPath => 5,
            FollowerCoefficients::Table { values, .. } => values[0].len(),
        };
        if basis.len() < needed {
            return Err(Error::InvalidParameter(format!("follower needs {needed} basis states, got {}", basis.len())));
        }
        Ok(Self { basis, energies, coefficients, t_final })
    }

    pub fn space(&self) -> Space {
        self.basis[0].space()
    }

    pub fn basis(&self) -> &[Wavefunction] {
        &self.basis
    }

    /// `c_n(t)` for every basis state.
    pub fn coefficients(&self, t: f64) -> Result<Vec<f64>> {
        let slack = 1e-9 * self.t_final;
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(Error::OutsideTime { t, t_final: self.t_final });
        }
        let mut c = vec![0.0; self.basis.len()];
        match &self.coefficients {
            FollowerCoefficients::OccupationPath => c[..5].copy_from_slice(&occupation_path(t, self.t_final)),
            FollowerCoefficients::Table { times, values } => {
                for n in 0..values[0].len() {
                    let col: Vec<f64> = values.iter().map(|r| r[n]).collect();
                    c[n] = if times.len() == 1 { col[0] } else { interpolate(times, &col, t) };
                }
            }
        }
        Ok(c)
    }

    /// Amplitudes of the target state at `t`.
    pub fn state(&self, t: f64) -> Result<Wavefunction> {
        let c = self.coefficients(t)?;
        let mut out = Wavefunction::zeros(self.space());
        for ((b, e), cn) in self.basis.iter().zip(&self.energies).zip(&c) {
            if *cn != 0.0 {
                out.axpy(C64::cis(-e * t) * cn, b)?;
            }
        }
        Ok(out)
    }

    /// `⟨φ(t)|ψ⟩` and `φ(t)` written into `phi`.
    fn overlap(&self, psi: &[C64], t: f64, phi: &mut [C64]) -> Result<C64> {
        let c = self.coefficients(t)?;
        let m = self.space().measure();
        phi.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut a = C64::new(0.0, 0.0);
        for ((b, e), cn) in self.basis.iter().zip(&self.energies).zip(&c) {
            if *cn == 0.0 {
                continue;
            }
            let ph = C64::cis(-e * t) * cn;
            a += ph.conj() * braket(m, b.amplitudes(), psi);
            phi.iter_mut().zip(b.amplitudes()).for_each(|(z, x)| *z += ph * x);
        }
        Ok(a)
    }
}

/// The operator `Ô` (or `Ô(t)`) whose weighted expectation is maximized.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetKind {
    Identity,
    /// `|φ⟩⟨φ|`.
    Projection(Wavefunction),
    /// Yield `Re⟨Ψ|φ⟩`; its costate boundary term is `φ/2`.
    PhaseFixedOverlap(Wavefunction),
    /// Normalized Gaussian of width `sigma` centred on `x0`.
    LocalDensity { x0: f64, sigma: f64, profile: Vec<f64> },
    /// Yield `∫ sqrt(n n_f) dx`, evaluation only.
    DensityOverlap(Vec<f64>),
    /// `Σ β_j Ô_j`.
    MultiObjective(Vec<(f64, TargetKind)>),
    Follower(FollowerPath),
    /// Gaussian density probe following `x0(t)`.
    MovingDensity { grid: SpatialGrid, path: PathTable, sigma: f64 },
}

fn gaussian_profile(grid: &SpatialGrid, x0: f64, sigma: f64) -> Vec<f64> {
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    grid.positions().iter().map(|x| norm * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
}

impl TargetKind {
    /// Local density probe; `sigma` defaults to two grid spacings.
    pub fn local_density(grid: SpatialGrid, x0: f64, sigma: Option<f64>) -> Result<Self> {
        let sigma = sigma.unwrap_or(2.0 * grid.dx());
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("density width must be positive, got {sigma}")));
        }
        grid.nearest(x0)?;
        Ok(TargetKind::LocalDensity { x0, sigma, profile: gaussian_profile(&grid, x0, sigma) })
    }

    pub fn moving_density(grid: SpatialGrid, path: PathTable, sigma: Option<f64>) -> Result<Self> {
        let sigma = sigma.unwrap_or(2.0 * grid.dx());
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("density width must be positive, got {sigma}")));
        }
        Ok(TargetKind::MovingDensity { grid, path, sigma })
    }

    /// Whether `apply_into` realizes a Hermitian operator.
    pub fn is_operator(&self) -> bool {
        match self {
            TargetKind::PhaseFixedOverlap(_) | TargetKind::DensityOverlap(_) => false,
            TargetKind::MultiObjective(parts) => parts.iter().all(|(_, k)| k.is_operator()),
            _ => true,
        }
    }

    /// Writes `Ô(t) ψ` into `out`.
    pub fn apply_into(&self, space: Space, psi: &[C64], t: f64, out: &mut [C64]) -> Result<()> {
        let m = space.measure();
        match self {
            TargetKind::Identity => out.copy_from_slice(psi),
            TargetKind::Projection(phi) => {
                let a = braket(m, phi.amplitudes(), psi);
                out.iter_mut().zip(phi.amplitudes()).for_each(|(o, p)| *o = p * a);
            }
            TargetKind::PhaseFixedOverlap(phi) => {
                out.iter_mut().zip(phi.amplitudes()).for_each(|(o, p)| *o = p * 0.5);
            }
            TargetKind::LocalDensity { profile, .. } => {
                check_len(profile.len(), psi.len())?;
                out.iter_mut().zip(psi).zip(profile).for_each(|((o, p), g)| *o = p * g);
            }
            TargetKind::DensityOverlap(_) => {
                return Err(Error::Unsupported("the density-overlap yield has no target operator".into()))
            }
            TargetKind::MultiObjective(parts) => {
                out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                let mut tmp = vec![C64::new(0.0, 0.0); psi.len()];
                for (beta, k) in parts {
                    k.apply_into(space, psi, t, &mut tmp)?;
                    out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += x * beta);
                }
            }
            TargetKind::Follower(f) => {
                let a = f.overlap(psi, t, out)?;
                out.iter_mut().for_each(|z| *z *= a);
            }
            TargetKind::MovingDensity { grid, path, sigma } => {
                check_len(grid.n_points(), psi.len())?;
                let g = gaussian_profile(grid, path.at(t), *sigma);
                out.iter_mut().zip(psi).zip(&g).for_each(|((o, p), w)| *o = p * w);
            }
        }
        Ok(())
    }

    /// Instantaneous yield density, `⟨ψ|Ô(t)|ψ⟩` for operator targets.
    pub fn yield_at(&self, space: Space, psi: &[C64], t: f64) -> Result<f64> {
        let m = space.measure();
        match self {
            TargetKind::Projection(phi) => Ok(braket(m, phi.amplitudes(), psi).norm_sqr()),
            TargetKind::PhaseFixedOverlap(phi) => Ok(braket(m, psi, phi.amplitudes()).re),
            TargetKind::DensityOverlap(nf) => {
                check_len(nf.len(), psi.len())?;
                Ok(psi.iter().zip(nf).map(|(p, n)| (p.norm_sqr() * n.max(0.0)).sqrt()).sum::<f64>() * m)
            }
            TargetKind::Follower(f) => {
                let mut phi = vec![C64::new(0.0, 0.0); psi.len()];
                Ok(f.overlap(psi, t, &mut phi)?.norm_sqr())
            }
            TargetKind::MultiObjective(parts) => {
                let mut s = 0.0;
                for (beta, k) in parts {
                    s += beta * k.yield_at(space, psi, t)?;
                }
                Ok(s)
            }
            _ => {
                let mut out = vec![C64::new(0.0, 0.0); psi.len()];
                self.apply_into(space, psi, t, &mut out)?;
                Ok(braket(m, psi, &out).re)
            }
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { what: "target samples", expected, got });
    }
    Ok(())
}

/// Target operator together with its time weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub weight: WeightFunction,
}

impl TargetSpec {
    pub fn final_time(kind: TargetKind) -> Self {
        Self { kind, weight: WeightFunction::FinalTime }
    }
}

/// `Ô(t) ψ`.
pub fn apply_target(spec: &TargetSpec, psi: &Wavefunction, t: f64) -> Result<Wavefunction> {
    let mut out = Wavefunction::zeros(psi.space());
    spec.kind.apply_into(psi.space(), psi.amplitudes(), t, out.amplitudes_mut())?;
    Ok(out)
}

/// Yield of a trajectory: the final expectation, or the weighted time average.
pub fn evaluate_j1(spec: &TargetSpec, traj: &Trajectory, tg: &TimeGrid) -> Result<f64> {
    let n = tg.n_steps();
    if traj.n_times() != n + 1 {
        return Err(Error::LengthMismatch { what: "trajectory", expected: n + 1, got: traj.n_times() });
    }
    let space = traj.space();
    match spec.weight.samples(tg)? {
        None => spec.kind.yield_at(space, traj.state(n), tg.t_final()),
        Some(w) => {
            let mut s = 0.0;
            for (i, wi) in w.iter().enumerate() {
                if *wi != 0.0 {
                    s += trapezoid(tg, i) * wi * spec.kind.yield_at(space, traj.state(i), tg.t(i))?;
                }
            }
            Ok(s)
        }
    }
}

/// Weight profile `1 − e^{−(t−5T/8)²/1600} + e^{−(t−T)²/64}`.
pub fn follower_weight_profile(t: f64, t_final: f64) -> f64 {
    1.0 - (-(t - 0.625 * t_final).powi(2) / 1600.0).exp() + (-(t - t_final).powi(2) / 64.0).exp()
}

/// Follower target for the occupation path with its dip-and-peak weight.
pub fn build_follower_path(basis: Vec<Wavefunction>, energies: Vec<f64>, tg: &TimeGrid) -> Result<TargetSpec> {
    let t_final = tg.t_final();
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
    }
    let path = FollowerPath::new(basis, energies, FollowerCoefficients::OccupationPath, t_final)?;
    let w = tg.times().iter().map(|&t| follower_weight_profile(t, t_final)).collect();
    Ok(TargetSpec { kind: TargetKind::Follower(path), weight: WeightFunction::sampled(w, tg)? })
}
