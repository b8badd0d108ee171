//! Split-operator time stepping, imaginary-time eigenstates and the
//! inhomogeneous backward equation.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::field::ControlField;
use crate::fourier::Fourier;
use crate::qsystem::{braket, braket_diag, check_space, norm_sqr_slice, GridSystem, NLevelSystem, Space, Wavefunction};
use crate::targets::TargetKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// `n_steps` intervals of width `dt` covering `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Rounds `T/dt` to the nearest step count and adjusts `dt` so the steps tile `T`.
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        let n = (t_final / dt).round().max(1.0) as usize;
        Ok(Self { t_final, dt: t_final / n as f64, n_steps: n })
    }

    pub fn with_steps(t_final: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        Self::new(t_final, t_final / n_steps as f64)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_final
        } else {
            i as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t(i)).collect()
    }
}

/// Advances a state by one step of fixed width.
pub trait Stepper {
    /// One step with the field held at `field` (one value per polarization).
    fn step(&mut self, psi: &mut [C64], field: &[f64], dir: Direction);
}

/// A system that can be propagated in real time.
pub trait Dynamics: Sync {
    fn space(&self) -> Space;
    fn n_polarizations(&self) -> usize;
    /// `⟨a|μ_j|b⟩`.
    fn dipole_braket(&self, j: usize, a: &[C64], b: &[C64]) -> C64;
    fn stepper(&self, dt: f64) -> Box<dyn Stepper + '_>;
}

const ANCHOR: usize = 64;

/// Multiplies `phase[i]` by `exp(i a d_i)`.
fn apply_dipole_phase(phase: &mut [C64], a: f64, d: &DipoleShape) {
    match d {
        DipoleShape::Linear { x0, dx } => {
            let r = C64::cis(a * dx);
            for (c, chunk) in phase.chunks_mut(ANCHOR).enumerate() {
                let mut z = C64::cis(a * (x0 + (c * ANCHOR) as f64 * dx));
                for p in chunk {
                    *p *= z;
                    z *= r;
                }
            }
        }
        DipoleShape::Table(v) => {
            for (p, &x) in phase.iter_mut().zip(v.iter()) {
                *p *= C64::cis(a * x);
            }
        }
    }
}

enum DipoleShape<'a> {
    Linear { x0: f64, dx: f64 },
    Table(&'a [f64]),
}

fn dipole_shape(values: &[f64]) -> DipoleShape<'_> {
    let n = values.len();
    if n >= 2 {
        let dx = values[1] - values[0];
        let x0 = values[0];
        let linear = values
            .iter()
            .enumerate()
            .all(|(i, &v)| (v - (x0 + i as f64 * dx)).abs() <= 1e-12 * (1.0 + v.abs()));
        if linear {
            return DipoleShape::Linear { x0, dx };
        }
    }
    DipoleShape::Table(values)
}

/// Strang splitting `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}` on a grid.
struct GridStepper<'a> {
    fourier: Fourier,
    kin: Vec<C64>,
    vhalf: Vec<C64>,
    phase: Vec<C64>,
    dipoles: Vec<DipoleShape<'a>>,
    dt: f64,
}

impl<'a> GridStepper<'a> {
    fn new(sys: &'a GridSystem, dt: f64) -> Self {
        let g = sys.grid();
        let n = g.n_points();
        let inv_n = 1.0 / n as f64;
        let kin = g.momenta().iter().map(|k| C64::cis(-0.5 * k * k * dt) * inv_n).collect();
        let vhalf = sys.potential().iter().map(|v| C64::cis(-0.5 * v * dt)).collect();
        let dipoles = (0..sys.n_polarizations()).map(|j| dipole_shape(sys.dipole(j))).collect();
        Self { fourier: Fourier::new(n), kin, vhalf, phase: vec![C64::new(0.0, 0.0); n], dipoles, dt }
    }
}

impl Stepper for GridStepper<'_> {
    fn step(&mut self, psi: &mut [C64], field: &[f64], dir: Direction) {
        let back = dir == Direction::Backward;
        if back {
            self.phase.iter_mut().zip(&self.vhalf).for_each(|(p, v)| *p = v.conj());
        } else {
            self.phase.copy_from_slice(&self.vhalf);
        }
        let sign = if back { -1.0 } else { 1.0 };
        for (d, &e) in self.dipoles.iter().zip(field) {
            if e != 0.0 {
                apply_dipole_phase(&mut self.phase, sign * 0.5 * e * self.dt, d);
            }
        }
        psi.iter_mut().zip(&self.phase).for_each(|(z, p)| *z *= p);
        self.fourier.forward(psi);
        if back {
            psi.iter_mut().zip(&self.kin).for_each(|(z, k)| *z *= k.conj());
        } else {
            psi.iter_mut().zip(&self.kin).for_each(|(z, k)| *z *= k);
        }
        self.fourier.inverse_unscaled(psi);
        psi.iter_mut().zip(&self.phase).for_each(|(z, p)| *z *= p);
    }
}

impl Dynamics for GridSystem {
    fn space(&self) -> Space {
        Space::Grid(self.grid())
    }

    fn n_polarizations(&self) -> usize {
        GridSystem::n_polarizations(self)
    }

    fn dipole_braket(&self, j: usize, a: &[C64], b: &[C64]) -> C64 {
        braket_diag(self.grid().dx(), a, self.dipole(j), b)
    }

    fn stepper(&self, dt: f64) -> Box<dyn Stepper + '_> {
        Box::new(GridStepper::new(self, dt))
    }
}

/// Dense row-major complex matrix.
#[derive(Clone)]
struct CMat {
    n: usize,
    a: Vec<C64>,
}

impl CMat {
    fn from_real(m: &nalgebra::DMatrix<f64>) -> Self {
        let n = m.nrows();
        Self { n, a: (0..n * n).map(|k| C64::new(m[(k / n, k % n)], 0.0)).collect() }
    }

    fn mul(&self, o: &CMat) -> CMat {
        let n = self.n;
        let mut a = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i * n + k];
                for j in 0..n {
                    a[i * n + j] += x * o.a[k * n + j];
                }
            }
        }
        CMat { n, a }
    }

    fn adjoint(&self) -> CMat {
        let n = self.n;
        CMat { n, a: (0..n * n).map(|k| self.a[(k % n) * n + k / n].conj()).collect() }
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = self.n;
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.a[i * n..(i + 1) * n];
            *yi = row.iter().zip(x).map(|(m, v)| m * v).sum();
        }
    }
}

/// `e^{-iH0 dt/2} Π e^{+iμ_j ε_j w dt} e^{-iH0 dt/2}` with each dipole diagonalized once.
struct LevelStepper {
    /// Unitaries between the diagonal phase factors.
    fwd: Vec<CMat>,
    bwd: Vec<CMat>,
    /// `(polarization, weight, dipole eigenvalues)` in application order.
    factors: Vec<(usize, f64, Vec<f64>)>,
    tmp: Vec<C64>,
    dt: f64,
}

impl LevelStepper {
    fn new(sys: &NLevelSystem, dt: f64) -> Self {
        let n = sys.n_levels();
        let eig = nalgebra::SymmetricEigen::new(sys.h0().clone());
        let v = CMat::from_real(&eig.eigenvectors);
        let mut d = CMat { n, a: vec![C64::new(0.0, 0.0); n * n] };
        for k in 0..n {
            d.a[k * n + k] = C64::cis(-0.5 * eig.eigenvalues[k] * dt);
        }
        let p_half = v.mul(&d).mul(&v.adjoint());

        let m = sys.n_polarizations();
        let order: Vec<(usize, f64)> = if m == 1 {
            vec![(0, 1.0)]
        } else {
            let mut o: Vec<(usize, f64)> = (0..m - 1).map(|j| (j, 0.5)).collect();
            o.push((m - 1, 1.0));
            o.extend((0..m - 1).rev().map(|j| (j, 0.5)));
            o
        };
        let decomp: Vec<(Vec<f64>, CMat)> = (0..m)
            .map(|j| {
                let e = nalgebra::SymmetricEigen::new(sys.dipole(j).clone());
                (e.eigenvalues.iter().copied().collect(), CMat::from_real(&e.eigenvectors))
            })
            .collect();

        let mut fwd = Vec::with_capacity(order.len() + 1);
        let mut prev: Option<&CMat> = None;
        for &(j, _) in &order {
            let u = &decomp[j].1;
            fwd.push(match prev {
                None => u.adjoint().mul(&p_half),
                Some(p) => u.adjoint().mul(p),
            });
            prev = Some(u);
        }
        fwd.push(p_half.mul(prev.unwrap()));
        let bwd = fwd.iter().rev().map(CMat::adjoint).collect();
        let factors = order.iter().map(|&(j, w)| (j, w, decomp[j].0.clone())).collect();
        Self { fwd, bwd, factors, tmp: vec![C64::new(0.0, 0.0); n], dt }
    }
}

impl Stepper for LevelStepper {
    fn step(&mut self, psi: &mut [C64], field: &[f64], dir: Direction) {
        let (mats, sign) = match dir {
            Direction::Forward => (&self.fwd, 1.0),
            Direction::Backward => (&self.bwd, -1.0),
        };
        let nf = self.factors.len();
        mats[0].apply(psi, &mut self.tmp);
        for s in 0..nf {
            let idx = if sign > 0.0 { s } else { nf - 1 - s };
            let (j, w, ref d) = self.factors[idx];
            let a = sign * w * field[j] * self.dt;
            if a != 0.0 {
                for (z, &dk) in self.tmp.iter_mut().zip(d) {
                    *z *= C64::cis(a * dk);
                }
            }
            mats[s + 1].apply(&self.tmp, psi);
            if s + 1 < nf {
                self.tmp.copy_from_slice(psi);
            }
        }
    }
}

impl Dynamics for NLevelSystem {
    fn space(&self) -> Space {
        Space::Levels(self.n_levels())
    }

    fn n_polarizations(&self) -> usize {
        NLevelSystem::n_polarizations(self)
    }

    fn dipole_braket(&self, j: usize, a: &[C64], b: &[C64]) -> C64 {
        let m = self.dipole(j);
        let n = self.n_levels();
        let mut s = C64::new(0.0, 0.0);
        for r in 0..n {
            let mut row = C64::new(0.0, 0.0);
            for c in 0..n {
                row += m[(r, c)] * b[c];
            }
            s += a[r].conj() * row;
        }
        s
    }

    fn stepper(&self, dt: f64) -> Box<dyn Stepper + '_> {
        Box::new(LevelStepper::new(self, dt))
    }
}

/// One split step with an explicit total potential `V_total` (field term included).
pub fn split_step(psi: &mut Wavefunction, v_total: &[f64], dt: f64, dir: Direction) -> Result<()> {
    let Space::Grid(g) = psi.space() else {
        return Err(Error::SpaceMismatch("split_step needs a grid state".into()));
    };
    if v_total.len() != g.n_points() {
        return Err(Error::LengthMismatch { what: "potential samples", expected: g.n_points(), got: v_total.len() });
    }
    let sys = GridSystem::from_samples(g, v_total.to_vec(), vec![g.positions()])?;
    sys.stepper(dt).step(psi.amplitudes_mut(), &[0.0], dir);
    Ok(())
}

/// Per-step observer receiving `(index, t_i, ψ(t_i))`.
pub type Tap<'a> = &'a mut dyn FnMut(usize, f64, &[C64]);

/// Propagates `psi0` across `tg` and returns the state at the far end.
pub fn propagate<D: Dynamics + ?Sized>(
    sys: &D,
    psi0: &Wavefunction,
    field: &ControlField,
    tg: &TimeGrid,
    dir: Direction,
    mut tap: Option<Tap>,
) -> Result<Wavefunction> {
    check_space(sys.space(), psi0.space())?;
    field.check(tg, sys.n_polarizations())?;
    let mut psi = psi0.clone();
    let mut stepper = sys.stepper(tg.dt());
    let mut e = vec![0.0; field.n_polarizations()];
    let n = tg.n_steps();
    match dir {
        Direction::Forward => {
            if let Some(t) = tap.as_mut() {
                t(0, 0.0, psi.amplitudes());
            }
            for i in 0..n {
                field.sample_into(i, &mut e);
                stepper.step(psi.amplitudes_mut(), &e, dir);
                if let Some(t) = tap.as_mut() {
                    t(i + 1, tg.t(i + 1), psi.amplitudes());
                }
            }
        }
        Direction::Backward => {
            if let Some(t) = tap.as_mut() {
                t(n, tg.t_final(), psi.amplitudes());
            }
            for i in (0..n).rev() {
                field.sample_into(i, &mut e);
                stepper.step(psi.amplitudes_mut(), &e, dir);
                if let Some(t) = tap.as_mut() {
                    t(i, tg.t(i), psi.amplitudes());
                }
            }
        }
    }
    Ok(psi)
}

/// States at every time point `t_0..t_n`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    space: Space,
    n_times: usize,
    data: Vec<C64>,
}

impl Trajectory {
    pub fn new(space: Space, n_times: usize) -> Self {
        Self { space, n_times, data: vec![C64::new(0.0, 0.0); space.dim() * n_times] }
    }

    /// Forward propagation recording every state.
    pub fn record<D: Dynamics + ?Sized>(sys: &D, psi0: &Wavefunction, field: &ControlField, tg: &TimeGrid) -> Result<Self> {
        let mut traj = Self::new(sys.space(), tg.n_steps() + 1);
        let mut tap = |i: usize, _t: f64, s: &[C64]| traj.state_mut(i).copy_from_slice(s);
        propagate(sys, psi0, field, tg, Direction::Forward, Some(&mut tap))?;
        Ok(traj)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn state(&self, i: usize) -> &[C64] {
        let d = self.space.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn state_mut(&mut self, i: usize) -> &mut [C64] {
        let d = self.space.dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn wavefunction(&self, i: usize) -> Wavefunction {
        Wavefunction::new(self.space, self.state(i).to_vec()).expect("slot has the space dimension")
    }
}

/// Settings for imaginary-time relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub dtau: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub check_every: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { dtau: 0.005, tol: 1e-10, max_steps: 1_000_000, check_every: 100 }
    }
}

/// Lowest eigenpairs of `Ĥ0`, energies ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    pub energies: Vec<f64>,
    pub states: Vec<Wavefunction>,
}

/// Relaxes each state in imaginary time while projecting out the lower ones.
pub fn imaginary_time_eigenstates(sys: &GridSystem, n_states: usize, opts: &EigenOptions) -> Result<Eigenpairs> {
    if n_states == 0 || n_states > 8 {
        return Err(Error::InvalidParameter(format!("n_states must be in 1..=8, got {n_states}")));
    }
    if !(opts.dtau > 0.0) || !(opts.tol > 0.0) || opts.check_every == 0 {
        return Err(Error::InvalidParameter("dtau, tol and check interval must be positive".into()));
    }
    let g = sys.grid();
    let n = g.n_points();
    let dx = g.dx();
    let decay: Vec<f64> = g.momenta().iter().map(|k| (-0.5 * k * k * opts.dtau).exp() / n as f64).collect();
    let vhalf: Vec<f64> = sys.potential().iter().map(|v| (-0.5 * v * opts.dtau).exp()).collect();
    let mut fourier = Fourier::new(n);
    let mut states: Vec<Wavefunction> = Vec::with_capacity(n_states);
    let mut energies = Vec::with_capacity(n_states);

    for k in 0..n_states {
        let s = 3.0;
        let mut psi: Vec<C64> = (0..n)
            .map(|i| {
                let u = g.x(i) / s;
                C64::new((u.powi(k as i32) + 0.3 * u.powi(k as i32 + 1)) * (-0.5 * u * u).exp(), 0.0)
            })
            .collect();
        orthonormalize(&mut psi, &states, dx);
        let mut e_prev = f64::INFINITY;
        let mut converged = false;
        let mut step = 0;
        while step < opts.max_steps {
            psi.iter_mut().zip(&vhalf).for_each(|(z, v)| *z *= v);
            fourier.forward(&mut psi);
            psi.iter_mut().zip(&decay).for_each(|(z, d)| *z *= d);
            fourier.inverse_unscaled(&mut psi);
            psi.iter_mut().zip(&vhalf).for_each(|(z, v)| *z *= v);
            orthonormalize(&mut psi, &states, dx);
            step += 1;
            if step % opts.check_every == 0 {
                let e = braket(dx, &psi, &sys.apply_h0(&psi)).re;
                if (e - e_prev).abs() < opts.tol {
                    converged = true;
                    break;
                }
                e_prev = e;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { state: k, steps: opts.max_steps });
        }
        fix_phase(&mut psi);
        let e = braket(dx, &psi, &sys.apply_h0(&psi)).re;
        energies.push(e);
        states.push(Wavefunction::new(Space::Grid(g), psi)?);
    }
    Ok(Eigenpairs { energies, states })
}

fn orthonormalize(psi: &mut [C64], lower: &[Wavefunction], dx: f64) {
    for _ in 0..2 {
        for l in lower {
            let c = braket(dx, l.amplitudes(), psi);
            for (z, b) in psi.iter_mut().zip(l.amplitudes()) {
                *z -= c * b;
            }
        }
    }
    let nrm = norm_sqr_slice(dx, psi).sqrt();
    psi.iter_mut().for_each(|z| *z /= nrm);
}

/// Rotates the global phase so the largest amplitude is real and positive.
fn fix_phase(psi: &mut [C64]) {
    let big = psi.iter().copied().fold(C64::new(0.0, 0.0), |m, z| if z.norm_sqr() > m.norm_sqr() { z } else { m });
    if big.norm() > 0.0 {
        let rot = big.conj() / big.norm();
        psi.iter_mut().for_each(|z| *z *= rot);
    }
}

/// Driving term `-(i/T) w(t) Ô(t) Ψ(t)` of the backward costate equation.
pub struct InhomogeneousSource<'a> {
    /// `w(t_i)` at every time point.
    pub weight: &'a [f64],
    pub target: &'a TargetKind,
    /// `Ψ(t_i)` at every time point.
    pub psi: &'a Trajectory,
}

/// Trapezoid weights `c_i dt / T` with halves at both ends.
pub(crate) fn trapezoid(tg: &TimeGrid, i: usize) -> f64 {
    let c = if i == 0 || i == tg.n_steps() { 0.5 } else { 1.0 };
    c * tg.dt() / tg.t_final()
}

/// Integrates the costate backward from `chi_t` at `T`, accumulating the source
/// with the trapezoid rule on each interval.
pub fn propagate_inhomogeneous<D: Dynamics + ?Sized>(
    sys: &D,
    chi_t: &Wavefunction,
    field: &ControlField,
    source: &InhomogeneousSource,
    tg: &TimeGrid,
    mut tap: Option<Tap>,
) -> Result<Wavefunction> {
    check_space(sys.space(), chi_t.space())?;
    field.check(tg, sys.n_polarizations())?;
    let n = tg.n_steps();
    if source.weight.len() != n + 1 {
        return Err(Error::LengthMismatch { what: "source weights", expected: n + 1, got: source.weight.len() });
    }
    if source.psi.n_times() != n + 1 {
        return Err(Error::LengthMismatch { what: "source trajectory", expected: n + 1, got: source.psi.n_times() });
    }
    check_space(sys.space(), source.psi.space())?;
    if source.weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter("source weights must be finite and nonnegative".into()));
    }
    let total: f64 = (0..=n).map(|i| trapezoid(tg, i) * source.weight[i]).sum();
    if source.weight.iter().any(|&w| w != 0.0) && (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("source weight integrates to {total} T, expected T")));
    }
    let space = sys.space();
    let half = 0.5 * tg.dt() / tg.t_final();
    let mut stepper = sys.stepper(tg.dt());
    let mut chi = chi_t.amplitudes().to_vec();
    let mut buf = vec![C64::new(0.0, 0.0); space.dim()];
    let mut e = vec![0.0; field.n_polarizations()];
    let add_source = |chi: &mut [C64], i: usize, buf: &mut [C64]| -> Result<()> {
        let w = source.weight[i];
        if w != 0.0 {
            source.target.apply_into(space, source.psi.state(i), tg.t(i), buf)?;
            let h = half * w;
            chi.iter_mut().zip(buf.iter()).for_each(|(c, s)| *c += s * h);
        }
        Ok(())
    };
    if let Some(t) = tap.as_mut() {
        t(n, tg.t_final(), &chi);
    }
    for i in (0..n).rev() {
        add_source(&mut chi, i + 1, &mut buf)?;
        field.sample_into(i, &mut e);
        stepper.step(&mut chi, &e, Direction::Backward);
        add_source(&mut chi, i, &mut buf)?;
        if let Some(t) = tap.as_mut() {
            t(i, tg.t(i), &chi);
        }
    }
    Wavefunction::new(space, chi)
}
