//! Spatial grids, wavefunctions, model potentials and dipole operators.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fourier::Fourier;

/// Uniform periodic grid on `[-x_max, x_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    x_max: f64,
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::InvalidGrid(format!("x_max must be positive, got {x_max}")));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points must be a power of two >= 8, got {n_points}"
            )));
        }
        Ok(Self { x_max, n_points })
    }

    /// Picks the power-of-two point count closest to `2 x_max / dx`.
    pub fn with_spacing(x_max: f64, dx: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidGrid(format!("dx must be positive, got {dx}")));
        }
        let n = (2.0 * x_max / dx).round();
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::InvalidGrid(format!("x_max={x_max}, dx={dx} give no points")));
        }
        let n = n as usize;
        let lo = n.next_power_of_two() / 2;
        let hi = n.next_power_of_two();
        let pick = if lo > 0 && n - lo < hi - n { lo } else { hi };
        Self::new(x_max, pick)
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_max / self.n_points as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.x_max + i as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Momenta in FFT order with spacing `2π / (n dx)`.
    pub fn momenta(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / (n as f64 * self.dx());
        (0..n)
            .map(|m| {
                let m = if m < n / 2 { m as isize } else { m as isize - n as isize };
                m as f64 * dk
            })
            .collect()
    }

    /// Index of the grid point nearest to `x`.
    pub fn nearest(&self, x: f64) -> Result<usize> {
        if !(x >= -self.x_max && x < self.x_max) {
            return Err(Error::OutsideGrid { x, lo: -self.x_max, hi: self.x_max });
        }
        let i = ((x + self.x_max) / self.dx()).round() as usize;
        Ok(i.min(self.n_points - 1))
    }
}

/// The space a state vector lives in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    Grid(SpatialGrid),
    Levels(usize),
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Grid(g) => g.n_points(),
            Space::Levels(n) => *n,
        }
    }

    /// Quadrature weight of the discrete inner product.
    pub fn measure(&self) -> f64 {
        match self {
            Space::Grid(g) => g.dx(),
            Space::Levels(_) => 1.0,
        }
    }
}

/// `Σ conj(a_i) b_i · measure`.
pub fn braket(measure: f64, a: &[C64], b: &[C64]) -> C64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im) * measure
}

/// `Σ conj(a_i) w_i b_i · measure` for a real diagonal operator `w`.
pub fn braket_diag(measure: f64, a: &[C64], w: &[f64], b: &[C64]) -> C64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for ((x, y), &d) in a.iter().zip(b).zip(w) {
        re += d * (x.re * y.re + x.im * y.im);
        im += d * (x.re * y.im - x.im * y.re);
    }
    C64::new(re, im) * measure
}

pub(crate) fn norm_sqr_slice(measure: f64, a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>() * measure
}

/// Complex amplitudes on a grid or over N levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    space: Space,
    amps: Vec<C64>,
}

impl Wavefunction {
    pub fn new(space: Space, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != space.dim() {
            return Err(Error::LengthMismatch {
                what: "wavefunction amplitudes",
                expected: space.dim(),
                got: amps.len(),
            });
        }
        Ok(Self { space, amps })
    }

    pub fn zeros(space: Space) -> Self {
        Self { space, amps: vec![C64::new(0.0, 0.0); space.dim()] }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> C64) -> Self {
        let amps = (0..grid.n_points()).map(|i| f(grid.x(i))).collect();
        Self { space: Space::Grid(grid), amps }
    }

    /// Level basis vector `|k⟩` of an N-level system.
    pub fn level(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::InvalidParameter(format!("level {k} out of range for {n} levels")));
        }
        let mut w = Self::zeros(Space::Levels(n));
        w.amps[k] = C64::new(1.0, 0.0);
        Ok(w)
    }

    /// Normalized Gaussian packet `N exp(-(x-x0)^2/(4 sigma^2) + i k0 x)`.
    pub fn gaussian(grid: SpatialGrid, x0: f64, sigma: f64, k0: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("gaussian width must be positive, got {sigma}")));
        }
        let mut w = Self::from_fn(grid, |x| {
            let a = (-(x - x0).powi(2) / (4.0 * sigma * sigma)).exp();
            C64::from_polar(a, k0 * x)
        });
        w.normalize()?;
        Ok(w)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn grid(&self) -> Option<SpatialGrid> {
        match self.space {
            Space::Grid(g) => Some(g),
            Space::Levels(_) => None,
        }
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr_slice(self.space.measure(), &self.amps)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter("cannot normalize a zero state".into()));
        }
        self.scale(C64::new(1.0 / n, 0.0));
        Ok(())
    }

    pub fn scale(&mut self, c: C64) {
        self.amps.iter_mut().for_each(|z| *z *= c);
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: C64, other: &Wavefunction) -> Result<()> {
        check_space(self.space, other.space)?;
        for (a, b) in self.amps.iter_mut().zip(&other.amps) {
            *a += c * b;
        }
        Ok(())
    }

    /// Probability density `|ψ_i|²`.
    pub fn density(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }
}

pub(crate) fn check_space(a: Space, b: Space) -> Result<()> {
    if a != b {
        return Err(Error::SpaceMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// `⟨a|b⟩`, conjugate-linear in `a`.
pub fn inner_product(a: &Wavefunction, b: &Wavefunction) -> Result<C64> {
    check_space(a.space, b.space)?;
    Ok(braket(a.space.measure(), &a.amps, &b.amps))
}

/// Model potentials for grid systems.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `ω0⁴/(64B) x⁴ − ω0²/4 x² + β x³`.
    AsymmetricDoubleWell { b: f64, omega0: f64, beta: f64 },
    /// `ω² x² / 2`.
    Harmonic { omega: f64 },
    /// Linear interpolation through `(x, v)` samples, constant beyond the ends.
    Tabulated { x: Vec<f64>, v: Vec<f64> },
}

impl Potential {
    /// The double well with `B = ω0 = 1` and `β = 1/256`.
    pub fn double_well() -> Self {
        Potential::AsymmetricDoubleWell { b: 1.0, omega0: 1.0, beta: 1.0 / 256.0 }
    }

    pub fn tabulated(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::LengthMismatch { what: "potential table", expected: x.len(), got: v.len() });
        }
        if x.len() < 2 {
            return Err(Error::InvalidParameter("potential table needs at least two rows".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("potential table x column must increase strictly".into()));
        }
        if x.iter().chain(&v).any(|z| !z.is_finite()) {
            return Err(Error::InvalidParameter("potential table contains non-finite values".into()));
        }
        Ok(Potential::Tabulated { x, v })
    }

    /// Parses whitespace-separated `x V` rows; `#` starts a comment.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 2 {
                return Err(Error::Parse(format!("line {}: expected two columns", ln + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))
            };
            xs.push(parse(cols[0])?);
            vs.push(parse(cols[1])?);
        }
        Self::tabulated(xs, vs)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Potential::AsymmetricDoubleWell { b, omega0, beta } => {
                let w2 = omega0 * omega0;
                w2 * w2 / (64.0 * b) * x.powi(4) - w2 / 4.0 * x * x + beta * x.powi(3)
            }
            Potential::Harmonic { omega } => 0.5 * omega * omega * x * x,
            Potential::Tabulated { x: xs, v } => interpolate(xs, v, x),
        }
    }
}

pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&p| p <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let s = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - s) + ys[j] * s
}

/// Samples a potential on every grid point.
pub fn eval_potential(pot: &Potential, grid: &SpatialGrid) -> Vec<f64> {
    (0..grid.n_points()).map(|i| pot.value(grid.x(i))).collect()
}

/// Dipole operator `μ̂`.
#[derive(Debug, Clone, PartialEq)]
pub enum DipoleOperator {
    /// `μ̂ = x̂` on a grid.
    Position,
    /// Real symmetric matrix for N-level systems.
    Matrix(DMatrix<f64>),
}

impl DipoleOperator {
    pub fn validate(&self) -> Result<()> {
        if let DipoleOperator::Matrix(m) = self {
            check_symmetric(m, "dipole")?;
        }
        Ok(())
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidParameter(format!("{what} matrix is not square")));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!(
                    "{what} matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Quantities with a real expectation value.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable<'a> {
    Dipole(&'a DipoleOperator),
    /// `|ψ(x0)|²` at the nearest grid point.
    DensityAt(f64),
}

pub fn expectation(obs: &Observable, psi: &Wavefunction) -> Result<f64> {
    match (obs, psi.space) {
        (Observable::Dipole(DipoleOperator::Position), Space::Grid(g)) => {
            Ok(psi.amps.iter().enumerate().map(|(i, z)| g.x(i) * z.norm_sqr()).sum::<f64>() * g.dx())
        }
        (Observable::Dipole(DipoleOperator::Matrix(m)), Space::Levels(n)) => {
            if m.nrows() != n {
                return Err(Error::LengthMismatch { what: "dipole matrix", expected: n, got: m.nrows() });
            }
            let a = &psi.amps;
            let mut s = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    s += a[i].conj() * m[(i, j)] * a[j];
                }
            }
            Ok(s.re)
        }
        (Observable::DensityAt(x0), Space::Grid(g)) => Ok(psi.amps[g.nearest(*x0)?].norm_sqr()),
        (obs, space) => Err(Error::SpaceMismatch(format!("{obs:?} cannot act on {space:?}"))),
    }
}

/// A particle on a 1D grid, `H = p²/2 + V(x) − Σ_j μ_j(x) ε_j(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSystem {
    grid: SpatialGrid,
    potential: Vec<f64>,
    dipoles: Vec<Vec<f64>>,
}

impl GridSystem {
    /// Single polarization with `μ̂ = x̂`.
    pub fn new(grid: SpatialGrid, potential: &Potential) -> Self {
        Self { grid, potential: eval_potential(potential, &grid), dipoles: vec![grid.positions()] }
    }

    /// Arbitrary local potential and dipole functions sampled on the grid.
    pub fn from_samples(grid: SpatialGrid, potential: Vec<f64>, dipoles: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.n_points();
        if potential.len() != n {
            return Err(Error::LengthMismatch { what: "potential samples", expected: n, got: potential.len() });
        }
        if dipoles.is_empty() {
            return Err(Error::InvalidParameter("at least one dipole component is required".into()));
        }
        for d in &dipoles {
            if d.len() != n {
                return Err(Error::LengthMismatch { what: "dipole samples", expected: n, got: d.len() });
            }
        }
        Ok(Self { grid, potential, dipoles })
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn dipole(&self, j: usize) -> &[f64] {
        &self.dipoles[j]
    }

    pub fn n_polarizations(&self) -> usize {
        self.dipoles.len()
    }

    /// `Ĥ0 ψ` with the kinetic term evaluated spectrally.
    pub fn apply_h0(&self, psi: &[C64]) -> Vec<C64> {
        let mut out = psi.to_vec();
        let mut fourier = Fourier::new(self.grid.n_points());
        fourier.forward(&mut out);
        let n = self.grid.n_points() as f64;
        for (z, k) in out.iter_mut().zip(self.grid.momenta()) {
            *z *= 0.5 * k * k / n;
        }
        fourier.inverse_unscaled(&mut out);
        for ((o, p), v) in out.iter_mut().zip(psi).zip(&self.potential) {
            *o += p * v;
        }
        out
    }

    /// Real part of `⟨a|μ_j|b⟩` between states, for dipole tables.
    pub fn dipole_matrix(&self, states: &[Wavefunction], j: usize) -> DMatrix<f64> {
        let n = states.len();
        let dx = self.grid.dx();
        DMatrix::from_fn(n, n, |a, b| {
            braket_diag(dx, states[a].amplitudes(), &self.dipoles[j], states[b].amplitudes()).re
        })
    }
}

/// Finite-dimensional system `H = H0 − Σ_j μ_j ε_j(t)` with real symmetric matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct NLevelSystem {
    h0: DMatrix<f64>,
    dipoles: Vec<DMatrix<f64>>,
}

impl NLevelSystem {
    pub fn new(h0: DMatrix<f64>, dipoles: Vec<DMatrix<f64>>) -> Result<Self> {
        check_symmetric(&h0, "H0")?;
        if dipoles.is_empty() {
            return Err(Error::InvalidParameter("at least one dipole component is required".into()));
        }
        for d in &dipoles {
            if d.shape() != h0.shape() {
                return Err(Error::LengthMismatch { what: "dipole matrix", expected: h0.nrows(), got: d.nrows() });
            }
            check_symmetric(d, "dipole")?;
        }
        Ok(Self { h0, dipoles })
    }

    /// Levels `ω_a`, `ω_b` coupled by a single off-diagonal dipole `μ`.
    pub fn two_level(omega_a: f64, omega_b: f64, mu: f64) -> Self {
        let h0 = DMatrix::from_row_slice(2, 2, &[omega_a, 0.0, 0.0, omega_b]);
        let d = DMatrix::from_row_slice(2, 2, &[0.0, mu, mu, 0.0]);
        Self { h0, dipoles: vec![d] }
    }

    pub fn n_levels(&self) -> usize {
        self.h0.nrows()
    }

    pub fn h0(&self) -> &DMatrix<f64> {
        &self.h0
    }

    pub fn dipole(&self, j: usize) -> &DMatrix<f64> {
        &self.dipoles[j]
    }

    pub fn n_polarizations(&self) -> usize {
        self.dipoles.len()
    }
}
