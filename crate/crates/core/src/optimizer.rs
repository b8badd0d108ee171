//! Iterative solvers for the control equations.
//!
//! Three propagation patterns cover every scheme:
//!
//! * immediate feedback in both directions (standard scheme, time-dependent
//!   targets with `η`/`ξ` mixing),
//! * the projection scheme that starts backward from `φ_f` and carries the
//!   overlap `⟨Ψ|χ⟩` in both field updates,
//! * a fixed-field forward pass followed by a self-consistent backward pass,
//!   after which the candidate field is filtered and/or rescaled to a fixed
//!   fluence.
//!
//! Every run keeps the best iterate (highest `J1`) and a per-iteration record.
//! Trajectories are either stored in one buffer that is overwritten in place,
//! or regenerated by propagating the partner state alongside.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::field::ControlField;
use crate::filters::{apply_filter, FieldFilter};
use crate::propagator::{propagate, trapezoid, Direction, Dynamics, Stepper, TimeGrid, Trajectory};
use crate::qsystem::{braket, check_space, norm_sqr_slice, Space, Wavefunction};
use crate::targets::{TargetKind, TargetSpec};

/// Default `|ΔJ|` stopping threshold.
pub const DEFAULT_THRESHOLD: f64 = 1e-5;
/// Default trajectory budget in stored complex amplitudes.
pub const DEFAULT_BUDGET: usize = 200_000_000;
/// Default tolerance on the loss of norm during propagation.
pub const DEFAULT_NORM_TOL: f64 = 1e-4;

/// How `α` is determined.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Fixed penalty factors `α_j`.
    Penalty(Vec<f64>),
    /// Fixed fluences `E0_j`; `α_j` becomes a Lagrange multiplier.
    Fluence(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Standard { alpha: Vec<f64> },
    RapidProjection { alpha: Vec<f64> },
    FluenceFixed { fluence: Vec<f64> },
    Filtered { filter: FieldFilter, alpha: Vec<f64> },
    FilteredFluence { filter: FieldFilter, fluence: Vec<f64> },
    TimeDependent { eta: f64, xi: f64, constraint: Constraint, filter: Option<FieldFilter> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    Constant(f64),
    Zero,
    Field(ControlField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    /// Stored when the trajectory fits the budget, replayed otherwise.
    Auto,
    Stored,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub scheme: Scheme,
    pub threshold: f64,
    pub max_iters: usize,
    pub guess: InitialGuess,
    pub storage: Storage,
    /// Largest trajectory, in complex amplitudes, kept in memory under [`Storage::Auto`].
    pub budget: usize,
    pub norm_tol: f64,
}

impl OptimizerConfig {
    pub fn new(scheme: Scheme, guess: InitialGuess, max_iters: usize) -> Self {
        Self {
            scheme,
            threshold: DEFAULT_THRESHOLD,
            max_iters,
            guess,
            storage: Storage::Auto,
            budget: DEFAULT_BUDGET,
            norm_tol: DEFAULT_NORM_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64], what: &str| -> Result<()> {
            if v.is_empty() || v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::InvalidParameter(format!("{what} must be positive for every polarization")));
            }
            Ok(())
        };
        match &self.scheme {
            Scheme::Standard { alpha } | Scheme::RapidProjection { alpha } => positive(alpha, "penalty factor")?,
            Scheme::FluenceFixed { fluence } => positive(fluence, "fluence")?,
            Scheme::Filtered { filter, alpha } => {
                filter.validate()?;
                positive(alpha, "penalty factor")?;
            }
            Scheme::FilteredFluence { filter, fluence } => {
                filter.validate()?;
                positive(fluence, "fluence")?;
            }
            Scheme::TimeDependent { eta, xi, constraint, filter } => {
                if !(0.0..=1.0).contains(eta) {
                    return Err(Error::InvalidParameter(format!("eta must lie in [0, 1], got {eta}")));
                }
                if !(0.0..=2.0).contains(xi) {
                    return Err(Error::InvalidParameter(format!("xi must lie in [0, 2], got {xi}")));
                }
                match constraint {
                    Constraint::Penalty(a) => positive(a, "penalty factor")?,
                    Constraint::Fluence(e) => positive(e, "fluence")?,
                }
                if let Some(f) = filter {
                    f.validate()?;
                }
            }
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!("threshold must be nonnegative, got {}", self.threshold)));
        }
        if !(self.norm_tol > 0.0) {
            return Err(Error::InvalidParameter("norm tolerance must be positive".into()));
        }
        Ok(())
    }

    fn n_polarizations_declared(&self) -> usize {
        match &self.scheme {
            Scheme::Standard { alpha } | Scheme::RapidProjection { alpha } | Scheme::Filtered { alpha, .. } => alpha.len(),
            Scheme::FluenceFixed { fluence } | Scheme::FilteredFluence { fluence, .. } => fluence.len(),
            Scheme::TimeDependent { constraint: Constraint::Penalty(a), .. } => a.len(),
            Scheme::TimeDependent { constraint: Constraint::Fluence(e), .. } => e.len(),
        }
    }
}

/// Initial state, target and time grid of one optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub psi0: Wavefunction,
    pub target: TargetSpec,
    pub tg: TimeGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j: f64,
    /// Fluence per polarization.
    pub fluence: Vec<f64>,
    /// `α_j` used for this iterate.
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceRecord {
    pub iterations: Vec<IterationRecord>,
    pub best_iteration: usize,
}

impl ConvergenceRecord {
    pub fn best(&self) -> Option<&IterationRecord> {
        self.iterations.get(self.best_iteration)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub best_field: ControlField,
    pub best_j1: f64,
    pub best_iteration: usize,
    /// Field of the last recorded iterate.
    pub last_field: ControlField,
    pub record: ConvergenceRecord,
    /// Whether `|ΔJ|` fell below the threshold before the cap.
    pub converged: bool,
    /// Whether the trajectory was kept in memory.
    pub stored: bool,
}

/// `−(1/α) Im⟨χ|μ_j|Ψ⟩`.
pub fn field_update<D: Dynamics + ?Sized>(sys: &D, j: usize, chi: &[C64], psi: &[C64], alpha: f64) -> Result<f64> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("penalty factor must be nonzero and finite, got {alpha}")));
    }
    if j >= sys.n_polarizations() {
        return Err(Error::InvalidParameter(format!("no polarization {j}")));
    }
    Ok(-sys.dipole_braket(j, chi, psi).im / alpha)
}

/// Runs the scheme in `cfg`.
pub fn optimize<D: Dynamics + ?Sized>(sys: &D, problem: &Problem, cfg: &OptimizerConfig) -> Result<Outcome> {
    cfg.validate()?;
    let m = sys.n_polarizations();
    if cfg.n_polarizations_declared() != m {
        return Err(Error::LengthMismatch {
            what: "per-polarization parameters",
            expected: m,
            got: cfg.n_polarizations_declared(),
        });
    }
    check_space(sys.space(), problem.psi0.space())?;
    let tg = problem.tg;
    let guess = match &cfg.guess {
        InitialGuess::Constant(c) => ControlField::constant(&tg, m, *c),
        InitialGuess::Zero => ControlField::zeros(&tg, m),
        InitialGuess::Field(f) => {
            f.check(&tg, m)?;
            f.clone()
        }
    };
    let weight = problem.target.weight.samples(&tg)?;
    let stored = match cfg.storage {
        Storage::Stored => true,
        Storage::Replay => false,
        Storage::Auto => {
            let need = (tg.n_steps() + 1).saturating_mul(sys.space().dim());
            if need > cfg.budget {
                log::info!("trajectory of {need} amplitudes exceeds the budget of {}; replaying instead", cfg.budget);
            }
            need <= cfg.budget
        }
    };
    let mut ctx = Ctx::new(sys, problem, weight, stored, cfg.norm_tol);
    if !ctx.operator_target() {
        return Err(Error::Unsupported("the optimizer needs a target with an operator form".into()));
    }
    match &cfg.scheme {
        Scheme::Standard { alpha } => ctx.run_feedback(guess, alpha, 1.0, 1.0, cfg),
        Scheme::TimeDependent { eta, xi, constraint: Constraint::Penalty(alpha), filter: None } => {
            ctx.run_feedback(guess, alpha, *eta, *xi, cfg)
        }
        Scheme::RapidProjection { alpha } => {
            let TargetKind::Projection(phi) = &problem.target.kind else {
                return Err(Error::Unsupported("the projection scheme needs a projection target".into()));
            };
            if !problem.target.weight.is_final_time() {
                return Err(Error::Unsupported("the projection scheme needs a final-time target".into()));
            }
            ctx.run_rapid(guess, phi.amplitudes(), alpha, cfg)
        }
        Scheme::FluenceFixed { fluence } => ctx.run_fixed(guess, &Constraint::Fluence(fluence.clone()), None, cfg),
        Scheme::Filtered { filter, alpha } => ctx.run_fixed(guess, &Constraint::Penalty(alpha.clone()), Some(filter), cfg),
        Scheme::FilteredFluence { filter, fluence } => {
            ctx.run_fixed(guess, &Constraint::Fluence(fluence.clone()), Some(filter), cfg)
        }
        Scheme::TimeDependent { constraint, filter, .. } => ctx.run_fixed(guess, constraint, filter.as_ref(), cfg),
    }
}

fn with_scheme(cfg: &OptimizerConfig, scheme: Scheme) -> OptimizerConfig {
    OptimizerConfig { scheme, ..cfg.clone() }
}

/// Standard two-sided feedback scheme with penalty factors `alpha`.
pub fn run_standard<D: Dynamics + ?Sized>(sys: &D, problem: &Problem, alpha: &[f64], cfg: &OptimizerConfig) -> Result<Outcome> {
    optimize(sys, problem, &with_scheme(cfg, Scheme::Standard { alpha: alpha.to_vec() }))
}

/// Projection scheme started backward from `φ_f`.
pub fn run_rapid_projection<D: Dynamics + ?Sized>(
    sys: &D,
    problem: &Problem,
    alpha: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Outcome> {
    optimize(sys, problem, &with_scheme(cfg, Scheme::RapidProjection { alpha: alpha.to_vec() }))
}

/// Fixed-fluence scheme with `α` as Lagrange multiplier.
pub fn run_fluence_fixed<D: Dynamics + ?Sized>(
    sys: &D,
    problem: &Problem,
    fluence: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Outcome> {
    optimize(sys, problem, &with_scheme(cfg, Scheme::FluenceFixed { fluence: fluence.to_vec() }))
}

/// Filtered scheme, in penalty or fixed-fluence mode.
pub fn run_filtered<D: Dynamics + ?Sized>(
    sys: &D,
    problem: &Problem,
    filter: &FieldFilter,
    constraint: &Constraint,
    cfg: &OptimizerConfig,
) -> Result<Outcome> {
    let scheme = match constraint {
        Constraint::Penalty(alpha) => Scheme::Filtered { filter: filter.clone(), alpha: alpha.clone() },
        Constraint::Fluence(fluence) => Scheme::FilteredFluence { filter: filter.clone(), fluence: fluence.clone() },
    };
    optimize(sys, problem, &with_scheme(cfg, scheme))
}

/// Time-dependent target scheme with `η`/`ξ` mixing, or the constrained variant
/// when a filter or a fixed fluence is given.
pub fn run_time_dependent<D: Dynamics + ?Sized>(
    sys: &D,
    problem: &Problem,
    eta: f64,
    xi: f64,
    constraint: &Constraint,
    filter: Option<&FieldFilter>,
    cfg: &OptimizerConfig,
) -> Result<Outcome> {
    let scheme = Scheme::TimeDependent { eta, xi, constraint: constraint.clone(), filter: filter.cloned() };
    optimize(sys, problem, &with_scheme(cfg, scheme))
}

/// Independent runs, concurrent under the `parallel` feature, results in input order.
pub fn sweep<D: Dynamics + ?Sized>(sys: &D, problem: &Problem, configs: &[OptimizerConfig]) -> Vec<Result<Outcome>> {
    crate::par::map(configs, |cfg| optimize(sys, problem, cfg))
}

/// Per-run propagation state.
struct Ctx<'a, D: Dynamics + ?Sized> {
    sys: &'a D,
    problem: &'a Problem,
    tg: TimeGrid,
    space: Space,
    weight: Option<Vec<f64>>,
    stepper: Box<dyn Stepper + 'a>,
    buf: Option<Trajectory>,
    norm0: f64,
    norm_tol: f64,
    e: Vec<f64>,
}

/// Field rule used while propagating `χ` backward.
enum BackRule<'r> {
    /// `(1−η) ε_old − (η/α) Im⟨χ|μ|Ψ⟩`.
    Mixed { eta: f64, alpha: &'r [f64] },
    /// `−(1/α) Im(⟨Ψ|χ⟩⟨χ|μ|Ψ⟩)` starting from `φ_f`.
    Projection { alpha: &'r [f64], phi: &'r [C64] },
}

/// Field rule used while propagating `Ψ` forward.
enum FwdRule<'r> {
    /// Use the field as given.
    Fixed,
    /// `(1−ξ) ε̃ − (ξ/α) Im⟨χ|μ|Ψ⟩` with `χ` from the preceding backward pass.
    Mixed { xi: f64, alpha: &'r [f64], tilde: &'r ControlField, old: &'r ControlField, chi0: &'r [C64] },
    /// `−(1/α) Im(⟨Ψ|χ⟩⟨χ|μ|Ψ⟩)`.
    Projection { alpha: &'r [f64], back: &'r ControlField, chi0: &'r [C64] },
}

struct Backward {
    chi0: Vec<C64>,
    /// `Ψ(0)` regenerated backward in replay mode.
    psi_rec0: Option<Vec<C64>>,
}

impl<'a, D: Dynamics + ?Sized> Ctx<'a, D> {
    fn new(sys: &'a D, problem: &'a Problem, weight: Option<Vec<f64>>, stored: bool, norm_tol: f64) -> Self {
        let tg = problem.tg;
        let space = sys.space();
        Self {
            sys,
            problem,
            tg,
            space,
            weight,
            stepper: sys.stepper(tg.dt()),
            buf: stored.then(|| Trajectory::new(space, tg.n_steps() + 1)),
            norm0: problem.psi0.norm_sqr(),
            norm_tol,
            e: vec![0.0; sys.n_polarizations()],
        }
    }

    fn operator_target(&self) -> bool {
        self.problem.target.kind.is_operator() || matches!(self.problem.target.kind, TargetKind::PhaseFixedOverlap(_))
    }

    fn kind(&self) -> &TargetKind {
        &self.problem.target.kind
    }

    fn m(&self) -> usize {
        self.e.len()
    }

    /// Trapezoid half-weight `dt w_i / (2T)` of the source at `t_i`.
    fn half_weight(&self, i: usize) -> f64 {
        match &self.weight {
            Some(w) => 0.5 * self.tg.dt() / self.tg.t_final() * w[i],
            None => 0.0,
        }
    }

    /// `h_i Ô(t_i) ψ` into `out`; zero when the weight vanishes.
    fn source(&self, i: usize, psi: &[C64], out: &mut [C64]) -> Result<()> {
        let h = self.half_weight(i);
        if h == 0.0 {
            out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            return Ok(());
        }
        self.kind().apply_into(self.space, psi, self.tg.t(i), out)?;
        out.iter_mut().for_each(|z| *z *= h);
        Ok(())
    }

    fn yield_term(&self, i: usize, psi: &[C64]) -> Result<f64> {
        match &self.weight {
            Some(w) if w[i] != 0.0 => Ok(trapezoid(&self.tg, i) * w[i] * self.kind().yield_at(self.space, psi, self.tg.t(i))?),
            Some(_) => Ok(0.0),
            None if i == self.tg.n_steps() => self.kind().yield_at(self.space, psi, self.tg.t_final()),
            None => Ok(0.0),
        }
    }

    fn check_norm(&self, psi: &[C64]) -> Result<()> {
        let got = norm_sqr_slice(self.space.measure(), psi);
        if (got - self.norm0).abs() > self.norm_tol * self.norm0.max(1e-300) {
            return Err(Error::NormLoss { expected: self.norm0, got });
        }
        Ok(())
    }

    fn step(&mut self, psi: &mut [C64], field: &ControlField, i: usize, dir: Direction) {
        field.sample_into(i, &mut self.e);
        self.stepper.step(psi, &self.e, dir);
    }

    fn step_values(&mut self, psi: &mut [C64], values: &[f64], dir: Direction) {
        self.stepper.step(psi, values, dir);
    }

    /// Forward pass from `Ψ(0)`; fills `field` unless the rule is fixed and
    /// stores `Ψ` in place. Returns `(J1, Ψ(T))`.
    fn forward(&mut self, rule: &FwdRule, field: &mut ControlField) -> Result<(f64, Vec<C64>)> {
        let n = self.tg.n_steps();
        let dim = self.space.dim();
        let m = self.m();
        let mut psi = self.problem.psi0.amplitudes().to_vec();
        // Replay state: χ regenerated forward, and Ψ⁽ᵏ⁾ for the sources.
        let mut chi: Vec<C64> = match rule {
            FwdRule::Mixed { chi0, .. } | FwdRule::Projection { chi0, .. } => chi0.to_vec(),
            FwdRule::Fixed => Vec::new(),
        };
        let replay = self.buf.is_none();
        let td = self.weight.is_some();
        let mut old_psi = if replay && td && matches!(rule, FwdRule::Mixed { .. }) {
            Some(self.problem.psi0.amplitudes().to_vec())
        } else {
            None
        };
        let mut src = vec![C64::new(0.0, 0.0); dim];
        let mut vals = vec![0.0; m];
        let mut j1 = 0.0;
        for i in 0..=n {
            j1 += self.yield_term(i, &psi)?;
            if i == n {
                break;
            }
            let chi_i: &[C64] = match &self.buf {
                Some(b) if !matches!(rule, FwdRule::Fixed) => b.state(i),
                _ => &chi,
            };
            match rule {
                FwdRule::Fixed => field.sample_into(i, &mut vals),
                FwdRule::Mixed { xi, alpha, tilde, .. } => {
                    for j in 0..m {
                        let w = self.sys.dipole_braket(j, chi_i, &psi).im;
                        let v = (1.0 - xi) * tilde.component(j)[i] - xi / alpha[j] * w;
                        vals[j] = v;
                        field.component_mut(j)[i] = v;
                    }
                }
                FwdRule::Projection { alpha, .. } => {
                    let ov = braket(self.space.measure(), &psi, chi_i);
                    for j in 0..m {
                        let v = -(ov * self.sys.dipole_braket(j, chi_i, &psi)).im / alpha[j];
                        vals[j] = v;
                        field.component_mut(j)[i] = v;
                    }
                }
            }
            if let Some(b) = self.buf.as_mut() {
                b.state_mut(i).copy_from_slice(&psi);
            }
            self.step_values(&mut psi, &vals, Direction::Forward);
            if replay {
                match rule {
                    FwdRule::Fixed => {}
                    FwdRule::Projection { back, .. } => self.step(&mut chi, back, i, Direction::Forward),
                    FwdRule::Mixed { tilde, old, .. } => match old_psi.as_mut() {
                        None => self.step(&mut chi, tilde, i, Direction::Forward),
                        Some(op) => {
                            // χ̂_{i+1} = U(χ̂_i − h_i s_i) − h_{i+1} s_{i+1}
                            self.source(i, op, &mut src)?;
                            chi.iter_mut().zip(&src).for_each(|(c, s)| *c -= s);
                            self.step(&mut chi, tilde, i, Direction::Forward);
                            self.step(op, old, i, Direction::Forward);
                            self.source(i + 1, op, &mut src)?;
                            chi.iter_mut().zip(&src).for_each(|(c, s)| *c -= s);
                        }
                    },
                }
            }
        }
        if let Some(b) = self.buf.as_mut() {
            b.state_mut(n).copy_from_slice(&psi);
        }
        self.check_norm(&psi)?;
        Ok((j1, psi))
    }

    /// Backward pass for `χ` with a self-consistent field written into `tilde`.
    /// `old` is the field that produced the current `Ψ` trajectory and `psi_t`
    /// its final state. Stored `Ψ` slots are overwritten with `χ`.
    fn backward(&mut self, rule: &BackRule, old: &ControlField, psi_t: &[C64], tilde: &mut ControlField) -> Result<Backward> {
        let n = self.tg.n_steps();
        let dim = self.space.dim();
        let m = self.m();
        let mut chi = match rule {
            BackRule::Projection { phi, .. } => phi.to_vec(),
            BackRule::Mixed { .. } if self.weight.is_none() => {
                let mut c = vec![C64::new(0.0, 0.0); dim];
                self.kind().apply_into(self.space, psi_t, self.tg.t_final(), &mut c)?;
                c
            }
            BackRule::Mixed { .. } => vec![C64::new(0.0, 0.0); dim],
        };
        let td = self.weight.is_some() && matches!(rule, BackRule::Mixed { .. });
        let mut psi_cur = psi_t.to_vec();
        let mut src = vec![C64::new(0.0, 0.0); dim];
        if td {
            self.source(n, psi_t, &mut src)?;
        }
        let mut vals = vec![0.0; m];
        for i in (1..=n).rev() {
            let psi_i: &[C64] = match &self.buf {
                Some(b) => b.state(i),
                None => &psi_cur,
            };
            match rule {
                BackRule::Mixed { eta, alpha } => {
                    for j in 0..m {
                        let w = self.sys.dipole_braket(j, &chi, psi_i).im;
                        vals[j] = (1.0 - eta) * old.component(j)[i - 1] - eta / alpha[j] * w;
                    }
                }
                BackRule::Projection { alpha, .. } => {
                    let ov = braket(self.space.measure(), psi_i, &chi);
                    for j in 0..m {
                        vals[j] = -(ov * self.sys.dipole_braket(j, &chi, psi_i)).im / alpha[j];
                    }
                }
            }
            for j in 0..m {
                tilde.component_mut(j)[i - 1] = vals[j];
            }
            if let Some(b) = self.buf.as_mut() {
                b.state_mut(i).copy_from_slice(&chi);
            }
            if td {
                // src holds h_i s_i from the previous point.
                chi.iter_mut().zip(&src).for_each(|(c, s)| *c += s);
            }
            self.step_values(&mut chi, &vals, Direction::Backward);
            if self.buf.is_none() {
                self.step(&mut psi_cur, old, i - 1, Direction::Backward);
            }
            if td {
                let psi_prev: &[C64] = match &self.buf {
                    Some(b) => b.state(i - 1),
                    None => &psi_cur,
                };
                self.source(i - 1, psi_prev, &mut src)?;
                chi.iter_mut().zip(&src).for_each(|(c, s)| *c += s);
            }
        }
        if let Some(b) = self.buf.as_mut() {
            b.state_mut(0).copy_from_slice(&chi);
        }
        Ok(Backward { chi0: chi, psi_rec0: self.buf.is_none().then_some(psi_cur) })
    }

    /// Pure backward propagation of `φ_f` with a fixed field, storing `χ`.
    fn backward_fixed(&mut self, phi: &[C64], field: &ControlField) -> Vec<C64> {
        let n = self.tg.n_steps();
        let mut chi = phi.to_vec();
        for i in (1..=n).rev() {
            if let Some(b) = self.buf.as_mut() {
                b.state_mut(i).copy_from_slice(&chi);
            }
            self.step(&mut chi, field, i - 1, Direction::Backward);
        }
        if let Some(b) = self.buf.as_mut() {
            b.state_mut(0).copy_from_slice(&chi);
        }
        chi
    }

    fn j3(&self, back: &Backward) -> f64 {
        match &back.psi_rec0 {
            None => 0.0,
            Some(p) => {
                let diff: Vec<C64> = p.iter().zip(self.problem.psi0.amplitudes()).map(|(a, b)| a - b).collect();
                -2.0 * braket(self.space.measure(), &back.chi0, &diff).re
            }
        }
    }

    fn run_feedback(&mut self, guess: ControlField, alpha: &[f64], eta: f64, xi: f64, cfg: &OptimizerConfig) -> Result<Outcome> {
        let mut tracker = Tracker::new(cfg);
        let mut field = guess;
        let (j1, mut psi_t) = self.forward(&FwdRule::Fixed, &mut field)?;
        let a = alpha.to_vec();
        tracker.push(j1, penalty_j2(&field, alpha), &field, a.clone());
        let mut tilde = field.clone();
        let mut next = field.clone();
        while !tracker.done() {
            let back = self.backward(&BackRule::Mixed { eta, alpha }, &field, &psi_t, &mut tilde)?;
            tracker.set_j3(self.j3(&back));
            let rule = FwdRule::Mixed { xi, alpha, tilde: &tilde, old: &field, chi0: &back.chi0 };
            let (j1, pt) = self.forward(&rule, &mut next)?;
            psi_t = pt;
            std::mem::swap(&mut field, &mut next);
            tracker.push(j1, penalty_j2(&field, alpha), &field, a.clone());
        }
        Ok(tracker.finish(field, self.buf.is_some()))
    }

    fn run_rapid(&mut self, guess: ControlField, phi: &[C64], alpha: &[f64], cfg: &OptimizerConfig) -> Result<Outcome> {
        let mut tracker = Tracker::new(cfg);
        let a = alpha.to_vec();
        let j1 = self.kind().yield_at(
            self.space,
            propagate(self.sys, &self.problem.psi0, &guess, &self.tg, Direction::Forward, None)?.amplitudes(),
            self.tg.t_final(),
        )?;
        tracker.push(j1, penalty_j2(&guess, alpha), &guess, a.clone());
        let mut back_field = guess.clone();
        let mut chi0 = self.backward_fixed(phi, &back_field);
        let mut fwd_field = guess;
        while !tracker.done() {
            let rule = FwdRule::Projection { alpha, back: &back_field, chi0: &chi0 };
            let (j1, psi_t) = self.forward(&rule, &mut fwd_field)?;
            tracker.push(j1, penalty_j2(&fwd_field, alpha), &fwd_field, a.clone());
            if tracker.done() {
                break;
            }
            let back = self.backward(&BackRule::Projection { alpha, phi }, &fwd_field, &psi_t, &mut back_field)?;
            tracker.set_j3(self.j3(&back));
            chi0 = back.chi0;
        }
        Ok(tracker.finish(fwd_field, self.buf.is_some()))
    }

    fn run_fixed(
        &mut self,
        guess: ControlField,
        constraint: &Constraint,
        filter: Option<&FieldFilter>,
        cfg: &OptimizerConfig,
    ) -> Result<Outcome> {
        let m = self.m();
        let mut tracker = Tracker::new(cfg);
        let mut field = guess;
        let mut alpha: Vec<f64> = match constraint {
            Constraint::Penalty(a) => a.clone(),
            Constraint::Fluence(e0) => {
                let f = field.fluence();
                let mut a = Vec::with_capacity(m);
                for j in 0..m {
                    if !(f[j] > 0.0) {
                        return Err(Error::DegenerateField(format!(
                            "fixed-fluence scheme needs a nonzero initial guess (polarization {j})"
                        )));
                    }
                    a.push((f[j] / e0[j]).sqrt());
                    let c = (e0[j] / f[j]).sqrt();
                    field.component_mut(j).iter_mut().for_each(|v| *v *= c);
                }
                a
            }
        };
        let j2 = |f: &ControlField, a: &[f64]| match constraint {
            Constraint::Penalty(p) => penalty_j2(f, p),
            Constraint::Fluence(e0) => -f.fluence().iter().zip(a).zip(e0).map(|((x, a), e)| a * (x - e)).sum::<f64>(),
        };
        let mut tilde = field.clone();
        loop {
            let (j1, psi_t) = self.forward(&FwdRule::Fixed, &mut field)?;
            tracker.push(j1, j2(&field, &alpha), &field, alpha.clone());
            if tracker.done() {
                break;
            }
            let back = self.backward(&BackRule::Mixed { eta: 1.0, alpha: &alpha }, &field, &psi_t, &mut tilde)?;
            tracker.set_j3(self.j3(&back));
            let bar = match filter {
                Some(f) => apply_filter(f, &tilde)?,
                None => tilde.clone(),
            };
            match constraint {
                Constraint::Penalty(_) => field = bar,
                Constraint::Fluence(e0) => {
                    let fb = bar.fluence();
                    let mut next = bar;
                    for j in 0..m {
                        if !(fb[j] > 0.0) {
                            return Err(Error::DegenerateField(format!(
                                "candidate field vanished for polarization {j}; the fluence cannot be restored"
                            )));
                        }
                        let a_next = (alpha[j] * alpha[j] * fb[j] / e0[j]).sqrt();
                        let c = alpha[j] / a_next;
                        next.component_mut(j).iter_mut().for_each(|v| *v *= c);
                        // Exact rescale to E0 against rounding.
                        let got: f64 = next.component(j).iter().map(|v| v * v).sum::<f64>() * next.dt();
                        let fix = (e0[j] / got).sqrt();
                        next.component_mut(j).iter_mut().for_each(|v| *v *= fix);
                        alpha[j] = a_next;
                    }
                    field = next;
                }
            }
        }
        Ok(tracker.finish(field, self.buf.is_some()))
    }
}

fn penalty_j2(field: &ControlField, alpha: &[f64]) -> f64 {
    -field.fluence().iter().zip(alpha).map(|(f, a)| a * f).sum::<f64>()
}

/// Convergence bookkeeping and best-iterate memory.
struct Tracker {
    record: ConvergenceRecord,
    best_field: Option<ControlField>,
    best_j1: f64,
    threshold: f64,
    max_iters: usize,
    converged: bool,
}

impl Tracker {
    fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            record: ConvergenceRecord::default(),
            best_field: None,
            best_j1: f64::NEG_INFINITY,
            threshold: cfg.threshold,
            max_iters: cfg.max_iters,
            converged: false,
        }
    }

    fn push(&mut self, j1: f64, j2: f64, field: &ControlField, alpha: Vec<f64>) {
        let k = self.record.iterations.len();
        let j = j1 + j2;
        if k == 1 && j1 < 1e-8 {
            log::warn!("yield {j1:e} after the first iteration; the initial guess may sit at a stationary point");
        }
        if let Some(prev) = self.record.iterations.last() {
            if (j - prev.j).abs() < self.threshold {
                self.converged = true;
            }
        }
        if j1 > self.best_j1 || self.best_field.is_none() {
            self.best_j1 = j1;
            self.best_field = Some(field.clone());
            self.record.best_iteration = k;
        }
        log::debug!("iteration {k}: J1 = {j1:.10}, J = {j:.10}");
        self.record.iterations.push(IterationRecord { iteration: k, j1, j2, j3: 0.0, j, fluence: field.fluence(), alpha });
    }

    fn set_j3(&mut self, j3: f64) {
        if let Some(r) = self.record.iterations.last_mut() {
            r.j3 = j3;
            r.j = r.j1 + r.j2 + j3;
        }
    }

    fn done(&self) -> bool {
        self.converged || self.record.iterations.len() > self.max_iters
    }

    fn finish(self, last_field: ControlField, stored: bool) -> Outcome {
        Outcome {
            best_field: self.best_field.expect("at least one iterate"),
            best_j1: self.best_j1,
            best_iteration: self.record.best_iteration,
            last_field,
            record: self.record,
            converged: self.converged,
            stored,
        }
    }
}
