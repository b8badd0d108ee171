//! Subcommand pipelines: build the system, solve, write artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use qoct::controllability::{lie_closure, NLevelControlSystem};
use qoct::filters::{spectrum, FieldFilter};
use qoct::optimizer::{optimize, Constraint, InitialGuess, OptimizerConfig, Outcome, Problem, Scheme, Storage};
use qoct::propagator::{imaginary_time_eigenstates, propagate, Direction, Dynamics, EigenOptions, TimeGrid};
use qoct::qsystem::{braket, GridSystem, NLevelSystem, Potential, SpatialGrid, Wavefunction};
use qoct::targets::{
    build_follower_path, follower_weight_profile, FollowerCoefficients, FollowerPath, TargetKind, TargetSpec, WeightFunction,
};
use qoct::twolevel::{pi_pulse_yield, TwoLevelSystem};
use qoct::ControlField;

use crate::config::{
    FilterConfig, FilterKindConfig, RunConfig, SchemeConfig, StorageConfig, SystemKind, TargetKindConfig, WeightConfig,
};

/// Environment variable overriding the stored-trajectory budget (complex amplitudes).
pub const BUDGET_ENV: &str = "QOCTL_TRAJECTORY_BUDGET";

/// Rank tolerance of the controllability test.
const RANK_TOL: f64 = 1e-9;

/// Writes one artifact with the shared two-line header.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
}

impl Artifacts {
    pub fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash = cfg.hash()?;
        let a = Self { dir: dir.to_path_buf(), hash };
        std::fs::write(a.dir.join("config.toml"), format!("# config-sha256 {}\n{}", a.hash, cfg.to_toml()?))?;
        Ok(a)
    }

    pub fn write(&self, name: &str, columns: &[&str], body: &str) -> Result<()> {
        let text = format!("# qoctl {name} config-sha256 {}\n# {}\n{body}", self.hash, columns.join("\t"));
        let path = self.dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let cells: Vec<String> = values.into_iter().map(num).collect();
    out.push_str(&cells.join("\t"));
    out.push('\n');
}

/// A configured system with its reference basis and energies.
pub struct Built {
    pub dynamics: Box<dyn Dynamics>,
    pub grid: Option<SpatialGrid>,
    pub basis: Vec<Wavefunction>,
    pub energies: Vec<f64>,
}

fn nlevel_basis(sys: &NLevelSystem, n_states: usize) -> Result<(Vec<Wavefunction>, Vec<f64>)> {
    let n = sys.n_levels();
    let k = n_states.min(n);
    let basis = (0..k).map(|i| Wavefunction::level(n, i)).collect::<qoct::Result<Vec<_>>>()?;
    let energies = (0..k).map(|i| sys.h0()[(i, i)]).collect();
    Ok((basis, energies))
}

pub fn build_system(cfg: &RunConfig) -> Result<Built> {
    let s = &cfg.system;
    let potential = match s.kind {
        SystemKind::DoubleWell => Some(Potential::AsymmetricDoubleWell { b: s.b, omega0: s.omega0, beta: s.beta }),
        SystemKind::Harmonic => Some(Potential::Harmonic { omega: s.omega }),
        SystemKind::Tabulated => {
            let path = s.potential_file.as_ref().ok_or_else(|| anyhow!("missing system.potential_file"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(Potential::parse_table(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        SystemKind::TwoLevel | SystemKind::Matrices => None,
    };
    if let Some(pot) = potential {
        let grid = SpatialGrid::with_spacing(s.x_max, s.dx)?;
        let sys = GridSystem::new(grid, &pot);
        let opts = EigenOptions { dtau: s.eigen_dtau, tol: s.eigen_tol, ..EigenOptions::default() };
        let eig = imaginary_time_eigenstates(&sys, s.n_states, &opts).context("eigen-solve")?;
        return Ok(Built { dynamics: Box::new(sys), grid: Some(grid), basis: eig.states, energies: eig.energies });
    }
    let sys = match s.kind {
        SystemKind::TwoLevel => TwoLevelSystem::new(s.omega_a, s.omega_b, s.mu).as_nlevel(),
        _ => {
            let path = s.matrix_file.as_ref().ok_or_else(|| anyhow!("missing system.matrix_file"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let ctl = NLevelControlSystem::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            let (h0, hs) = ctl.to_real().ok_or_else(|| anyhow!("propagation needs real symmetric matrices"))?;
            NLevelSystem::new(h0, hs.into_iter().map(|h| -h).collect())?
        }
    };
    let (basis, energies) = nlevel_basis(&sys, s.n_states)?;
    Ok(Built { dynamics: Box::new(sys), grid: None, basis, energies })
}

pub fn time_grid(cfg: &RunConfig) -> Result<TimeGrid> {
    Ok(TimeGrid::new(cfg.system.t_final, cfg.system.dt)?)
}

fn target(cfg: &RunConfig, built: &Built, tg: &TimeGrid) -> Result<TargetSpec> {
    let t = &cfg.target;
    let n = built.basis.len();
    if t.initial >= n || t.state >= n {
        bail!("target states {} and {} must be below the {n} available levels", t.initial, t.state);
    }
    if t.kind == TargetKindConfig::Follower {
        let basis = built.basis[..5.min(built.basis.len())].to_vec();
        let energies = built.energies[..basis.len()].to_vec();
        return Ok(match &t.coefficient_file {
            None => build_follower_path(basis, energies, tg)?,
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let coeffs = FollowerCoefficients::parse_table(&text)?;
                let path = FollowerPath::new(basis, energies, coeffs, tg.t_final())?;
                let w = tg.times().iter().map(|&x| follower_weight_profile(x, tg.t_final())).collect();
                TargetSpec { kind: TargetKind::Follower(path), weight: WeightFunction::sampled(w, tg)? }
            }
        });
    }
    let kind = match t.kind {
        TargetKindConfig::Projection => TargetKind::Projection(built.basis[t.state].clone()),
        TargetKindConfig::Identity => TargetKind::Identity,
        TargetKindConfig::LocalDensity => {
            let grid = built.grid.ok_or_else(|| anyhow!("local_density targets need a grid system"))?;
            TargetKind::local_density(grid, t.x0, t.sigma)?
        }
        TargetKindConfig::Follower => unreachable!(),
    };
    let weight = match t.weight {
        WeightConfig::Final => WeightFunction::FinalTime,
        WeightConfig::Uniform => WeightFunction::Uniform,
        WeightConfig::Follower => {
            WeightFunction::sampled(tg.times().iter().map(|&x| follower_weight_profile(x, tg.t_final())).collect(), tg)?
        }
    };
    Ok(TargetSpec { kind, weight })
}

fn filter(f: &FilterConfig, energies: &[f64]) -> Result<FieldFilter> {
    let mut centers = f.centers.clone();
    for [a, b] in &f.transitions {
        if a.max(b) >= &energies.len() {
            bail!("filter transition [{a}, {b}] needs {} levels, the system has {}", a.max(b) + 1, energies.len());
        }
        centers.push((energies[*b] - energies[*a]).abs());
    }
    Ok(match f.kind {
        FilterKindConfig::GaussianPass => FieldFilter::GaussianPass { centers, gamma: f.gamma },
        FilterKindConfig::GaussianStop => FieldFilter::GaussianStop { centers, gamma: f.gamma },
        FilterKindConfig::Band => FieldFilter::Band { lo: f.lo, hi: f.hi },
        FilterKindConfig::NearestBin => FieldFilter::NearestBin { center: centers.first().copied().unwrap_or(0.0) },
    })
}

/// Reads `t ε_x [ε_y]` rows written by a previous run.
pub fn read_field(path: &Path, tg: &TimeGrid) -> Result<ControlField> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut comps: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: line {}", path.display(), ln + 1))?;
        if vals.len() < 2 {
            bail!("{}: line {} needs a time and at least one component", path.display(), ln + 1);
        }
        if comps.is_empty() {
            comps = vec![Vec::new(); vals.len() - 1];
        }
        if vals.len() - 1 != comps.len() {
            bail!("{}: line {} has a different column count", path.display(), ln + 1);
        }
        for (c, v) in comps.iter_mut().zip(&vals[1..]) {
            c.push(*v);
        }
    }
    let field = ControlField::new(tg.dt(), comps)?;
    if field.n_samples() != tg.n_steps() {
        bail!("{}: {} samples for {} time steps", path.display(), field.n_samples(), tg.n_steps());
    }
    Ok(field)
}

pub fn optimizer_config(cfg: &RunConfig, energies: &[f64], tg: &TimeGrid, max_iters: Option<usize>) -> Result<OptimizerConfig> {
    let o = &cfg.optimizer;
    let flt = o.filter.as_ref().map(|f| filter(f, energies)).transpose()?;
    let need_filter = || flt.clone().ok_or_else(|| anyhow!("optimizer.filter is required"));
    let scheme = match o.scheme {
        SchemeConfig::Standard => Scheme::Standard { alpha: o.alpha.clone() },
        SchemeConfig::Rapid => Scheme::RapidProjection { alpha: o.alpha.clone() },
        SchemeConfig::Fluence => Scheme::FluenceFixed { fluence: o.fluence.clone() },
        SchemeConfig::Filtered => Scheme::Filtered { filter: need_filter()?, alpha: o.alpha.clone() },
        SchemeConfig::FilteredFluence => Scheme::FilteredFluence { filter: need_filter()?, fluence: o.fluence.clone() },
        SchemeConfig::TimeDependent => Scheme::TimeDependent {
            eta: o.eta,
            xi: o.xi,
            constraint: if o.fluence.is_empty() {
                Constraint::Penalty(o.alpha.clone())
            } else {
                Constraint::Fluence(o.fluence.clone())
            },
            filter: flt.clone(),
        },
    };
    let guess = match &o.guess_file {
        Some(path) => InitialGuess::Field(read_field(path, tg)?),
        None if o.guess == 0.0 => InitialGuess::Zero,
        None => InitialGuess::Constant(o.guess),
    };
    let mut oc = OptimizerConfig::new(scheme, guess, max_iters.unwrap_or(o.max_iters));
    oc.threshold = o.threshold;
    oc.storage = match o.storage {
        StorageConfig::Auto => Storage::Auto,
        StorageConfig::Stored => Storage::Stored,
        StorageConfig::Replay => Storage::Replay,
    };
    if let Ok(v) = std::env::var(BUDGET_ENV) {
        oc.budget = v.trim().parse().with_context(|| format!("{BUDGET_ENV}={v:?} is not a count"))?;
    }
    oc.validate()?;
    Ok(oc)
}

pub fn eigen(cfg: &RunConfig, out: &Artifacts) -> Result<()> {
    if cfg.system.kind == SystemKind::TwoLevel || cfg.system.kind == SystemKind::Matrices {
        bail!("eigen needs a grid system (double_well, harmonic or tabulated)");
    }
    let built = build_system(cfg)?;
    let mut body = String::new();
    for (n, e) in built.energies.iter().enumerate() {
        let _ = write!(body, "{n}\t");
        row(&mut body, [*e, e - built.energies[0]]);
    }
    out.write("energies.tsv", &["n", "E_n", "E_n-E_0"], &body)?;
    let mut body = String::new();
    for j in 0..built.dynamics.n_polarizations() {
        for m in 0..built.basis.len() {
            for n in m..built.basis.len() {
                let d = built.dynamics.dipole_braket(j, built.basis[m].amplitudes(), built.basis[n].amplitudes()).re;
                let _ = write!(body, "{j}\t{m}\t{n}\t");
                row(&mut body, [d]);
            }
        }
    }
    out.write("dipoles.tsv", &["j", "m", "n", "mu_mn"], &body)?;
    Ok(())
}

/// Yield summary of one optimization run.
pub struct RunSummary {
    pub best_j1: f64,
}

pub fn run_optimize(cfg: &RunConfig, out: &Artifacts, max_iters: Option<usize>) -> Result<RunSummary> {
    let start = Instant::now();
    let built = build_system(cfg)?;
    let tg = time_grid(cfg)?;
    let spec = target(cfg, &built, &tg)?;
    let oc = optimizer_config(cfg, &built.energies, &tg, max_iters)?;
    let problem = Problem { psi0: built.basis[cfg.target.initial].clone(), target: spec, tg };
    let outcome = optimize(built.dynamics.as_ref(), &problem, &oc).context("optimization")?;
    write_outcome(cfg, out, &built, &problem, &outcome)?;
    let best = outcome.record.best().ok_or_else(|| anyhow!("no iterations recorded"))?;
    let mut s = String::new();
    let _ = writeln!(s, "best_j1\t{}", num(outcome.best_j1));
    let _ = writeln!(s, "best_iteration\t{}", outcome.best_iteration);
    let _ = writeln!(s, "best_j\t{}", num(best.j));
    for (j, e) in outcome.best_field.fluence().iter().enumerate() {
        let _ = writeln!(s, "fluence_{j}\t{}", num(*e));
    }
    let _ = writeln!(s, "iterations\t{}", outcome.record.iterations.len() - 1);
    let _ = writeln!(s, "converged\t{}", outcome.converged);
    let _ = writeln!(s, "stored_trajectory\t{}", outcome.stored);
    let _ = writeln!(s, "wall_seconds\t{:.3}", start.elapsed().as_secs_f64());
    out.write("summary.txt", &["key", "value"], &s)?;
    Ok(RunSummary { best_j1: outcome.best_j1 })
}

fn write_outcome(cfg: &RunConfig, out: &Artifacts, built: &Built, problem: &Problem, outcome: &Outcome) -> Result<()> {
    let tg = &problem.tg;
    let field = &outcome.best_field;
    let np = field.n_polarizations();
    let stride = cfg.output.field_stride;
    let mut body = String::new();
    let mut e = vec![0.0; np];
    for i in (0..field.n_samples()).step_by(stride) {
        field.sample_into(i, &mut e);
        row(&mut body, std::iter::once(tg.t(i)).chain(e.iter().copied()));
    }
    let cols: Vec<String> = std::iter::once("t".to_string()).chain((0..np).map(|j| format!("eps_{j}"))).collect();
    out.write("field.tsv", &cols.iter().map(String::as_str).collect::<Vec<_>>(), &body)?;

    let spectra = (0..np).map(|j| spectrum(field, j)).collect::<qoct::Result<Vec<_>>>()?;
    let powers: Vec<Vec<f64>> = spectra.iter().map(|s| s.power()).collect();
    let mut body = String::new();
    for (k, w) in spectra[0].omega.iter().enumerate() {
        if *w >= 0.0 {
            row(&mut body, std::iter::once(*w).chain(powers.iter().map(|p| p[k])));
        }
    }
    let cols: Vec<String> = std::iter::once("omega".to_string()).chain((0..np).map(|j| format!("power_{j}"))).collect();
    out.write("spectrum.tsv", &cols.iter().map(String::as_str).collect::<Vec<_>>(), &body)?;

    let measure = built.dynamics.space().measure();
    let ostride = cfg.output.occupation_stride;
    let n = tg.n_steps();
    let mut body = String::new();
    let mut tap = |i: usize, t: f64, psi: &[qoct::C64]| {
        if i % ostride == 0 || i == n {
            let occ = built.basis.iter().map(|b| braket(measure, b.amplitudes(), psi).norm_sqr());
            row(&mut body, std::iter::once(t).chain(occ));
        }
    };
    propagate(built.dynamics.as_ref(), &problem.psi0, field, tg, Direction::Forward, Some(&mut tap))?;
    let cols: Vec<String> = std::iter::once("t".to_string()).chain((0..built.basis.len()).map(|k| format!("occ_{k}"))).collect();
    out.write("occupations.tsv", &cols.iter().map(String::as_str).collect::<Vec<_>>(), &body)?;

    let mut body = String::new();
    for r in &outcome.record.iterations {
        let _ = write!(body, "{}\t", r.iteration);
        row(&mut body, [r.j1, r.j2, r.j3, r.j].into_iter().chain(r.fluence.iter().copied()).chain(r.alpha.iter().copied()));
    }
    let mut cols = vec!["iteration".to_string(), "j1".into(), "j2".into(), "j3".into(), "j".into()];
    cols.extend((0..np).map(|j| format!("fluence_{j}")));
    cols.extend((0..np).map(|j| format!("alpha_{j}")));
    out.write("convergence.tsv", &cols.iter().map(String::as_str).collect::<Vec<_>>(), &body)?;
    Ok(())
}

/// One row of the two-level comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelRow {
    pub t_final: f64,
    pub p_rwa: f64,
    pub e0_rwa: f64,
    /// Yield and fluence of the best optimal-control iterate.
    pub oct: Option<(f64, f64)>,
    /// Yield and fluence of the last iterate.
    pub oct_final: Option<(f64, f64)>,
}

pub fn twolevel_rows(cfg: &RunConfig, max_iters: Option<usize>) -> Result<Vec<TwoLevelRow>> {
    let s = &cfg.system;
    let tl = &cfg.twolevel;
    let sys = TwoLevelSystem::new(s.omega_a, s.omega_b, s.mu);
    let nl = sys.as_nlevel();
    let jobs: Vec<(f64, f64)> = tl
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, tl.penalties.get(k).copied().unwrap_or(1.0)))
        .collect();
    let rows = qoct::par::map(&jobs, |&(t_final, alpha)| -> Result<TwoLevelRow> {
        let tg = TimeGrid::new(t_final, tl.dt)?;
        let (p_rwa, e0_rwa) = pi_pulse_yield(&sys, &tg)?;
        let (oct, oct_final) = if tl.rwa_only {
            (None, None)
        } else {
            let problem = Problem {
                psi0: Wavefunction::level(2, 0)?,
                target: TargetSpec::final_time(TargetKind::Projection(Wavefunction::level(2, 1)?)),
                tg,
            };
            let mut oc = OptimizerConfig::new(
                Scheme::RapidProjection { alpha: vec![alpha] },
                InitialGuess::Constant(tl.guess),
                max_iters.unwrap_or(tl.max_iters),
            );
            oc.threshold = cfg.optimizer.threshold;
            let o = optimize(&nl, &problem, &oc).with_context(|| format!("optimization at T = {t_final}"))?;
            let last = o.record.last().expect("at least the guess is recorded");
            (Some((o.best_j1, o.best_field.fluence()[0])), Some((last.j1, last.fluence[0])))
        };
        Ok(TwoLevelRow { t_final, p_rwa, e0_rwa, oct, oct_final })
    });
    rows.into_iter().collect()
}

pub fn twolevel(cfg: &RunConfig, out: &Artifacts, max_iters: Option<usize>) -> Result<Vec<TwoLevelRow>> {
    let rows = twolevel_rows(cfg, max_iters)?;
    let mut body = String::new();
    for r in &rows {
        let (p, e) = r.oct.unwrap_or((f64::NAN, f64::NAN));
        let (pf, ef) = r.oct_final.unwrap_or((f64::NAN, f64::NAN));
        row(&mut body, [r.t_final, r.p_rwa, p, r.e0_rwa, e, pf, ef]);
    }
    out.write("twolevel.tsv", &["T", "P_RWA", "P_OCT", "E0_RWA", "E0_OCT", "P_OCT_final", "E0_OCT_final"], &body)?;
    Ok(rows)
}

/// Returns the verdict line.
pub fn controllability(cfg: &RunConfig, out: &Artifacts) -> Result<String> {
    let s = &cfg.system;
    let ctl = match s.kind {
        SystemKind::TwoLevel => NLevelControlSystem::two_level(s.omega_a, s.omega_b, s.mu),
        SystemKind::Matrices => {
            let path = s.matrix_file.as_ref().ok_or_else(|| anyhow!("missing system.matrix_file"))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            NLevelControlSystem::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        _ => bail!("controllability needs system.kind = \"two_level\" or \"matrices\""),
    };
    let basis = lie_closure(&ctl, RANK_TOL)?;
    let full = ctl.n_levels() * ctl.n_levels();
    let verdict = if basis.rank == full { "completely controllable" } else { "not controllable" };
    let line = format!("rank {} of {}: {}", basis.rank, full, verdict);
    let mut body = String::new();
    for (k, sv) in basis.singular_values().iter().enumerate() {
        let _ = write!(body, "{k}\t");
        row(&mut body, [*sv]);
    }
    out.write("singular_values.tsv", &["k", "sigma_k"], &body)?;
    out.write("controllability.txt", &["verdict"], &format!("{line}\n"))?;
    Ok(line)
}
