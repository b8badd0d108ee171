//! Lie-algebra rank test for complete controllability of N-level systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Drift `H0` and control Hamiltonians `H_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct NLevelControlSystem {
    h0: DMatrix<C64>,
    controls: Vec<DMatrix<C64>>,
}

fn check_hermitian(m: &DMatrix<C64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidParameter(format!("{what} must be {n}x{n}")));
    }
    let scale = m.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    for i in 0..n {
        for j in 0..=i {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!("{what} is not Hermitian at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

impl NLevelControlSystem {
    pub fn new(h0: DMatrix<C64>, controls: Vec<DMatrix<C64>>) -> Result<Self> {
        let n = h0.nrows();
        if n == 0 {
            return Err(Error::InvalidParameter("system needs at least one level".into()));
        }
        check_hermitian(&h0, n, "H0")?;
        for (m, h) in controls.iter().enumerate() {
            check_hermitian(h, n, &format!("H{}", m + 1))?;
        }
        Ok(Self { h0, controls })
    }

    pub fn from_real(h0: &DMatrix<f64>, controls: &[DMatrix<f64>]) -> Result<Self> {
        let c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
        Self::new(c(h0), controls.iter().map(c).collect())
    }

    /// Two levels `ω_a`, `ω_b` coupled by `−μ ε` with `ε = 1`.
    pub fn two_level(omega_a: f64, omega_b: f64, mu: f64) -> Self {
        let h0 = DMatrix::from_row_slice(2, 2, &[omega_a, 0.0, 0.0, omega_b]);
        let h1 = DMatrix::from_row_slice(2, 2, &[0.0, -mu, -mu, 0.0]);
        Self::from_real(&h0, &[h1]).expect("diagonal and symmetric")
    }

    pub fn n_levels(&self) -> usize {
        self.h0.nrows()
    }

    pub fn h0(&self) -> &DMatrix<C64> {
        &self.h0
    }

    pub fn controls(&self) -> &[DMatrix<C64>] {
        &self.controls
    }

    /// Real parts of `H0` and the `H_m`, if every imaginary part vanishes.
    pub fn to_real(&self) -> Option<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let re = |m: &DMatrix<C64>| m.iter().all(|z| z.im == 0.0).then(|| m.map(|z| z.re));
        Some((re(&self.h0)?, self.controls.iter().map(re).collect::<Option<Vec<_>>>()?))
    }

    /// Parses blocks of N rows separated by blank lines: `H0` first, then each `H_m`.
    /// Entries are real numbers or `re,im` pairs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks: Vec<Vec<Vec<C64>>> = vec![Vec::new()];
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                if !blocks.last().unwrap().is_empty() {
                    blocks.push(Vec::new());
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| parse_entry(tok).ok_or_else(|| Error::Parse(format!("line {}: bad entry {tok:?}", ln + 1))))
                .collect::<Result<Vec<_>>>()?;
            blocks.last_mut().unwrap().push(row);
        }
        blocks.retain(|b| !b.is_empty());
        if blocks.is_empty() {
            return Err(Error::Parse("no matrices found".into()));
        }
        let n = blocks[0].len();
        let mats = blocks
            .iter()
            .map(|b| {
                if b.len() != n || b.iter().any(|r| r.len() != n) {
                    return Err(Error::Parse(format!("every matrix must be {n}x{n}")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| b[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut it = mats.into_iter();
        let h0 = it.next().unwrap();
        Self::new(h0, it.collect())
    }
}

fn parse_entry(tok: &str) -> Option<C64> {
    match tok.split_once(',') {
        Some((re, im)) => Some(C64::new(re.parse().ok()?, im.parse().ok()?)),
        None => Some(C64::new(tok.parse().ok()?, 0.0)),
    }
}

/// Real coordinates of an anti-Hermitian matrix, isometric to the Frobenius norm.
pub fn vectorize(x: &DMatrix<C64>) -> DVector<f64> {
    let n = x.nrows();
    let mut v = Vec::with_capacity(n * n);
    let r2 = std::f64::consts::SQRT_2;
    for i in 0..n {
        v.push(x[(i, i)].im);
    }
    for i in 0..n {
        for j in i + 1..n {
            v.push(r2 * x[(i, j)].re);
            v.push(r2 * x[(i, j)].im);
        }
    }
    DVector::from_vec(v)
}

/// Basis of the generated Lie algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct LieBasis {
    /// Kept anti-Hermitian elements, each with unit Frobenius norm.
    pub elements: Vec<DMatrix<C64>>,
    /// Columns are the vectorized elements.
    pub w: DMatrix<f64>,
    pub rank: usize,
    pub rounds: usize,
}

impl LieBasis {
    pub fn singular_values(&self) -> Vec<f64> {
        if self.w.ncols() == 0 {
            return Vec::new();
        }
        self.w.clone().svd(false, false).singular_values.iter().copied().collect()
    }
}

struct Span {
    q: Vec<DVector<f64>>,
    tol: f64,
}

impl Span {
    /// Residual of `v` after projecting out the span, if it exceeds `tol · ‖v‖`.
    fn independent(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        let nv = v.norm();
        if nv == 0.0 {
            return None;
        }
        let mut r = v / nv;
        for _ in 0..2 {
            for q in &self.q {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let nr = r.norm();
        (nr > self.tol).then(|| r / nr)
    }
}

/// Closes `{iH0, iH_m}` under commutators.
pub fn lie_closure(sys: &NLevelControlSystem, tol: f64) -> Result<LieBasis> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("rank tolerance must be positive, got {tol}")));
    }
    let n = sys.n_levels();
    let full = n * n;
    let cap = full * full;
    let mut span = Span { q: Vec::new(), tol };
    let mut elements: Vec<DMatrix<C64>> = Vec::new();
    let try_add = |x: DMatrix<C64>, span: &mut Span, elements: &mut Vec<DMatrix<C64>>| {
        let v = vectorize(&x);
        if let Some(q) = span.independent(&v) {
            span.q.push(q);
            let nx = x.norm();
            elements.push(x / C64::new(nx, 0.0));
            true
        } else {
            false
        }
    };
    let i = C64::i();
    try_add(sys.h0.map(|z| z * i), &mut span, &mut elements);
    for h in &sys.controls {
        try_add(h.map(|z| z * i), &mut span, &mut elements);
    }
    let mut fresh_from = 0;
    let mut rounds = 0;
    while fresh_from < elements.len() && elements.len() < full {
        if rounds >= cap {
            return Err(Error::ClosureCap { rounds });
        }
        rounds += 1;
        let end = elements.len();
        for b in fresh_from..end {
            for a in 0..b {
                let c = &elements[a] * &elements[b] - &elements[b] * &elements[a];
                try_add(c, &mut span, &mut elements);
                if elements.len() == full {
                    break;
                }
            }
            if elements.len() == full {
                break;
            }
        }
        fresh_from = end;
    }
    let w = DMatrix::from_fn(full, elements.len(), |r, c| vectorize(&elements[c])[r]);
    let rank = if elements.is_empty() {
        0
    } else {
        let sv = w.clone().svd(false, false).singular_values;
        let top = sv.max();
        sv.iter().filter(|s| **s > tol * top).count()
    };
    Ok(LieBasis { elements, w, rank, rounds })
}

/// Dimension of the generated algebra and whether it equals `N²`.
pub fn lie_rank(sys: &NLevelControlSystem, tol: f64) -> Result<(usize, bool)> {
    let basis = lie_closure(sys, tol)?;
    let n = sys.n_levels();
    Ok((basis.rank, basis.rank == n * n))
}
