//! Spectral, temporal and phase-only constraints on control fields.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::field::ControlField;
use crate::fourier::Fourier;
use crate::qsystem::interpolate;

/// A generalized filter `G` acting on a candidate field.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldFilter {
    Identity,
    /// `f(|ω|)` by linear interpolation through `(ω, f)` rows.
    SpectralMask { omega: Vec<f64>, gain: Vec<f64> },
    /// `Σ_c e^{−γ(ω−c)²} + e^{−γ(ω+c)²}`.
    GaussianPass { centers: Vec<f64>, gamma: f64 },
    /// `1 −` the matching pass mask.
    GaussianStop { centers: Vec<f64>, gamma: f64 },
    /// Keeps `lo ≤ |ω| ≤ hi`.
    Band { lo: f64, hi: f64 },
    /// Keeps the single bin nearest to `±center`.
    NearestBin { center: f64 },
    /// Pointwise `h(t_i) ε(t_i)`.
    Envelope(Vec<f64>),
    /// Replaces `|ε(ω)|` with `A(|ω|)` and keeps the phases.
    PhaseOnly { omega: Vec<f64>, amplitude: Vec<f64> },
    Chain(Vec<FieldFilter>),
}

impl FieldFilter {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldFilter::GaussianPass { gamma, centers } | FieldFilter::GaussianStop { gamma, centers } => {
                if !(gamma.is_finite() && *gamma >= 0.0) {
                    return Err(Error::InvalidParameter(format!("filter width parameter must be nonnegative, got {gamma}")));
                }
                if centers.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidParameter("filter centers must be finite".into()));
                }
            }
            FieldFilter::SpectralMask { omega, gain } => check_table(omega, gain, "mask")?,
            FieldFilter::PhaseOnly { omega, amplitude } => {
                check_table(omega, amplitude, "amplitude")?;
                if amplitude.iter().any(|a| *a < 0.0) {
                    return Err(Error::InvalidParameter("phase-only amplitudes must be nonnegative".into()));
                }
            }
            FieldFilter::Band { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && hi >= lo) {
                    return Err(Error::InvalidParameter(format!("invalid band [{lo}, {hi}]")));
                }
            }
            FieldFilter::NearestBin { center } => {
                if !(center.is_finite() && *center >= 0.0) {
                    return Err(Error::InvalidParameter(format!("invalid bin center {center}")));
                }
            }
            FieldFilter::Envelope(h) => {
                if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter("envelope must be finite and nonnegative".into()));
                }
            }
            FieldFilter::Chain(fs) => fs.iter().try_for_each(FieldFilter::validate)?,
            FieldFilter::Identity => {}
        }
        Ok(())
    }

    fn in_frequency_domain(&self) -> bool {
        !matches!(self, FieldFilter::Identity | FieldFilter::Envelope(_) | FieldFilter::Chain(_))
    }

    /// Mask value at angular frequency `omega` for the pure frequency filters.
    pub fn gain(&self, omega: f64) -> Option<f64> {
        let w = omega.abs();
        match self {
            FieldFilter::GaussianPass { centers, gamma } => Some(gaussian_pass(centers, *gamma, w)),
            FieldFilter::GaussianStop { centers, gamma } => Some(1.0 - gaussian_pass(centers, *gamma, w)),
            FieldFilter::Band { lo, hi } => Some(if w >= *lo && w <= *hi { 1.0 } else { 0.0 }),
            FieldFilter::SpectralMask { omega, gain } => Some(interpolate(omega, gain, w)),
            _ => None,
        }
    }
}

fn gaussian_pass(centers: &[f64], gamma: f64, w: f64) -> f64 {
    centers
        .iter()
        .map(|c| (-gamma * (w - c).powi(2)).exp() + (-gamma * (w + c).powi(2)).exp())
        .sum()
}

fn check_table(x: &[f64], y: &[f64], what: &str) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} table needs matching, nonempty columns")));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} table must be finite with increasing frequencies")));
    }
    Ok(())
}

/// Angular frequency of DFT bin `m` for `n` samples spaced `dt`.
pub fn bin_frequency(m: usize, n: usize, dt: f64) -> f64 {
    let k = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
    2.0 * PI * k / (n as f64 * dt)
}

/// Applies `flt` to every polarization of `field`.
pub fn apply_filter(flt: &FieldFilter, field: &ControlField) -> Result<ControlField> {
    apply_filter_padded(flt, field, 1)
}

/// As [`apply_filter`] with the series zero-padded to `padding × n` before transforming.
pub fn apply_filter_padded(flt: &FieldFilter, field: &ControlField, padding: usize) -> Result<ControlField> {
    flt.validate()?;
    if padding == 0 {
        return Err(Error::InvalidParameter("padding factor must be at least 1".into()));
    }
    let mut out = field.clone();
    for j in 0..field.n_polarizations() {
        filter_series(flt, out.component_mut(j), field.dt(), padding)?;
    }
    Ok(out)
}

fn filter_series(flt: &FieldFilter, x: &mut [f64], dt: f64, padding: usize) -> Result<()> {
    match flt {
        FieldFilter::Identity => Ok(()),
        FieldFilter::Envelope(h) => {
            if h.len() != x.len() {
                return Err(Error::LengthMismatch { what: "envelope samples", expected: x.len(), got: h.len() });
            }
            x.iter_mut().zip(h).for_each(|(v, w)| *v *= w);
            Ok(())
        }
        FieldFilter::Chain(fs) => {
            for (k, f) in fs.iter().enumerate() {
                if k > 0 && !f.in_frequency_domain() && fs[k - 1].in_frequency_domain() {
                    log::info!("time-domain filter follows a frequency-domain filter at chain position {k}; the result depends on the order");
                }
                filter_series(f, x, dt, padding)?;
            }
            Ok(())
        }
        _ => spectral(flt, x, dt, padding),
    }
}

fn spectral(flt: &FieldFilter, x: &mut [f64], dt: f64, padding: usize) -> Result<()> {
    let n = x.len();
    let np = n * padding;
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    buf.resize(np, C64::new(0.0, 0.0));
    let mut fourier = Fourier::new(np);
    fourier.forward(&mut buf);
    match flt {
        FieldFilter::NearestBin { center } => {
            let dw = 2.0 * PI / (np as f64 * dt);
            let k = (center / dw).round() as usize;
            for (m, z) in buf.iter_mut().enumerate() {
                if m != k && m != (np - k) % np {
                    *z = C64::new(0.0, 0.0);
                }
            }
        }
        FieldFilter::PhaseOnly { omega, amplitude } => {
            for (m, z) in buf.iter_mut().enumerate() {
                let a = interpolate(omega, amplitude, bin_frequency(m, np, dt).abs());
                let r = z.norm();
                *z = if r > 0.0 { *z * (a / r) } else { C64::new(a, 0.0) };
            }
        }
        _ => {
            for (m, z) in buf.iter_mut().enumerate() {
                *z *= flt.gain(bin_frequency(m, np, dt)).expect("frequency filter");
            }
        }
    }
    fourier.inverse(&mut buf);
    let peak = buf.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    let residue = buf.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let bound = 1e-10 * peak.max(1e-300);
    if residue > bound && residue > 1e-300 {
        return Err(Error::NotReal { residue, bound });
    }
    x.iter_mut().zip(&buf).for_each(|(v, z)| *v = z.re);
    Ok(())
}

/// `Σ ε_j(t_i)² dt` per polarization.
pub fn fluence(field: &ControlField) -> Vec<f64> {
    field.fluence()
}

/// Discrete spectrum `ε(ω_m) = dt Σ_i ε(t_i) e^{−iω_m t_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub values: Vec<C64>,
}

impl Spectrum {
    pub fn d_omega(&self) -> f64 {
        if self.omega.len() > 1 {
            self.omega[1] - self.omega[0]
        } else {
            0.0
        }
    }

    /// `|ε(ω)|²` per bin.
    pub fn power(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `(1/2π) Σ |ε(ω)|² Δω`, equal to the fluence by Parseval.
    pub fn parseval_fluence(&self) -> f64 {
        self.power().iter().sum::<f64>() * self.d_omega() / (2.0 * PI)
    }

    /// Fraction of the power whose `|ω|` lies in any of the closed bands.
    pub fn power_fraction_in(&self, bands: &[(f64, f64)]) -> f64 {
        let p = self.power();
        let total: f64 = p.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let inside: f64 = self
            .omega
            .iter()
            .zip(&p)
            .filter(|(w, _)| bands.iter().any(|(lo, hi)| w.abs() >= *lo && w.abs() <= *hi))
            .map(|(_, q)| q)
            .sum();
        inside / total
    }

    /// Bin indices of the `k` strongest local maxima at `ω ≥ 0`, strongest first.
    pub fn peaks(&self, k: usize) -> Vec<usize> {
        let p = self.power();
        let n = p.len();
        let mut idx: Vec<usize> = (1..n.saturating_sub(1))
            .filter(|&m| self.omega[m] > 0.0 && p[m] >= p[m - 1] && p[m] >= p[m + 1] && p[m] > 0.0)
            .collect();
        idx.sort_by(|a, b| p[*b].total_cmp(&p[*a]));
        idx.truncate(k);
        idx
    }
}

/// Spectrum of polarization `j` on `ω_m = 2πm/(n dt)`, sorted by frequency.
pub fn spectrum(field: &ControlField, j: usize) -> Result<Spectrum> {
    if j >= field.n_polarizations() {
        return Err(Error::InvalidParameter(format!("no polarization {j}")));
    }
    let x = field.component(j);
    let n = x.len();
    let dt = field.dt();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    Fourier::new(n).forward(&mut buf);
    buf.iter_mut().for_each(|z| *z *= dt);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| bin_frequency(*a, n, dt).total_cmp(&bin_frequency(*b, n, dt)));
    Ok(Spectrum {
        omega: order.iter().map(|&m| bin_frequency(m, n, dt)).collect(),
        values: order.iter().map(|&m| buf[m]).collect(),
    })
}
