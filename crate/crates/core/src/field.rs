use crate::error::{Error, Result};
use crate::propagator::TimeGrid;

/// Real control field per polarization on a uniform time grid.
///
/// Sample `i` is held constant on `[t_i, t_i + dt)`, so a field over `n_steps`
/// intervals stores `n_steps` values per component.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    dt: f64,
    components: Vec<Vec<f64>>,
}

impl ControlField {
    pub fn new(dt: f64, components: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("field dt must be positive, got {dt}")));
        }
        let Some(first) = components.first() else {
            return Err(Error::InvalidParameter("field needs at least one component".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::InvalidParameter("field has no samples".into()));
        }
        for c in &components {
            if c.len() != n {
                return Err(Error::LengthMismatch { what: "field component", expected: n, got: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("field contains non-finite samples".into()));
            }
        }
        Ok(Self { dt, components })
    }

    pub fn zeros(tg: &TimeGrid, n_pol: usize) -> Self {
        Self::constant(tg, n_pol, 0.0)
    }

    pub fn constant(tg: &TimeGrid, n_pol: usize, value: f64) -> Self {
        Self { dt: tg.dt(), components: vec![vec![value; tg.n_steps()]; n_pol.max(1)] }
    }

    /// Single-component field sampled at interval midpoints.
    pub fn from_fn(tg: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let dt = tg.dt();
        let c = (0..tg.n_steps()).map(|i| f((i as f64 + 0.5) * dt)).collect();
        Self { dt, components: vec![c] }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_samples(&self) -> usize {
        self.components[0].len()
    }

    pub fn n_polarizations(&self) -> usize {
        self.components.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_samples() as f64
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.components[j]
    }

    pub fn component_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.components[j]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Writes the value of every polarization at sample `i` into `out`.
    pub fn sample_into(&self, i: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c[i];
        }
    }

    /// `Σ ε_j(t_i)² dt` per polarization.
    pub fn fluence(&self) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() * self.dt)
            .collect()
    }

    pub fn total_fluence(&self) -> f64 {
        self.fluence().iter().sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.components.iter_mut().flatten().for_each(|v| *v *= c);
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Fails unless the field has one sample per interval of `tg` and `n_pol` components.
    pub fn check(&self, tg: &TimeGrid, n_pol: usize) -> Result<()> {
        if self.n_samples() != tg.n_steps() {
            return Err(Error::LengthMismatch { what: "field samples", expected: tg.n_steps(), got: self.n_samples() });
        }
        if (self.dt - tg.dt()).abs() > 1e-12 * tg.dt() {
            return Err(Error::InvalidParameter(format!(
                "field dt {} does not match time grid dt {}",
                self.dt,
                tg.dt()
            )));
        }
        if self.n_polarizations() != n_pol {
            return Err(Error::LengthMismatch { what: "field polarizations", expected: n_pol, got: self.n_polarizations() });
        }
        Ok(())
    }
}
