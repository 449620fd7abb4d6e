//! Probe transmission across the recoil-induced resonance.
//!
//! The lineshape is the derivative of the 1-D Maxwell-Boltzmann Gaussian
//! evaluated at v = δ/q, with every kinetic prefactor folded into one
//! amplitude constant. Gain sits at δ < 0 (red-detuned coupling).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physcore::{units, AtomSpecies, Beam, BeamGeometry, ThermalEnsemble};

/// Coupling intensity at which `amplitude_scale` is quoted: 120 mW/cm².
pub const REFERENCE_COUPLING_INTENSITY: f64 = 1200.0;

/// Minimum number of samples in a synthesized spectrum.
pub const MIN_SPECTRUM_POINTS: usize = 32;

/// Sampled (x, value) series. For transmission spectra x is δ in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    pub delta_grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl SpectrumCurve {
    /// Checks the grid is strictly increasing and every value finite.
    pub fn new(delta_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if delta_grid.len() != values.len() {
            return Err(Error::Grid(format!(
                "{} grid points but {} values",
                delta_grid.len(),
                values.len()
            )));
        }
        if delta_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Grid("non-finite value in curve".into()));
        }
        Ok(SpectrumCurve { delta_grid, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing, assuming a uniform grid.
    pub fn step(&self) -> f64 {
        let n = self.delta_grid.len();
        (self.delta_grid[n - 1] - self.delta_grid[0]) / (n - 1) as f64
    }
}

/// Everything the spectrum and the write step need to know about the setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirParams {
    pub species: AtomSpecies,
    pub geometry: BeamGeometry,
    pub ensemble: ThermalEnsemble,
    pub coupling: Beam,
    pub probe: Beam,
    /// Signal calibration A₀ at the reference coupling intensity.
    pub amplitude_scale: f64,
}

impl RirParams {
    pub fn validate(&self) -> Result<()> {
        self.species.validate()?;
        if !(self.amplitude_scale >= 0.0 && self.amplitude_scale.is_finite()) {
            return Err(Error::Domain(format!(
                "amplitude_scale must be ≥ 0, got {}",
                self.amplitude_scale
            )));
        }
        Ok(())
    }

    /// Doppler width qu of the two-photon resonance, rad/s.
    pub fn doppler_width(&self) -> f64 {
        self.geometry.q * self.ensemble.u
    }

    /// Lineshape amplitude A = A₀·I_C/I_C,ref.
    pub fn amplitude(&self) -> f64 {
        self.amplitude_scale * self.coupling.intensity / REFERENCE_COUPLING_INTENSITY
    }

    /// Closed-form peak-to-peak splitting √2·qu.
    pub fn analytic_linewidth(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.doppler_width()
    }
}

/// Amplitude A for which the gain peak reaches `1 + gain`.
///
/// The extremum of x·exp(−x²) is e^{−1/2}/√2 at x = 1/√2.
pub fn amplitude_for_gain(gain: f64) -> f64 {
    gain * std::f64::consts::SQRT_2 * 0.5f64.exp()
}

/// Relative probe transmission T(δ) = 1 − A·x·exp(−x²), x = δ/(qu).
pub fn rir_lineshape(delta: f64, params: &RirParams) -> f64 {
    let x = delta / params.doppler_width();
    1.0 - params.amplitude() * x * (-x * x).exp()
}

/// Uniform grid of `n` points from `min` to `max` inclusive.
///
/// Written as a two-sided lerp so that a grid over [−a, a] is exactly
/// antisymmetric: point i is the bitwise negation of point n−1−i.
pub fn uniform_grid(min: f64, max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![min];
    }
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let right = i as f64 / last;
            let left = (n - 1 - i) as f64 / last;
            min * left + max * right
        })
        .collect()
}

/// Samples the lineshape on a uniform δ grid (rad/s).
pub fn transmission_spectrum(
    params: &RirParams,
    delta_min: f64,
    delta_max: f64,
    n: usize,
) -> Result<SpectrumCurve> {
    params.validate()?;
    if n < MIN_SPECTRUM_POINTS {
        return Err(Error::Grid(format!(
            "need at least {MIN_SPECTRUM_POINTS} points, got {n}"
        )));
    }
    if !(delta_min < delta_max) || !delta_min.is_finite() || !delta_max.is_finite() {
        return Err(Error::Grid(format!(
            "empty detuning range [{delta_min}, {delta_max}]"
        )));
    }
    let grid = uniform_grid(delta_min, delta_max, n);
    let values = grid.par_iter().map(|&d| rir_lineshape(d, params)).collect();
    SpectrumCurve::new(grid, values)
}

/// Splitting between the absorption and gain extrema, rad/s.
///
/// Extrema are taken at grid samples, so the result is exactly unchanged by
/// any rescaling of the signal amplitude.
pub fn peak_to_peak_linewidth(curve: &SpectrumCurve) -> Result<f64> {
    let n = curve.len();
    if n < 3 {
        return Err(Error::Grid("need at least three samples".into()));
    }
    let (mut imax, mut imin) = (0, 0);
    for (i, &v) in curve.values.iter().enumerate() {
        if v > curve.values[imax] {
            imax = i;
        }
        if v < curve.values[imin] {
            imin = i;
        }
    }
    if imax == 0 || imax == n - 1 {
        return Err(Error::ExtremumAtBoundary { which: "gain peak" });
    }
    if imin == 0 || imin == n - 1 {
        return Err(Error::ExtremumAtBoundary {
            which: "absorption dip",
        });
    }
    Ok((curve.delta_grid[imin] - curve.delta_grid[imax]).abs())
}

/// Writes `delta_hz,transmission` CSV text.
pub fn spectrum_csv(curve: &SpectrumCurve) -> String {
    let mut out = String::from("delta_hz,transmission\n");
    for (d, v) in curve.delta_grid.iter().zip(&curve.values) {
        out.push_str(&format!("{:.8e},{:.8e}\n", units::rad_to_hz(*d), v));
    }
    out
}
