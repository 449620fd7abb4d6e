//! Optical pumping across the F=4 Zeeman manifold and the microwave
//! spectrum used to read the populations out.
//!
//! The excited F'=5 level is adiabatically eliminated. Absorbing a σ⁺
//! photon takes m to m' = m+1 at rate R·|⟨4 m; 1 +1|5 m+1⟩|². The excited
//! state then decays to m'−q with weight |⟨4 m'−q; 1 q|5 m'⟩|². Those
//! weights sum to one for every m', so the decay never leaks out of F=4.
//!
//! Clebsch-Gordan convention: Condon-Shortley, only the squared
//! coefficients are used.

use crate::error::{Error, Result};
use crate::physcore::{AtomSpecies, Beam, Polarization, BOHR_MAGNETON, PLANCK};
use crate::rirspec::SpectrumCurve;

/// Upper ground level (F=4) sublevel count.
pub const N_UPPER: usize = 9;
/// Lower ground level (F=3) sublevel count.
pub const N_LOWER: usize = 7;

/// Squared Clebsch-Gordan coefficient |⟨j m−q; 1 q | j+1 m⟩|² for the
/// stretched coupling J = j+1, where `m` is the total projection.
pub fn cg2_stretched(j: i32, m: i32, q: i32) -> f64 {
    if m.abs() > j + 1 || (m - q).abs() > j {
        return 0.0;
    }
    let (j, m) = (j as f64, m as f64);
    let denom = (2.0 * j + 1.0) * (2.0 * j + 2.0);
    match q {
        1 => (j + m) * (j + m + 1.0) / denom,
        0 => (j - m + 1.0) * (j + m + 1.0) / ((2.0 * j + 1.0) * (j + 1.0)),
        -1 => (j - m) * (j - m + 1.0) / denom,
        _ => 0.0,
    }
}

/// Populations over F=4 (m = −4..4) and F=3 (m = −3..3), index = m + F.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeemanPopulations {
    pub p4: [f64; N_UPPER],
    pub p3: [f64; N_LOWER],
}

impl ZeemanPopulations {
    pub fn new(p4: [f64; N_UPPER], p3: [f64; N_LOWER]) -> Result<Self> {
        let p = ZeemanPopulations { p4, p3 };
        if p.p4.iter().chain(&p.p3).any(|&v| !(v >= 0.0)) {
            return Err(Error::Validation("populations must be non-negative".into()));
        }
        if (p.total() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "populations sum to {}, not 1",
                p.total()
            )));
        }
        Ok(p)
    }

    /// Equal weight on every F=4 sublevel; the unpumped MOT reference.
    pub fn uniform_upper() -> Self {
        ZeemanPopulations {
            p4: [1.0 / N_UPPER as f64; N_UPPER],
            p3: [0.0; N_LOWER],
        }
    }

    /// Everything in F=4, m = +4.
    pub fn stretched() -> Self {
        let mut p4 = [0.0; N_UPPER];
        p4[N_UPPER - 1] = 1.0;
        ZeemanPopulations {
            p4,
            p3: [0.0; N_LOWER],
        }
    }

    pub fn total(&self) -> f64 {
        self.p4.iter().sum::<f64>() + self.p3.iter().sum::<f64>()
    }

    /// Population of F=4 sublevel `m`.
    pub fn upper(&self, m: i32) -> f64 {
        self.p4[(m + 4) as usize]
    }
}

/// Ground-state transfer matrix of the adiabatically eliminated σ± cycle:
/// `rates[to][from]` for to ≠ from, diagonal = −(total loss).
fn pumping_matrix(light: &Beam, species: &AtomSpecies) -> Result<[[f64; N_UPPER]; N_UPPER]> {
    let sign = match light.polarization {
        Polarization::SigmaPlus => 1,
        Polarization::SigmaMinus => -1,
        Polarization::Linear => return Err(Error::Polarization(light.polarization.to_string())),
    };
    let s =
        (light.intensity / species.i_sat) / (1.0 + (2.0 * light.detuning / species.gamma).powi(2));
    let rate = 0.5 * species.gamma * s / (1.0 + s);

    let mut a = [[0.0; N_UPPER]; N_UPPER];
    for m in -4..=4i32 {
        let mp = m + sign;
        let excite = rate * cg2_stretched(4, mp, sign);
        if excite == 0.0 {
            continue;
        }
        for q in -1..=1 {
            let to = mp - q;
            if to.abs() > 4 || to == m {
                continue;
            }
            let flow = excite * cg2_stretched(4, mp, q);
            a[(to + 4) as usize][(m + 4) as usize] += flow;
            a[(m + 4) as usize][(m + 4) as usize] -= flow;
        }
    }
    Ok(a)
}

fn deriv(a: &[[f64; N_UPPER]; N_UPPER], p: &[f64; N_UPPER]) -> [f64; N_UPPER] {
    let mut out = [0.0; N_UPPER];
    for (o, row) in out.iter_mut().zip(a) {
        *o = row.iter().zip(p).map(|(r, x)| r * x).sum();
    }
    out
}

fn axpy(p: &[f64; N_UPPER], k: &[f64; N_UPPER], h: f64) -> [f64; N_UPPER] {
    let mut out = *p;
    for i in 0..N_UPPER {
        out[i] += h * k[i];
    }
    out
}

/// Step count keeping the largest rate times dt at or below 0.05.
fn auto_steps(a: &[[f64; N_UPPER]; N_UPPER], duration: f64) -> usize {
    let fastest = (0..N_UPPER).map(|i| -a[i][i]).fold(0.0, f64::max);
    ((fastest * duration / 0.05).ceil() as usize).max(1)
}

/// Populations after every RK4 step of the pumping rate equations,
/// starting with `initial` itself.
pub fn pump_trajectory(
    initial: &ZeemanPopulations,
    light: &Beam,
    duration: f64,
    species: &AtomSpecies,
    steps: Option<usize>,
) -> Result<Vec<ZeemanPopulations>> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Domain(format!(
            "pumping duration must be ≥ 0, got {duration}"
        )));
    }
    let a = pumping_matrix(light, species)?;
    let mut out = vec![*initial];
    if duration == 0.0 {
        return Ok(out);
    }
    let n = steps.unwrap_or_else(|| auto_steps(&a, duration)).max(1);
    let h = duration / n as f64;
    let mut p = initial.p4;
    for _ in 0..n {
        let k1 = deriv(&a, &p);
        let k2 = deriv(&a, &axpy(&p, &k1, h / 2.0));
        let k3 = deriv(&a, &axpy(&p, &k2, h / 2.0));
        let k4 = deriv(&a, &axpy(&p, &k3, h));
        for i in 0..N_UPPER {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(ZeemanPopulations {
            p4: p,
            p3: initial.p3,
        });
    }
    Ok(out)
}

/// Final populations after pumping for `duration` seconds.
pub fn pump_evolution(
    initial: &ZeemanPopulations,
    light: &Beam,
    duration: f64,
    species: &AtomSpecies,
) -> Result<ZeemanPopulations> {
    Ok(*pump_trajectory(initial, light, duration, species, None)?
        .last()
        .expect("trajectory holds the initial state"))
}

/// Resolved microwave lines between F=4 and F=3.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrowaveSpectrum {
    /// Offsets from the hyperfine splitting, Hz, strictly increasing.
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Lorentzian FWHM used for rendering, Hz.
    pub linewidth: f64,
}

impl MicrowaveSpectrum {
    /// Lines whose amplitude exceeds `fraction` of the strongest one.
    pub fn dominant_peaks(&self, fraction: f64) -> usize {
        let top = self.amplitudes.iter().cloned().fold(0.0, f64::max);
        self.amplitudes
            .iter()
            .filter(|&&a| a > fraction * top)
            .count()
    }
}

/// Enumerates the Δm = ±1 magnetic-dipole lines (F=4, m₄) ↔ (F=3, m₃).
///
/// Offset (g₄m₄ − g₃m₃)·μ_B·B/h; amplitude p₄(m₄) times the squared
/// ⟨3 m₃; 1 q|4 m₄⟩, normalized to a unit maximum. Lines at the same offset
/// are merged and lines with no population behind them are dropped.
pub fn microwave_spectrum(
    pops: &ZeemanPopulations,
    field: f64,
    species: &AtomSpecies,
    linewidth: f64,
) -> Result<MicrowaveSpectrum> {
    if !(field >= 0.0 && field.is_finite()) {
        return Err(Error::Domain(format!(
            "magnetic field must be ≥ 0, got {field}"
        )));
    }
    if !(linewidth > 0.0 && linewidth.is_finite()) {
        return Err(Error::Domain(format!(
            "linewidth must be positive, got {linewidth}"
        )));
    }
    let unit = BOHR_MAGNETON * field / PLANCK;
    let wmax = (-4..=4)
        .flat_map(|m4| [m4 - 1, m4 + 1].map(|m3| (m4, m3)))
        .filter(|&(_, m3): &(i32, i32)| m3.abs() <= 3)
        .map(|(m4, m3)| cg2_stretched(3, m4, m4 - m3))
        .fold(0.0, f64::max);

    let mut lines: Vec<(f64, f64)> = Vec::new();
    for m4 in -4..=4i32 {
        for m3 in [m4 - 1, m4 + 1] {
            if m3.abs() > 3 {
                continue;
            }
            let amp = pops.upper(m4) * cg2_stretched(3, m4, m4 - m3) / wmax;
            if amp > 0.0 {
                let offset = (species.g_f_upper * m4 as f64 - species.g_f_lower * m3 as f64) * unit;
                lines.push((offset, amp));
            }
        }
    }
    lines.sort_by(|a, b| a.0.total_cmp(&b.0));

    let tol = 1e-9 * unit.abs();
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (f, a) in lines {
        match merged.last_mut() {
            Some(last) if (f - last.0).abs() <= tol => last.1 += a,
            _ => merged.push((f, a)),
        }
    }
    Ok(MicrowaveSpectrum {
        frequencies: merged.iter().map(|l| l.0).collect(),
        amplitudes: merged.iter().map(|l| l.1).collect(),
        linewidth,
    })
}

/// Sum of unit-height Lorentzians (FWHM = spectrum linewidth) on `grid` (Hz).
pub fn render_microwave_scan(spectrum: &MicrowaveSpectrum, grid: &[f64]) -> Result<SpectrumCurve> {
    let half = spectrum.linewidth / 2.0;
    let values = grid
        .iter()
        .map(|&f| {
            spectrum
                .frequencies
                .iter()
                .zip(&spectrum.amplitudes)
                .map(|(&f0, &a)| {
                    let x = (f - f0) / half;
                    a / (1.0 + x * x)
                })
                .sum()
        })
        .collect();
    SpectrumCurve::new(grid.to_vec(), values)
}

/// `offset_khz,signal` CSV text.
pub fn microwave_csv(curve: &SpectrumCurve) -> String {
    let mut out = String::from("offset_khz,signal\n");
    for (f, v) in curve.delta_grid.iter().zip(&curve.values) {
        out.push_str(&format!("{:.8e},{:.8e}\n", f / 1e3, v));
    }
    out
}
