//! Physical constants, species data and the kinematic quantities shared by
//! every other module.
//!
//! Everything here is SI. Frequencies are angular (rad/s) unless a name
//! says otherwise; the `units` helpers convert at the interface layer.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Unit conversions used at file and command-line boundaries.
pub mod units {
    use std::f64::consts::PI;

    pub fn hz_to_rad(f: f64) -> f64 {
        2.0 * PI * f
    }

    pub fn rad_to_hz(w: f64) -> f64 {
        w / (2.0 * PI)
    }

    pub fn mhz_to_rad(f: f64) -> f64 {
        hz_to_rad(f * 1e6)
    }

    pub fn khz_to_rad(f: f64) -> f64 {
        hz_to_rad(f * 1e3)
    }

    /// mW/cm² → W/m².
    pub fn mw_cm2(i: f64) -> f64 {
        i * 10.0
    }

    /// W/m² → mW/cm².
    pub fn to_mw_cm2(i: f64) -> f64 {
        i / 10.0
    }

    // division by an exact power of ten rounds correctly; multiplying by
    // 1e-6 does not (100 µs would become 9.999999999999999e-5 s)
    pub fn us(t: f64) -> f64 {
        t / 1e6
    }

    pub fn uk(t: f64) -> f64 {
        t / 1e6
    }

    /// Milligauss → tesla.
    pub fn mg(b: f64) -> f64 {
        b / 1e7
    }

    pub fn deg(a: f64) -> f64 {
        a.to_radians()
    }
}

/// Constants of the working optical transition and the ground hyperfine pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomSpecies {
    /// kg
    pub mass: f64,
    /// Optical transition wavelength, m.
    pub wavelength: f64,
    /// Excited-state relaxation rate Γ, rad/s.
    pub gamma: f64,
    /// Saturation intensity of the stretched transition, W/m².
    pub i_sat: f64,
    /// Landé factor of the upper ground hyperfine level (F=4 for Cs).
    pub g_f_upper: f64,
    /// Landé factor of the lower ground hyperfine level (F=3 for Cs).
    pub g_f_lower: f64,
    /// Ground-state hyperfine splitting, Hz.
    pub hyperfine_splitting: f64,
}

impl AtomSpecies {
    /// Cesium D₂ line, 6S₁/₂ F=4 ↔ 6P₃/₂ F'=5, with Γ/2π = 5.2 MHz and
    /// I_s = 1 mW/cm².
    pub const fn cesium() -> Self {
        AtomSpecies {
            mass: 132.905_451_961 * AMU,
            wavelength: 852.347_275_82e-9,
            gamma: 2.0 * PI * 5.2e6,
            i_sat: 10.0,
            g_f_upper: 0.25,
            g_f_lower: -0.25,
            hyperfine_splitting: 9_192_631_770.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("wavelength", self.wavelength),
            ("gamma", self.gamma),
            ("i_sat", self.i_sat),
            ("g_f_upper", self.g_f_upper),
            ("hyperfine_splitting", self.hyperfine_splitting),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!(
                    "species {name} must be positive, got {v}"
                )));
            }
        }
        if !self.g_f_lower.is_finite() || self.g_f_lower == 0.0 {
            return Err(Error::Domain(
                "species g_f_lower must be finite and nonzero".into(),
            ));
        }
        Ok(())
    }

    /// Doppler cooling limit ħΓ/(2k_B), K.
    pub fn doppler_temperature(&self) -> f64 {
        HBAR * self.gamma / (2.0 * BOLTZMANN)
    }

    /// ħΓ, J. Convenient energy unit for optical potentials.
    pub fn hbar_gamma(&self) -> f64 {
        HBAR * self.gamma
    }
}

impl Default for AtomSpecies {
    fn default() -> Self {
        Self::cesium()
    }
}

/// Probe/coupling crossing geometry and the grating it writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    /// Full angle between probe and coupling, rad.
    pub theta: f64,
    pub wavelength: f64,
    /// |k_P − k_C|, rad/m.
    pub q: f64,
    /// Grating period Λ, m.
    pub lambda_grating: f64,
}

/// Builds the grating geometry for a crossing angle `theta` (rad).
pub fn grating_geometry(theta: f64, wavelength: f64) -> Result<BeamGeometry> {
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::Domain(format!(
            "crossing angle must lie in (0, π), got {theta}"
        )));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::Domain(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let half = (theta / 2.0).sin();
    let q = 2.0 * (2.0 * PI / wavelength) * half;
    Ok(BeamGeometry {
        theta,
        wavelength,
        q,
        lambda_grating: wavelength / (2.0 * half),
    })
}

impl BeamGeometry {
    pub fn new(theta: f64, wavelength: f64) -> Result<Self> {
        grating_geometry(theta, wavelength)
    }

    /// Optical wavenumber 2π/λ shared by probe and coupling.
    pub fn k(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

/// Most probable 1-D speed √(2k_BT/m).
pub fn most_probable_speed(temperature: f64, species: &AtomSpecies) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature} K"
        )));
    }
    Ok((2.0 * BOLTZMANN * temperature / species.mass).sqrt())
}

/// A thermal cloud at temperature `temperature`, with its most probable speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalEnsemble {
    /// K
    pub temperature: f64,
    /// m/s
    pub u: f64,
}

impl ThermalEnsemble {
    pub fn new(temperature: f64, species: &AtomSpecies) -> Result<Self> {
        Ok(ThermalEnsemble {
            temperature,
            u: most_probable_speed(temperature, species)?,
        })
    }

    /// Zero-temperature limit: atoms at rest, gratings never wash out.
    pub fn frozen() -> Self {
        ThermalEnsemble {
            temperature: 0.0,
            u: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    SigmaPlus,
    SigmaMinus,
    Linear,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::SigmaPlus => "sigma_plus",
            Polarization::SigmaMinus => "sigma_minus",
            Polarization::Linear => "linear",
        })
    }
}

impl std::str::FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_plus" | "sigma+" => Ok(Polarization::SigmaPlus),
            "sigma_minus" | "sigma-" => Ok(Polarization::SigmaMinus),
            "linear" => Ok(Polarization::Linear),
            other => Err(Error::Validation(format!("unknown polarization `{other}`"))),
        }
    }
}

/// A laser beam addressing the optical transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    /// W/m²
    pub intensity: f64,
    /// Signed detuning Δ from optical resonance, rad/s.
    pub detuning: f64,
    pub polarization: Polarization,
    /// Rabi frequency given directly (rad/s), bypassing the intensity
    /// conversion.
    pub rabi: Option<f64>,
}

impl Beam {
    pub fn new(intensity: f64, detuning: f64, polarization: Polarization) -> Result<Self> {
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(Error::Domain(format!(
                "beam intensity must be ≥ 0, got {intensity}"
            )));
        }
        Ok(Beam {
            intensity,
            detuning,
            polarization,
            rabi: None,
        })
    }

    pub fn with_rabi(mut self, rabi: f64) -> Self {
        self.rabi = Some(rabi);
        self
    }

    pub fn rabi_frequency(&self, species: &AtomSpecies) -> f64 {
        self.rabi
            .unwrap_or_else(|| rabi_frequency(self.intensity, species))
    }
}

/// Ω = Γ√(I/(2I_s)).
pub fn rabi_frequency(intensity: f64, species: &AtomSpecies) -> f64 {
    species.gamma * (intensity.max(0.0) / (2.0 * species.i_sat)).sqrt()
}

/// Depth |ħΩ_CΩ_P/(2Δ)| of the coupling–probe interference potential, J.
///
/// The sign of Δ only decides whether atoms gather at intensity maxima or
/// minima, which does not change the grating contrast.
pub fn optical_potential_depth(omega_c: f64, omega_p: f64, delta_opt: f64) -> Result<f64> {
    if delta_opt == 0.0 {
        return Err(Error::DivisionByZero("optical detuning Δ = 0"));
    }
    Ok((HBAR * omega_c * omega_p / (2.0 * delta_opt)).abs())
}

/// k_BT / U. Values below one mean the wells hold the atoms.
pub fn thermal_vs_potential(temperature: f64, depth: f64) -> Result<f64> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!(
            "potential depth must be positive, got {depth}"
        )));
    }
    Ok(BOLTZMANN * temperature / depth)
}
