//! Flat `[section]` / `key = value` scenario files.
//!
//! Keys carry their unit in the name. Unknown sections or keys are errors,
//! so a typo never silently falls back to a default.
//!
//! ```text
//! [geometry]
//! theta_deg = 2
//!
//! [ensemble]
//! temperature_uk = 320
//!
//! [coupling]
//! intensity_mw_cm2 = 120
//! detuning_mhz = -30
//! rabi_gamma = 120      # optional: Ω in units of Γ instead of Γ·√(I/2I_s)
//!
//! [run]
//! seed = 7
//! output_dir = out
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::physcore::{units, AtomSpecies, Beam, BeamGeometry, Polarization, ThermalEnsemble, AMU};
use crate::protocol::{MemoryTimeline, ReadWaveform};
use crate::rirspec::{amplitude_for_gain, RirParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub intensity_mw_cm2: f64,
    pub detuning_mhz: f64,
    pub polarization: Polarization,
    /// Rabi frequency in units of Γ; overrides the intensity convention.
    pub rabi_gamma: Option<f64>,
}

impl BeamConfig {
    pub fn beam(&self, species: &AtomSpecies) -> Result<Beam> {
        let b = Beam::new(
            units::mw_cm2(self.intensity_mw_cm2),
            units::mhz_to_rad(self.detuning_mhz),
            self.polarization,
        )?;
        Ok(match self.rabi_gamma {
            Some(r) => b.with_rabi(r * species.gamma),
            None => b,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub species: AtomSpecies,
    pub theta_deg: f64,
    pub temperature_uk: f64,
    pub coupling: BeamConfig,
    pub probe: BeamConfig,
    /// Read beam; only intensity and polarization matter.
    pub read: BeamConfig,
    /// Peak fractional probe gain at the reference coupling intensity.
    pub gain: f64,
    /// Half-width of the two-photon detuning scan, kHz.
    pub delta_span_khz: f64,
    pub delta_points: usize,
    pub write_us: f64,
    pub storage_us: f64,
    pub read_us: f64,
    pub time_points: usize,
    pub efficiency: f64,
    pub seed: u64,
    pub n_atoms: usize,
    pub output_dir: Option<PathBuf>,
    /// Optical pumping beam for the microwave preparation.
    pub pump: BeamConfig,
    pub field_mg: f64,
    pub microwave_linewidth_khz: f64,
    pub microwave_span_khz: f64,
    pub pump_us: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            species: AtomSpecies::cesium(),
            theta_deg: 2.0,
            temperature_uk: 320.0,
            coupling: BeamConfig {
                intensity_mw_cm2: 120.0,
                detuning_mhz: -30.0,
                polarization: Polarization::SigmaPlus,
                rabi_gamma: None,
            },
            probe: BeamConfig {
                intensity_mw_cm2: 0.2,
                detuning_mhz: -30.0,
                polarization: Polarization::SigmaPlus,
                rabi_gamma: None,
            },
            read: BeamConfig {
                intensity_mw_cm2: 140.0,
                detuning_mhz: -30.0,
                polarization: Polarization::SigmaPlus,
                rabi_gamma: None,
            },
            gain: 0.3,
            delta_span_khz: 50.0,
            delta_points: 2001,
            write_us: 100.0,
            storage_us: 0.0,
            read_us: 90.0,
            time_points: 181,
            efficiency: 1.0,
            seed: 1,
            n_atoms: 100_000,
            output_dir: None,
            pump: BeamConfig {
                intensity_mw_cm2: 120.0,
                detuning_mhz: -30.0,
                polarization: Polarization::SigmaPlus,
                rabi_gamma: None,
            },
            field_mg: 150.0,
            microwave_linewidth_khz: 15.0,
            microwave_span_khz: 1000.0,
            pump_us: 100.0,
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Semantic {
        line,
        message: format!("`{key}` expects a number, got `{value}`"),
    })
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(Error::Syntax {
                        line,
                        column: 1,
                        token: content.into(),
                        message: "unterminated section header".into(),
                    });
                };
                section = name.trim().to_ascii_lowercase();
                if !matches!(
                    section.as_str(),
                    "species"
                        | "geometry"
                        | "ensemble"
                        | "coupling"
                        | "probe"
                        | "read"
                        | "spectrum"
                        | "timeline"
                        | "run"
                        | "microwave"
                        | "pumping"
                ) {
                    return Err(Error::Semantic {
                        line,
                        message: format!("unknown section [{section}]"),
                    });
                }
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Syntax {
                    line,
                    column: raw.find(content).unwrap_or(0) + 1,
                    token: content.into(),
                    message: "expected key = value".into(),
                });
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().trim_matches('"');
            cfg.set(line, &section, &key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, section: &str, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| parse_num::<f64>(line, key, v);
        match (section, key) {
            ("species", "name") => {
                if !value.eq_ignore_ascii_case("cesium") && !value.eq_ignore_ascii_case("cs") {
                    return Err(Error::Semantic {
                        line,
                        message: format!("unknown species `{value}`; override fields individually"),
                    });
                }
                self.species = AtomSpecies::cesium();
            }
            ("species", "mass_amu") => self.species.mass = num(value)? * AMU,
            ("species", "wavelength_nm") => self.species.wavelength = num(value)? / 1e9,
            ("species", "gamma_mhz") => self.species.gamma = units::mhz_to_rad(num(value)?),
            ("species", "i_sat_mw_cm2") => self.species.i_sat = units::mw_cm2(num(value)?),
            ("species", "g_f_upper") => self.species.g_f_upper = num(value)?,
            ("species", "g_f_lower") => self.species.g_f_lower = num(value)?,
            ("species", "hyperfine_hz") => self.species.hyperfine_splitting = num(value)?,
            ("geometry", "theta_deg") => self.theta_deg = num(value)?,
            ("ensemble", "temperature_uk") => self.temperature_uk = num(value)?,
            ("pumping", "duration_us") => self.pump_us = num(value)?,
            ("coupling" | "probe" | "read" | "pumping", _) => {
                let beam = match section {
                    "coupling" => &mut self.coupling,
                    "probe" => &mut self.probe,
                    "read" => &mut self.read,
                    _ => &mut self.pump,
                };
                match key {
                    "intensity_mw_cm2" => beam.intensity_mw_cm2 = num(value)?,
                    "detuning_mhz" => beam.detuning_mhz = num(value)?,
                    "rabi_gamma" => beam.rabi_gamma = Some(num(value)?),
                    "polarization" => {
                        beam.polarization = value.parse().map_err(|_| Error::Semantic {
                            line,
                            message: format!("unknown polarization `{value}`"),
                        })?
                    }
                    _ => return Err(unknown(line, section, key)),
                }
            }
            ("spectrum", "gain") => self.gain = num(value)?,
            ("spectrum", "delta_span_khz") => self.delta_span_khz = num(value)?,
            ("spectrum", "points") => self.delta_points = parse_num(line, key, value)?,
            ("timeline", "write_us") => self.write_us = num(value)?,
            ("timeline", "storage_us") => self.storage_us = num(value)?,
            ("timeline", "read_us") => self.read_us = num(value)?,
            ("timeline", "points") => self.time_points = parse_num(line, key, value)?,
            ("timeline", "efficiency") => self.efficiency = num(value)?,
            ("run", "seed") => self.seed = parse_num(line, key, value)?,
            ("run", "n_atoms") => self.n_atoms = parse_num(line, key, value)?,
            ("run", "output_dir") => self.output_dir = Some(PathBuf::from(value)),
            ("microwave", "field_mg") => self.field_mg = num(value)?,
            ("microwave", "linewidth_khz") => self.microwave_linewidth_khz = num(value)?,
            ("microwave", "span_khz") => self.microwave_span_khz = num(value)?,
            _ => return Err(unknown(line, section, key)),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.species.validate()?;
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(what.to_string()))
            }
        };
        check(
            self.theta_deg > 0.0 && self.theta_deg < 180.0,
            "theta_deg must lie in (0, 180)",
        )?;
        check(
            self.temperature_uk > 0.0 && self.temperature_uk.is_finite(),
            "temperature_uk must be positive",
        )?;
        for (name, b) in [
            ("coupling", &self.coupling),
            ("probe", &self.probe),
            ("read", &self.read),
            ("pumping", &self.pump),
        ] {
            check(
                b.intensity_mw_cm2 >= 0.0 && b.intensity_mw_cm2.is_finite(),
                &format!("{name} intensity must be ≥ 0"),
            )?;
            check(
                b.detuning_mhz.is_finite(),
                &format!("{name} detuning must be finite"),
            )?;
            if let Some(r) = b.rabi_gamma {
                check(
                    r >= 0.0 && r.is_finite(),
                    &format!("{name} rabi_gamma must be ≥ 0"),
                )?;
            }
        }
        check(
            self.gain >= 0.0 && self.gain.is_finite(),
            "gain must be ≥ 0",
        )?;
        check(self.delta_span_khz > 0.0, "delta_span_khz must be positive")?;
        check(self.write_us > 0.0, "write_us must be positive")?;
        check(self.storage_us >= 0.0, "storage_us must be ≥ 0")?;
        check(self.read_us > 0.0, "read_us must be positive")?;
        check(self.efficiency >= 0.0, "efficiency must be ≥ 0")?;
        check(self.field_mg >= 0.0, "field_mg must be ≥ 0")?;
        check(
            self.microwave_linewidth_khz > 0.0,
            "linewidth_khz must be positive",
        )?;
        check(self.microwave_span_khz > 0.0, "span_khz must be positive")?;
        check(self.pump_us >= 0.0, "pumping duration_us must be ≥ 0")?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<BeamGeometry> {
        BeamGeometry::new(units::deg(self.theta_deg), self.species.wavelength)
    }

    pub fn ensemble(&self) -> Result<ThermalEnsemble> {
        ThermalEnsemble::new(units::uk(self.temperature_uk), &self.species)
    }

    pub fn rir_params(&self) -> Result<RirParams> {
        let p = RirParams {
            species: self.species,
            geometry: self.geometry()?,
            ensemble: self.ensemble()?,
            coupling: self.coupling.beam(&self.species)?,
            probe: self.probe.beam(&self.species)?,
            amplitude_scale: amplitude_for_gain(self.gain),
        };
        p.validate()?;
        Ok(p)
    }

    /// Write, optional dark time, continuous read.
    pub fn timeline(&self) -> Result<MemoryTimeline> {
        let tl = MemoryTimeline {
            write_duration: units::us(self.write_us),
            write_delta: 0.0,
            storage_time: units::us(self.storage_us),
            read: ReadWaveform::continuous(
                units::mw_cm2(self.read.intensity_mw_cm2),
                units::us(self.read_us),
            )?,
        };
        tl.validate()?;
        Ok(tl)
    }
}

fn unknown(line: usize, section: &str, key: &str) -> Error {
    let where_ = if section.is_empty() {
        "outside any section".to_string()
    } else {
        format!("in [{section}]")
    };
    Error::Semantic {
        line,
        message: format!("unknown key `{key}` {where_}"),
    }
}
