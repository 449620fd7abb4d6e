//! The `rirsim` command line.
//!
//! Exit codes: 0 on success, 1 for usage, configuration or validation
//! errors, 2 for numerical failures (a fit that does not converge, a
//! singular system, a failed self-test criterion).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::fitting::{
    fit_curve, temperature_from_lifetime, temperature_from_width, FitResult, Model,
};
use crate::grating::{decay_csv, monte_carlo_decay, GratingState};
use crate::physcore::units;
use crate::protocol::{
    retrieve_with_efficiency, storage_spectrum, trace_csv, window_energies, write_grating,
    MemoryTimeline,
};
use crate::pumping::{
    microwave_csv, microwave_spectrum, pump_trajectory, render_microwave_scan, ZeemanPopulations,
    N_UPPER,
};
use crate::rirspec::{peak_to_peak_linewidth, spectrum_csv, transmission_spectrum, uniform_grid};
use crate::selftest;
use crate::sequence::parse_sequence;

/// Seed for one named stream of a command: the first eight bytes
/// (little-endian) of SHA-256(seed ‖ command ‖ stream).
pub fn derive_seed(seed: u64, command: &str, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(command.as_bytes());
    h.update(stream.to_le_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

#[derive(Debug, Parser)]
#[command(
    name = "rirsim",
    version,
    about = "Recoil-induced resonance light storage simulator"
)]
struct Cli {
    /// Scenario file with [section] / key = value entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for output files (overrides [run] output_dir).
    #[arg(long, global = true, value_name = "DIR", env = "RIRSIM_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Angle between coupling and probe beams, degrees.
    #[arg(long, global = true, value_name = "DEG")]
    theta_deg: Option<f64>,
    /// Cloud temperature, µK.
    #[arg(long, global = true, value_name = "UK")]
    temp_uk: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationState {
    /// Equal population in every F=4 Zeeman sublevel.
    Uniform,
    /// The uniform state after optical pumping.
    Pumped,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probe transmission spectrum versus two-photon detuning.
    Spectrum {
        /// Coupling intensity, mW/cm².
        #[arg(long, value_name = "MW_CM2")]
        ic: Option<f64>,
        /// Half-width of the detuning scan, kHz.
        #[arg(long, value_name = "KHZ")]
        span_khz: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, default_value = "spectrum.csv")]
        out: PathBuf,
    },
    /// Retrieved energy versus write detuning.
    StorageSpectrum {
        /// Pulse sequence file; defaults to the scenario timeline.
        #[arg(long, value_name = "FILE")]
        seq: Option<PathBuf>,
        #[arg(long, value_name = "KHZ")]
        span_khz: Option<f64>,
        #[arg(long, default_value_t = 241)]
        points: usize,
        #[arg(long, default_value = "storage_spectrum.csv")]
        out: PathBuf,
    },
    /// Retrieval trace for a write / store / read sequence.
    Retrieve {
        #[arg(long, value_name = "FILE")]
        seq: Option<PathBuf>,
        /// Samples across the read.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value = "retrieval.csv")]
        out: PathBuf,
    },
    /// Zeeman populations during optical pumping.
    Pump {
        #[arg(long, value_name = "US")]
        duration_us: Option<f64>,
        #[arg(long, default_value = "pumping.csv")]
        out: PathBuf,
    },
    /// Microwave spectrum of the F=4 → F=3 transition.
    Microwave {
        #[arg(long, value_enum, default_value_t = PopulationState::Uniform)]
        state: PopulationState,
        #[arg(long, value_name = "MG")]
        field_mg: Option<f64>,
        #[arg(long, value_name = "KHZ")]
        linewidth_khz: Option<f64>,
        #[arg(long, default_value_t = 2001)]
        points: usize,
        #[arg(long, default_value = "microwave.csv")]
        out: PathBuf,
    },
    /// Monte Carlo dephasing of the density grating.
    Montecarlo {
        #[arg(long)]
        atoms: Option<usize>,
        /// Samples over three storage lifetimes.
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, default_value = "montecarlo.csv")]
        out: PathBuf,
    },
    /// Fit a model to a CSV column and extract a temperature.
    Fit {
        /// gaussian-derivative or gaussian-decay
        #[arg(long)]
        model: String,
        #[arg(long = "in", short = 'i', visible_alias = "input", value_name = "CSV")]
        input: PathBuf,
        /// y column name; default `intensity`, `transmission`, `energy` or
        /// the second column.
        #[arg(long)]
        column: Option<String>,
        /// Text report; a JSON record is written next to it.
        #[arg(long, default_value = "fit_report.txt")]
        out: PathBuf,
    },
    /// Run the built-in acceptance checks and write the reference artifacts.
    Selftest,
}

/// A generated output file plus its one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub contents: String,
    pub summary: String,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_output(dir: &Path, name: &Path, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::parse(&read_text(path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.theta_deg {
        cfg.theta_deg = t;
    }
    if let Some(t) = cli.temp_uk {
        cfg.temperature_uk = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_timeline(cfg: &ScenarioConfig, seq: Option<&Path>) -> Result<MemoryTimeline> {
    match seq {
        Some(path) => parse_sequence(&read_text(path)?)?.timeline(),
        None => cfg.timeline(),
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let cfg = load_config(&cli)?;
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let (artifact, out) = match cli.command {
        Command::Spectrum {
            ic,
            span_khz,
            points,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(ic) = ic {
                cfg.coupling.intensity_mw_cm2 = ic;
            }
            if let Some(s) = span_khz {
                cfg.delta_span_khz = s;
            }
            if let Some(n) = points {
                cfg.delta_points = n;
            }
            cfg.validate()?;
            (spectrum_artifact(&cfg)?, out)
        }
        Command::StorageSpectrum {
            seq,
            span_khz,
            points,
            out,
        } => {
            let tl = load_timeline(&cfg, seq.as_deref())?;
            let span = span_khz.unwrap_or(cfg.delta_span_khz);
            (storage_spectrum_artifact(&cfg, &tl, span, points)?, out)
        }
        Command::Retrieve { seq, samples, out } => {
            let tl = load_timeline(&cfg, seq.as_deref())?;
            (
                retrieval_artifact(&cfg, &tl, samples.unwrap_or(cfg.time_points))?,
                out,
            )
        }
        Command::Pump { duration_us, out } => {
            let mut cfg = cfg;
            if let Some(d) = duration_us {
                cfg.pump_us = d;
            }
            cfg.validate()?;
            (pumping_artifact(&cfg)?, out)
        }
        Command::Microwave {
            state,
            field_mg,
            linewidth_khz,
            points,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(b) = field_mg {
                cfg.field_mg = b;
            }
            if let Some(w) = linewidth_khz {
                cfg.microwave_linewidth_khz = w;
            }
            cfg.validate()?;
            (microwave_artifact(&cfg, state, points)?, out)
        }
        Command::Montecarlo { atoms, points, out } => {
            let mut cfg = cfg;
            if let Some(n) = atoms {
                cfg.n_atoms = n;
            }
            if let Some(n) = points {
                cfg.time_points = n;
            }
            (montecarlo_artifact(&cfg)?, out)
        }
        Command::Fit {
            model,
            input,
            column,
            out,
        } => {
            let model: Model = model.parse()?;
            return run_fit(&cfg, model, &input, column.as_deref(), &out_dir, &out);
        }
        Command::Selftest => {
            let outcomes = selftest::run(&out_dir, cfg.seed)?;
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!(
                "selftest: {} of {} criteria passed",
                outcomes.len() - failed,
                outcomes.len()
            );
            return Ok(if failed == 0 { 0 } else { 2 });
        }
    };
    let path = write_output(&out_dir, &out, &artifact.contents)?;
    println!("{} -> {}", artifact.summary, path.display());
    Ok(0)
}

pub fn spectrum_artifact(cfg: &ScenarioConfig) -> Result<Artifact> {
    let params = cfg.rir_params()?;
    let span = units::khz_to_rad(cfg.delta_span_khz);
    let curve = transmission_spectrum(&params, -span, span, cfg.delta_points)?;
    let width = peak_to_peak_linewidth(&curve)?;
    Ok(Artifact {
        contents: spectrum_csv(&curve),
        summary: format!(
            "spectrum: {} points over ±{} kHz, peak-to-peak {:.3} kHz (√2·qu = {:.3} kHz)",
            curve.len(),
            cfg.delta_span_khz,
            units::rad_to_hz(width) / 1e3,
            units::rad_to_hz(params.analytic_linewidth()) / 1e3
        ),
    })
}

pub fn storage_spectrum_artifact(
    cfg: &ScenarioConfig,
    timeline: &MemoryTimeline,
    span_khz: f64,
    points: usize,
) -> Result<Artifact> {
    if !(span_khz > 0.0) || points < 3 {
        return Err(Error::Validation(
            "storage spectrum needs span > 0 and at least 3 points".into(),
        ));
    }
    let params = cfg.rir_params()?;
    let span = units::khz_to_rad(span_khz);
    let deltas = uniform_grid(-span, span, points);
    let energies = storage_spectrum(&params, timeline, &deltas, cfg.time_points)?;
    let mut csv = String::from("delta_hz,energy\n");
    for (d, e) in deltas.iter().zip(&energies) {
        csv.push_str(&format!("{:.8e},{:.8e}\n", units::rad_to_hz(*d), e));
    }
    let fwhm = params.doppler_width() * (2.0 * std::f64::consts::LN_2).sqrt();
    Ok(Artifact {
        contents: csv,
        summary: format!(
            "storage-spectrum: {points} write detunings over ±{span_khz} kHz, expected FWHM {:.3} kHz",
            units::rad_to_hz(fwhm) / 1e3
        ),
    })
}

pub fn retrieval_artifact(
    cfg: &ScenarioConfig,
    timeline: &MemoryTimeline,
    samples: usize,
) -> Result<Artifact> {
    let params = cfg.rir_params()?;
    let state = write_grating(&params, timeline)?;
    let trace = retrieve_with_efficiency(&state, timeline, samples, cfg.efficiency)?;
    let energies = window_energies(&trace);
    let total: f64 = energies.iter().sum();
    let on = trace.windows.iter().filter(|w| w.on).count();
    Ok(Artifact {
        contents: trace_csv(&trace),
        summary: format!(
            "retrieve: b1 = {:.4e}, {} read window(s), retrieved energy {:.4e} J/m²",
            state.b1, on, total
        ),
    })
}

pub fn pumping_artifact(cfg: &ScenarioConfig) -> Result<Artifact> {
    let beam = cfg.pump.beam(&cfg.species)?;
    let duration = units::us(cfg.pump_us);
    let traj = pump_trajectory(
        &ZeemanPopulations::uniform_upper(),
        &beam,
        duration,
        &cfg.species,
        None,
    )?;
    let steps = traj.len() - 1;
    // keep the CSV to about a thousand rows
    let stride = steps.div_ceil(1000).max(1);
    let mut csv = String::from("t_us");
    for m in -4..=4 {
        csv.push_str(&format!(",p4_m{m:+}"));
    }
    csv.push('\n');
    for (k, p) in traj.iter().enumerate() {
        if k % stride != 0 && k != steps {
            continue;
        }
        let t = if steps == 0 {
            0.0
        } else {
            duration * k as f64 / steps as f64
        };
        csv.push_str(&format!("{:.8e}", t * 1e6));
        for v in &p.p4[..N_UPPER] {
            csv.push_str(&format!(",{v:.8e}"));
        }
        csv.push('\n');
    }
    let last = traj[steps];
    Ok(Artifact {
        contents: csv,
        summary: format!(
            "pump: {} µs of {} light, {steps} RK4 steps, p4(m=+4) = {:.6}, p4(m=-4) = {:.6}",
            cfg.pump_us,
            cfg.pump.polarization,
            last.upper(4),
            last.upper(-4)
        ),
    })
}

pub fn microwave_artifact(
    cfg: &ScenarioConfig,
    state: PopulationState,
    points: usize,
) -> Result<Artifact> {
    let pops = match state {
        PopulationState::Uniform => ZeemanPopulations::uniform_upper(),
        PopulationState::Pumped => {
            let beam = cfg.pump.beam(&cfg.species)?;
            let traj = pump_trajectory(
                &ZeemanPopulations::uniform_upper(),
                &beam,
                units::us(cfg.pump_us),
                &cfg.species,
                None,
            )?;
            traj[traj.len() - 1]
        }
    };
    let spectrum = microwave_spectrum(
        &pops,
        units::mg(cfg.field_mg),
        &cfg.species,
        cfg.microwave_linewidth_khz * 1e3,
    )?;
    if points < 3 {
        return Err(Error::Validation(
            "microwave scan needs at least 3 points".into(),
        ));
    }
    let span = cfg.microwave_span_khz * 1e3;
    let curve = render_microwave_scan(&spectrum, &uniform_grid(-span, span, points))?;
    let spacing = if spectrum.frequencies.len() > 1 {
        format!(
            ", spacing {:.2} kHz",
            (spectrum.frequencies[1] - spectrum.frequencies[0]) / 1e3
        )
    } else {
        String::new()
    };
    Ok(Artifact {
        contents: microwave_csv(&curve),
        summary: format!(
            "microwave: {} line(s) at {} mG, {} above 10 % of the strongest{spacing}",
            spectrum.frequencies.len(),
            cfg.field_mg,
            spectrum.dominant_peaks(0.1)
        ),
    })
}

pub fn montecarlo_artifact(cfg: &ScenarioConfig) -> Result<Artifact> {
    let geometry = cfg.geometry()?;
    let ensemble = cfg.ensemble()?;
    let state = GratingState::new(1.0, geometry.q, ensemble, 0.0)?;
    let tau = state.lifetime();
    let times = uniform_grid(0.0, 3.0 * tau, cfg.time_points);
    let seed = derive_seed(cfg.seed, "montecarlo", 0);
    let curve = monte_carlo_decay(&state, cfg.n_atoms, seed, &times)?;
    let fit = fit_curve(Model::GaussianDecay, &curve.times, &curve.intensity, None)?;
    let tau_fit = fit.get("tau").unwrap_or(f64::NAN);
    Ok(Artifact {
        contents: decay_csv(&curve),
        summary: format!(
            "montecarlo: {} atoms, fitted lifetime {:.3} µs (√2/(qu) = {:.3} µs)",
            cfg.n_atoms,
            tau_fit * 1e6,
            tau * 1e6
        ),
    })
}

/// Reads `x` (first column) and `y` from a CSV file written by any command.
pub fn read_xy(path: &Path, column: Option<&str>) -> Result<(String, String, Vec<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.len() < 2 {
        return Err(Error::Validation(format!(
            "{}: need at least two columns",
            path.display()
        )));
    }
    let yi = match column {
        Some(c) => headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| Error::Validation(format!("{}: no column `{c}`", path.display())))?,
        None => ["intensity", "transmission", "energy"]
            .iter()
            .find_map(|c| headers.iter().position(|h| h == c))
            .unwrap_or(1),
    };
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse().map_err(|_| {
                Error::Validation(format!(
                    "{}: row {}: `{s}` is not a number",
                    path.display(),
                    row + 2
                ))
            })
        };
        x.push(field(0)?);
        y.push(field(yi)?);
    }
    Ok((headers[0].clone(), headers[yi].clone(), x, y))
}

/// Temperature implied by a fit, when the CSV columns say what was fitted.
fn implied_temperature(
    cfg: &ScenarioConfig,
    fit: &FitResult,
    x_name: &str,
    y_name: &str,
) -> Result<Option<f64>> {
    let geometry = cfg.geometry()?;
    let species = &cfg.species;
    let t = match (fit.model, x_name) {
        (Model::GaussianDecay, "t_us") => {
            let tau = fit.get("tau").unwrap_or(f64::NAN).abs() / 1e6;
            // the amplitude decays √2 slower than the diffracted intensity
            let tau_g = if y_name == "amplitude" {
                tau / std::f64::consts::SQRT_2
            } else {
                tau
            };
            Some(temperature_from_lifetime(tau_g, &geometry, species)?)
        }
        (Model::GaussianDerivative, "delta_hz") => {
            let w = units::hz_to_rad(fit.get("w").unwrap_or(f64::NAN).abs());
            Some(temperature_from_width(w, &geometry, species)?)
        }
        (Model::GaussianDecay, "delta_hz") => {
            // retrieved energy falls as exp(−2δ²/(qu)²)
            let half = units::hz_to_rad(fit.get("tau").unwrap_or(f64::NAN).abs());
            Some(temperature_from_width(
                std::f64::consts::SQRT_2 * half,
                &geometry,
                species,
            )?)
        }
        _ => None,
    };
    Ok(t)
}

fn run_fit(
    cfg: &ScenarioConfig,
    model: Model,
    input: &Path,
    column: Option<&str>,
    out_dir: &Path,
    out: &Path,
) -> Result<i32> {
    let (x_name, y_name, x, y) = read_xy(input, column)?;
    // a non-converged fit still leaves its best estimate on disk
    let (fit, failure) = match fit_curve(model, &x, &y, None) {
        Ok(fit) => (fit, None),
        Err(Error::NoConvergence(best)) => {
            let fit = (*best).clone();
            (fit, Some(Error::NoConvergence(best)))
        }
        Err(e) => return Err(e),
    };
    let temperature = match failure {
        None => implied_temperature(cfg, &fit, &x_name, &y_name)?,
        Some(_) => None,
    };

    let mut report = fit.to_report();
    let mut record = fit.to_json();
    record["x_column"] = json!(x_name);
    record["y_column"] = json!(y_name);
    if let Some(t) = temperature {
        report.push_str(&format!("temperature_uk = {:.6}\n", t * 1e6));
        record["temperature_uk"] = json!(t * 1e6);
    }
    let report_path = write_output(out_dir, out, &report)?;
    let json_text = serde_json::to_string_pretty(&record).expect("fit record serializes") + "\n";
    write_output(out_dir, &out.with_extension("json"), &json_text)?;

    if let Some(e) = failure {
        eprintln!(
            "error: {e}; best estimate written to {}",
            report_path.display()
        );
        return Ok(2);
    }
    let params: Vec<String> = fit
        .params
        .iter()
        .map(|(n, v)| format!("{n} = {v:.6e}"))
        .collect();
    let temp = temperature.map_or(String::new(), |t| {
        format!(", temperature {:.2} µK", t * 1e6)
    });
    println!(
        "fit: {} converged in {} iterations, {}{temp} -> {}",
        model.name(),
        fit.iterations,
        params.join(", "),
        report_path.display()
    );
    Ok(0)
}
