//! Built-in end-to-end checks and the reference artifact set.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cli::{
    derive_seed, microwave_artifact, montecarlo_artifact, pumping_artifact, retrieval_artifact,
    spectrum_artifact, storage_spectrum_artifact, PopulationState,
};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::fitting::{fit_curve, temperature_from_lifetime, temperature_from_width, Model};
use crate::grating::{analytic_decay, monte_carlo_decay, storage_lifetime, GratingState};
use crate::physcore::{
    optical_potential_depth, units, AtomSpecies, BeamGeometry, ThermalEnsemble, BOLTZMANN,
};
use crate::protocol::{
    continuous_reference, multi_read, retrieve, storage_spectrum, window_energies, write_grating,
    MemoryTimeline, ReadWaveform,
};
use crate::pumping::{
    microwave_spectrum, pump_evolution, render_microwave_scan, ZeemanPopulations,
};
use crate::rirspec::{peak_to_peak_linewidth, transmission_spectrum, uniform_grid};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<24} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

type Check = (bool, String);
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Result<Check> + 'a>);

/// Runs every criterion, writing the reference artifacts to `dir`.
pub fn run(dir: &Path, seed: u64) -> Result<Vec<Outcome>> {
    let criteria: [Criterion; 10] = [
        ("storage lifetime", Box::new(lifetime)),
        ("potential depth", Box::new(potential_depth)),
        ("monte carlo decay", Box::new(move || monte_carlo(seed))),
        ("transmission spectrum", Box::new(spectrum)),
        ("non-destructive read", Box::new(nondestructive_read)),
        ("storage spectrum", Box::new(storage)),
        ("zeeman pumping", Box::new(pumping)),
        ("fit round trip", Box::new(move || fit_round_trip(seed))),
        ("angle scaling", Box::new(angle_scaling)),
        ("determinism", Box::new(move || determinism(dir, seed))),
    ];
    Ok(criteria
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
            Outcome {
                id: i as u8 + 1,
                name,
                passed,
                detail,
            }
        })
        .collect())
}

fn cesium_geometry(theta_deg: f64) -> Result<BeamGeometry> {
    BeamGeometry::new(units::deg(theta_deg), AtomSpecies::cesium().wavelength)
}

fn lifetime() -> Result<Check> {
    let cs = AtomSpecies::cesium();
    let start = Instant::now();
    let geometry = cesium_geometry(2.0)?;
    let ensemble = ThermalEnsemble::new(units::uk(320.0), &cs)?;
    let tau = storage_lifetime(&geometry, &ensemble);
    let back = temperature_from_lifetime(27.5e-6, &geometry, &cs)?;
    let exact = temperature_from_lifetime(tau, &geometry, &cs)?;
    let elapsed = start.elapsed();
    let ok = rel(tau, 27.5e-6) < 0.02
        && rel(back, 320e-6) < 0.01
        && rel(exact, 320e-6) < 1e-12
        && elapsed < Duration::from_millis(1);
    Ok((
        ok,
        format!(
            "tau_g = {:.3} us, T(27.5 us) = {:.1} uK, {:.0?}",
            tau * 1e6,
            back * 1e6,
            elapsed
        ),
    ))
}

fn potential_depth() -> Result<Check> {
    let cs = AtomSpecies::cesium();
    let hg = cs.hbar_gamma();
    let u =
        optical_potential_depth(120.0 * cs.gamma, 0.2 * cs.gamma, units::mhz_to_rad(30.0))? / hg;
    let kt = BOLTZMANN * 2.5 * cs.doppler_temperature() / hg;
    let ok = rel(u, 2.0) < 0.05 && rel(kt, 1.2) < 0.05;
    Ok((
        ok,
        format!("U = {u:.3} hbar*Gamma, kT(2.5 T_D) = {kt:.3} hbar*Gamma"),
    ))
}

fn monte_carlo(seed: u64) -> Result<Check> {
    let cs = AtomSpecies::cesium();
    let geometry = cesium_geometry(2.0)?;
    let ensemble = ThermalEnsemble::new(units::uk(320.0), &cs)?;
    let state = GratingState::new(1.0, geometry.q, ensemble, 0.0)?;
    let tau = state.lifetime();
    let times = uniform_grid(0.0, 3.0 * tau, 61);
    let analytic = analytic_decay(&state, &times)?;

    let start = Instant::now();
    let mut worst_dev: f64 = 0.0;
    let mut worst_tau: f64 = 0.0;
    for s in 0..5 {
        let mc = monte_carlo_decay(
            &state,
            100_000,
            derive_seed(seed, "selftest-montecarlo", s),
            &times,
        )?;
        for (a, b) in mc.amplitude.iter().zip(&analytic.amplitude) {
            worst_dev = worst_dev.max((a - b).abs());
        }
        let fit = fit_curve(Model::GaussianDecay, &times, &mc.intensity, None)?;
        worst_tau = worst_tau.max(rel(fit.get("tau").unwrap_or(f64::NAN), tau));
    }
    let elapsed = start.elapsed();
    let ok = worst_dev < 0.01 && worst_tau < 0.02 && elapsed < Duration::from_secs(5);
    Ok((
        ok,
        format!(
            "max |MC - analytic| = {worst_dev:.2e}, worst tau error {:.2} %, {:.2?} for 5 x 1e5 atoms",
            worst_tau * 100.0,
            elapsed
        ),
    ))
}

fn spectrum() -> Result<Check> {
    let cfg = ScenarioConfig::default();
    let span = units::khz_to_rad(50.0);
    let n = 2001;
    let mut widths = Vec::new();
    let mut symmetric = true;
    let mut base = cfg.rir_params()?;
    for ic in [40.0, 80.0, 120.0] {
        base.coupling.intensity = units::mw_cm2(ic);
        let curve = transmission_spectrum(&base, -span, span, n)?;
        for i in 0..n {
            let j = n - 1 - i;
            symmetric &= curve.delta_grid[i] == -curve.delta_grid[j];
            symmetric &= (curve.values[i] + curve.values[j] - 2.0).abs() <= 4.0 * f64::EPSILON;
        }
        widths.push(peak_to_peak_linewidth(&curve)?);
    }
    let step = 2.0 * span / (n - 1) as f64;
    let width = widths[0];
    let identical = widths.iter().all(|w| w.to_bits() == width.to_bits());
    let near_analytic = (width - base.analytic_linewidth()).abs() <= step / 2.0;
    let hz = units::rad_to_hz(width);
    let subnatural = base.species.gamma / width;
    let ok =
        symmetric && identical && near_analytic && rel(hz, 11.6e3) < 0.01 && subnatural > 300.0;
    Ok((
        ok,
        format!(
            "peak-to-peak {:.3} kHz, Gamma/width = {subnatural:.0}, odd symmetry {symmetric}, identical across I_C {identical}",
            hz / 1e3
        ),
    ))
}

fn read_timeline(read: ReadWaveform) -> MemoryTimeline {
    MemoryTimeline {
        write_duration: 100e-6,
        write_delta: 0.0,
        storage_time: 10e-6,
        read,
    }
}

fn nondestructive_read() -> Result<Check> {
    let params = ScenarioConfig::default().rir_params()?;
    let duration = 90e-6;
    let mut reference: Option<Vec<f64>> = None;
    let mut worst: f64 = 0.0;
    let mut unchanged = true;
    for ir in [35.0, 70.0, 140.0] {
        let tl = read_timeline(ReadWaveform::continuous(units::mw_cm2(ir), duration)?);
        let state = write_grating(&params, &tl)?;
        let trace = retrieve(&state, &tl, 181)?;
        unchanged &= trace.grating_after == trace.grating_before;
        let peak = trace.intensity.iter().cloned().fold(0.0, f64::max);
        let norm: Vec<f64> = trace.intensity.iter().map(|v| v / peak).collect();
        match &reference {
            None => reference = Some(norm),
            Some(r) => {
                for (a, b) in r.iter().zip(&norm) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }

    let tl = read_timeline(ReadWaveform::square(
        units::mw_cm2(140.0),
        duration,
        10e-6,
        0.5,
    )?);
    let state = write_grating(&params, &tl)?;
    let modulated = multi_read(&state, &tl, 181)?;
    let continuous = continuous_reference(&state, &tl, 181)?;
    let (em, ec) = (window_energies(&modulated), window_energies(&continuous));
    let mut window_err: f64 = 0.0;
    let mut off_zero = true;
    for (w, (a, b)) in modulated.windows.iter().zip(em.iter().zip(&ec)) {
        if w.on {
            window_err = window_err.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        } else {
            off_zero &= *a == 0.0;
        }
    }
    let ok = worst <= 1e-12 && window_err <= 1e-12 && off_zero && unchanged;
    Ok((
        ok,
        format!("normalized traces differ by {worst:.1e}, on-window energies by {window_err:.1e} (relative)"),
    ))
}

fn storage() -> Result<Check> {
    let params = ScenarioConfig::default().rir_params()?;
    let qu = params.doppler_width();
    let tl = read_timeline(ReadWaveform::continuous(units::mw_cm2(140.0), 90e-6)?);
    let deltas = uniform_grid(-3.0 * qu, 3.0 * qu, 121);
    let energies = storage_spectrum(&params, &tl, &deltas, 181)?;
    let peak_at_zero = energies
        .iter()
        .enumerate()
        .all(|(i, e)| i == 60 || *e < energies[60]);
    let fit = fit_curve(Model::GaussianDecay, &deltas, &energies, None)?;
    let half = fit.get("tau").unwrap_or(f64::NAN).abs();
    let center = fit.get("t0").unwrap_or(f64::NAN);
    let fwhm = 2.0 * half * std::f64::consts::LN_2.sqrt();
    let ok = peak_at_zero
        && rel(half, qu / std::f64::consts::SQRT_2) < 1e-6
        && center.abs() < 1e-6 * qu
        && fwhm < 0.01 * params.species.gamma;
    Ok((
        ok,
        format!(
            "energy FWHM {:.3} kHz = {:.2e} Gamma, 1/e half-width / (qu/sqrt2) - 1 = {:.1e}",
            units::rad_to_hz(fwhm) / 1e3,
            fwhm / params.species.gamma,
            half / (qu / std::f64::consts::SQRT_2) - 1.0
        ),
    ))
}

/// Local maxima above `fraction` of the curve's maximum.
fn count_peaks(values: &[f64], fraction: f64) -> usize {
    let top = values.iter().cloned().fold(0.0, f64::max);
    values
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > fraction * top)
        .count()
}

fn pumping() -> Result<Check> {
    let cfg = ScenarioConfig::default();
    let field = units::mg(150.0);
    let grid = uniform_grid(-500e3, 500e3, 4001);
    let uniform = microwave_spectrum(
        &ZeemanPopulations::uniform_upper(),
        field,
        &cfg.species,
        15e3,
    )?;
    let spacings: Vec<f64> = uniform
        .frequencies
        .windows(2)
        .map(|w| w[1] - w[0])
        .collect();
    let spaced = spacings.iter().all(|s| rel(*s, 105e3) < 0.01);
    let uniform_peaks = count_peaks(&render_microwave_scan(&uniform, &grid)?.values, 0.1);

    let beam = cfg.pump.beam(&cfg.species)?;
    let pumped_pops = pump_evolution(
        &ZeemanPopulations::uniform_upper(),
        &beam,
        100e-6,
        &cfg.species,
    )?;
    let pumped = microwave_spectrum(&pumped_pops, field, &cfg.species, 15e3)?;
    let pumped_peaks = count_peaks(&render_microwave_scan(&pumped, &grid)?.values, 0.1);

    let ok = uniform.frequencies.len() == 8
        && uniform_peaks == 8
        && spaced
        && pumped_pops.upper(4) > 0.99
        && pumped.dominant_peaks(0.1) == 1
        && pumped_peaks == 1;
    Ok((
        ok,
        format!(
            "uniform: {} lines {:.2} kHz apart; pumped: p4(+4) = {:.5}, {} dominant peak(s)",
            uniform.frequencies.len(),
            spacings.first().copied().unwrap_or(f64::NAN) / 1e3,
            pumped_pops.upper(4),
            pumped_peaks
        ),
    ))
}

struct Truth {
    qu: f64,
    amplitude: f64,
    tau: f64,
}

fn derivative_data(t: &Truth, noise: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let x = uniform_grid(-4.0 * t.qu, 4.0 * t.qu, 401);
    let p = [1.0, t.amplitude / t.qu, 0.0, t.qu];
    let clean: Vec<f64> = x
        .iter()
        .map(|&xi| Model::GaussianDerivative.eval(&p, xi))
        .collect();
    let dev = clean.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let normal = Normal::new(0.0, (noise * dev).max(f64::MIN_POSITIVE)).expect("finite sigma");
    let y = clean
        .iter()
        .map(|v| {
            if noise > 0.0 {
                v + normal.sample(rng)
            } else {
                *v
            }
        })
        .collect();
    (x, y, dev)
}

fn decay_data(t: &Truth, noise: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let x = uniform_grid(0.0, 3.0 * t.tau, 181);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let y = x
        .iter()
        .map(|&xi| {
            let v = Model::GaussianDecay.eval(&[1.0, 0.0, t.tau], xi);
            if noise > 0.0 {
                v + normal.sample(rng)
            } else {
                v
            }
        })
        .collect();
    (x, y)
}

/// Worst relative parameter error (centres relative to the width).
fn derivative_error(t: &Truth, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let f = fit_curve(Model::GaussianDerivative, x, y, None)?;
    let g = |n: &str| f.get(n).unwrap_or(f64::NAN);
    let w = g("w").abs();
    let err = [
        (g("c") - 1.0).abs(),
        rel(g("A"), t.amplitude / t.qu),
        g("x0").abs() / t.qu,
        rel(w, t.qu),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok((err, w))
}

fn decay_error(t: &Truth, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let f = fit_curve(Model::GaussianDecay, x, y, None)?;
    let g = |n: &str| f.get(n).unwrap_or(f64::NAN);
    let tau = g("tau").abs();
    let err = [rel(g("B"), 1.0), g("t0").abs() / t.tau, rel(tau, t.tau)]
        .into_iter()
        .fold(0.0, f64::max);
    Ok((err, tau))
}

fn fit_round_trip(seed: u64) -> Result<Check> {
    let cs = AtomSpecies::cesium();
    let geometry = cesium_geometry(2.0)?;
    let ensemble = ThermalEnsemble::new(units::uk(320.0), &cs)?;
    let truth = Truth {
        qu: geometry.q * ensemble.u,
        amplitude: 0.3,
        tau: storage_lifetime(&geometry, &ensemble),
    };
    let mut quiet = ChaCha8Rng::seed_from_u64(0);
    let (x, y, _) = derivative_data(&truth, 0.0, &mut quiet);
    let clean_d = derivative_error(&truth, &x, &y)?.0;
    let (x, y) = decay_data(&truth, 0.0, &mut quiet);
    let clean_g = decay_error(&truth, &x, &y)?.0;

    // a single noisy decay fit scatters T by about 1.4 %, so the two
    // pathways are compared on their means over the seeded trials
    let (mut ok_d, mut ok_g) = (0, 0);
    let (mut t_width, mut t_life) = (Vec::new(), Vec::new());
    for k in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "selftest-fit", k));
        let (x, y, _) = derivative_data(&truth, 0.01, &mut rng);
        if let Ok((e, w)) = derivative_error(&truth, &x, &y) {
            ok_d += usize::from(e < 0.02);
            t_width.push(temperature_from_width(w, &geometry, &cs)?);
        }
        let (x, y) = decay_data(&truth, 0.01, &mut rng);
        if let Ok((e, tau)) = decay_error(&truth, &x, &y) {
            ok_g += usize::from(e < 0.02);
            t_life.push(temperature_from_lifetime(tau, &geometry, &cs)?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (t_width, t_life) = (mean(&t_width), mean(&t_life));

    let ok =
        clean_d < 1e-3 && clean_g < 1e-3 && ok_d >= 95 && ok_g >= 95 && rel(t_width, t_life) < 0.01;
    Ok((
        ok,
        format!(
            "noiseless errors {clean_d:.1e}/{clean_g:.1e}; within 2 %: {ok_d}/100 derivative, {ok_g}/100 decay; T {:.1} vs {:.1} uK",
            t_width * 1e6,
            t_life * 1e6
        ),
    ))
}

fn angle_scaling() -> Result<Check> {
    let cs = AtomSpecies::cesium();
    let ensemble = ThermalEnsemble::new(units::uk(320.0), &cs)?;
    let mut taus = Vec::new();
    let mut products = Vec::new();
    for deg in [1.0, 2.0, 4.0] {
        let tau = storage_lifetime(&cesium_geometry(deg)?, &ensemble);
        taus.push(tau);
        products.push(tau * (units::deg(deg) / 2.0).sin());
    }
    let decreasing = taus.windows(2).all(|w| w[1] < w[0]);
    let spread = products
        .iter()
        .map(|p| rel(*p, products[0]))
        .fold(0.0, f64::max);
    Ok((
        decreasing && spread < 1e-9,
        format!(
            "tau_g = {:.2} / {:.2} / {:.2} us at 1/2/4 deg, tau*sin(theta/2) spread {spread:.1e}",
            taus[0] * 1e6,
            taus[1] * 1e6,
            taus[2] * 1e6
        ),
    ))
}

/// Writes the reference artifact set; returns the paths in a fixed order.
pub fn write_artifacts(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let cfg = ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    };
    let square = MemoryTimeline {
        read: ReadWaveform::square(
            units::mw_cm2(cfg.read.intensity_mw_cm2),
            units::us(cfg.read_us),
            10e-6,
            0.5,
        )?,
        ..cfg.timeline()?
    };
    let files = [
        ("spectrum.csv", spectrum_artifact(&cfg)?),
        (
            "storage_spectrum.csv",
            storage_spectrum_artifact(&cfg, &cfg.timeline()?, cfg.delta_span_khz, 241)?,
        ),
        (
            "retrieval.csv",
            retrieval_artifact(&cfg, &cfg.timeline()?, cfg.time_points)?,
        ),
        (
            "multi_read.csv",
            retrieval_artifact(&cfg, &square, cfg.time_points)?,
        ),
        ("pumping.csv", pumping_artifact(&cfg)?),
        (
            "microwave_uniform.csv",
            microwave_artifact(&cfg, PopulationState::Uniform, 2001)?,
        ),
        (
            "microwave_pumped.csv",
            microwave_artifact(&cfg, PopulationState::Pumped, 2001)?,
        ),
        ("montecarlo.csv", montecarlo_artifact(&cfg)?),
    ];
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (name, artifact) in files {
        let path = dir.join(name);
        fs::write(&path, &artifact.contents).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn determinism(dir: &Path, seed: u64) -> Result<Check> {
    let first = write_artifacts(dir, seed)?;
    let rerun_dir = dir.join(".rerun");
    let second = write_artifacts(&rerun_dir, seed)?;
    let mut mismatched = Vec::new();
    for (a, b) in first.iter().zip(&second) {
        let ba = fs::read(a).map_err(|e| Error::io(a, e))?;
        let bb = fs::read(b).map_err(|e| Error::io(b, e))?;
        if ba != bb {
            mismatched.push(
                a.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
            );
        }
    }
    fs::remove_dir_all(&rerun_dir).map_err(|e| Error::io(&rerun_dir, e))?;
    Ok((
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!(
                "{} artifacts byte-identical across two runs in {}",
                first.len(),
                dir.display()
            )
        } else {
            format!("differing artifacts: {}", mismatched.join(", "))
        },
    ))
}
