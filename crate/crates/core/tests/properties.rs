use std::f64::consts::{LN_2, SQRT_2};

use proptest::prelude::*;

use rir_core::fitting::{fit_curve, Model};
use rir_core::grating::{
    analytic_decay, equilibrium_bunching, monte_carlo_decay, storage_lifetime, GratingState,
};
use rir_core::physcore::{
    grating_geometry, most_probable_speed, optical_potential_depth, units, AtomSpecies, Beam,
    Polarization, ThermalEnsemble, BOHR_MAGNETON, PLANCK,
};
use rir_core::protocol::{retrieve, storage_spectrum, MemoryTimeline, ReadWaveform};
use rir_core::pumping::{microwave_spectrum, pump_trajectory, ZeemanPopulations};
use rir_core::rirspec::{peak_to_peak_linewidth, rir_lineshape, transmission_spectrum, RirParams};
use rir_core::{config::ScenarioConfig, protocol::write_grating};

fn cs() -> AtomSpecies {
    AtomSpecies::cesium()
}

fn params(theta_deg: f64, t_uk: f64, ic_mw: f64, scale: f64) -> RirParams {
    let s = cs();
    RirParams {
        species: s,
        geometry: grating_geometry(units::deg(theta_deg), s.wavelength).unwrap(),
        ensemble: ThermalEnsemble::new(units::uk(t_uk), &s).unwrap(),
        coupling: Beam::new(
            units::mw_cm2(ic_mw),
            -units::mhz_to_rad(30.0),
            Polarization::SigmaPlus,
        )
        .unwrap(),
        probe: Beam::new(
            units::mw_cm2(0.2),
            -units::mhz_to_rad(30.0),
            Polarization::SigmaPlus,
        )
        .unwrap(),
        amplitude_scale: scale,
    }
}

/// Linewidth on a grid scaled to qu, so the sampled extrema sit at the same
/// relative positions for every parameter set.
fn scaled_linewidth(p: &RirParams) -> f64 {
    let qu = p.doppler_width();
    let curve = transmission_spectrum(p, -6.0 * qu, 6.0 * qu, 1201).unwrap();
    peak_to_peak_linewidth(&curve).unwrap()
}

proptest! {
    #[test]
    fn q_increases_and_period_decreases(a in 0.001f64..3.1, b in 0.001f64..3.1) {
        prop_assume!(a < b);
        let ga = grating_geometry(a, 852e-9).unwrap();
        let gb = grating_geometry(b, 852e-9).unwrap();
        prop_assert!(gb.q > ga.q);
        prop_assert!(gb.lambda_grating < ga.lambda_grating);
    }

    #[test]
    fn speed_doubles_when_temperature_quadruples(t in 1e-9f64..1e-1) {
        let u1 = most_probable_speed(t, &cs()).unwrap();
        let u4 = most_probable_speed(4.0 * t, &cs()).unwrap();
        prop_assert!((u4 / u1 - 2.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn depth_is_bilinear(c in 0.1f64..1e9, p in 0.1f64..1e9, k in 0.1f64..100.0, d in 1e6f64..1e9) {
        let u = optical_potential_depth(c, p, d).unwrap();
        let uc = optical_potential_depth(k * c, p, d).unwrap();
        let up = optical_potential_depth(c, k * p, d).unwrap();
        prop_assert!((uc / (k * u) - 1.0).abs() < 1e-14);
        prop_assert!((up / (k * u) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn transmission_is_odd(delta in -1e6f64..1e6, t in 10.0f64..2000.0, ic in 0.0f64..500.0) {
        let p = params(2.0, t, ic, 0.7);
        let sum = rir_lineshape(delta, &p) + rir_lineshape(-delta, &p);
        prop_assert!((sum - 2.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn width_ignores_amplitude(scale in 0.01f64..5.0, ic in 1.0f64..500.0) {
        let reference = scaled_linewidth(&params(2.0, 320.0, 120.0, 0.7));
        let w = scaled_linewidth(&params(2.0, 320.0, ic, scale));
        prop_assert_eq!(w.to_bits(), reference.to_bits());
    }

    #[test]
    fn bunching_monotone(u1 in 1e-32f64..1e-26, u2 in 1e-32f64..1e-26, t1 in 1e-6f64..1e-2, t2 in 1e-6f64..1e-2) {
        let (ulo, uhi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
        let (tlo, thi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(equilibrium_bunching(uhi, tlo).unwrap() >= equilibrium_bunching(ulo, tlo).unwrap());
        prop_assert!(equilibrium_bunching(uhi, thi).unwrap() <= equilibrium_bunching(uhi, tlo).unwrap());
    }

    #[test]
    fn decay_intensity_is_amplitude_squared(t_uk in 1.0f64..1000.0, b1 in 0.0f64..1.0) {
        let s = cs();
        let g = grating_geometry(units::deg(2.0), s.wavelength).unwrap();
        let ens = ThermalEnsemble::new(units::uk(t_uk), &s).unwrap();
        let state = GratingState::new(b1, g.q, ens, 0.0).unwrap();
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 2e-6).collect();
        let c = analytic_decay(&state, &times).unwrap();
        prop_assert_eq!(c.amplitude[0], 1.0);
        prop_assert!(c.amplitude.windows(2).all(|w| w[1] <= w[0]));
        for (a, i) in c.amplitude.iter().zip(&c.intensity) {
            prop_assert_eq!(a * a, *i);
        }
    }

    #[test]
    fn microwave_offsets_scale_with_field(b_mg in 1.0f64..2000.0, k in 1.1f64..10.0) {
        let s = cs();
        let pops = ZeemanPopulations::uniform_upper();
        let a = microwave_spectrum(&pops, units::mg(b_mg), &s, 1e3).unwrap();
        let b = microwave_spectrum(&pops, units::mg(k * b_mg), &s, 1e3).unwrap();
        let unit = BOHR_MAGNETON * units::mg(b_mg) / PLANCK / 4.0;
        prop_assert_eq!(a.frequencies.len(), 8);
        for (fa, fb) in a.frequencies.iter().zip(&b.frequencies) {
            prop_assert!((fb / fa / k - 1.0).abs() < 1e-12);
            let odd = fa / unit;
            prop_assert!((odd - odd.round()).abs() < 1e-9 && odd.round() as i64 % 2 != 0);
        }
        prop_assert!(a.frequencies.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn read_never_changes_the_grating(ir in 0.0f64..3000.0, duty in 0.05f64..0.95, period_us in 2.0f64..50.0) {
        let p = ScenarioConfig::default().rir_params().unwrap();
        let mut tl = MemoryTimeline {
            write_duration: 50e-6,
            write_delta: 0.0,
            storage_time: 5e-6,
            read: ReadWaveform::square(ir, 100e-6, period_us * 1e-6, duty).unwrap(),
        };
        let state = write_grating(&p, &tl).unwrap();
        let square = retrieve(&state, &tl, 64).unwrap();
        tl.read = ReadWaveform::continuous(ir, 100e-6).unwrap();
        let cw = retrieve(&state, &tl, 64).unwrap();
        prop_assert_eq!(square.grating_after, state);
        prop_assert_eq!(cw.grating_after, state);
        for (t, i) in square.times.iter().zip(&square.intensity) {
            let b = state.contrast_at(square.read_start + t);
            prop_assert!(*i == 0.0 || *i == ir * b * b);
            prop_assert!(*i >= 0.0);
        }
    }

    #[test]
    fn peak_retrieval_is_linear_in_read_intensity(ir in 1.0f64..3000.0, k in 0.1f64..10.0) {
        let p = ScenarioConfig::default().rir_params().unwrap();
        let mut tl = MemoryTimeline {
            write_duration: 50e-6,
            write_delta: 0.0,
            storage_time: 0.0,
            read: ReadWaveform::continuous(ir, 60e-6).unwrap(),
        };
        let state = write_grating(&p, &tl).unwrap();
        let a = retrieve(&state, &tl, 32).unwrap().intensity[0];
        tl.read.intensity = k * ir;
        let b = retrieve(&state, &tl, 32).unwrap().intensity[0];
        prop_assert!((b / (k * a) - 1.0).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn derivative_fit_is_scale_invariant(k in 0.01f64..100.0, amp in 0.05f64..0.9) {
        let qu = 5.1e4;
        let x: Vec<f64> = (0..301).map(|i| -4.0 * qu + 8.0 * qu * i as f64 / 300.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - amp * (v / qu) * (-(v / qu).powi(2)).exp() + 1e-3 * (v * 1e-3).sin()).collect();
        let ys: Vec<f64> = y.iter().map(|v| k * v).collect();
        let a = fit_curve(Model::GaussianDerivative, &x, &y, None).unwrap();
        let b = fit_curve(Model::GaussianDerivative, &x, &ys, None).unwrap();
        prop_assert!((b.get("A").unwrap() / (k * a.get("A").unwrap()) - 1.0).abs() < 1e-9);
        prop_assert!((b.get("c").unwrap() / (k * a.get("c").unwrap()) - 1.0).abs() < 1e-9);
        prop_assert!((b.get("w").unwrap() / a.get("w").unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((b.get("x0").unwrap() - a.get("x0").unwrap()).abs() < 1e-9 * qu);
    }

    #[test]
    fn decay_fit_is_scale_invariant(k in 0.01f64..100.0, tau in 5e-6f64..100e-6) {
        let t: Vec<f64> = (0..181).map(|i| 3.0 * tau * i as f64 / 180.0).collect();
        let y: Vec<f64> = t.iter().map(|v| (-(v / tau).powi(2)).exp() + 2e-3 * (v / tau * 7.0).cos()).collect();
        let ys: Vec<f64> = y.iter().map(|v| k * v).collect();
        let a = fit_curve(Model::GaussianDecay, &t, &y, None).unwrap();
        let b = fit_curve(Model::GaussianDecay, &t, &ys, None).unwrap();
        prop_assert!((b.get("B").unwrap() / (k * a.get("B").unwrap()) - 1.0).abs() < 1e-9);
        prop_assert!((b.get("tau").unwrap() / a.get("tau").unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((b.get("t0").unwrap() - a.get("t0").unwrap()).abs() < 1e-9 * tau);
    }

    #[test]
    fn fit_history_never_increases(amp in 0.05f64..0.9, shift in -0.5f64..0.5) {
        let x: Vec<f64> = (0..201).map(|i| -4.0 + 8.0 * i as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|v| { let d = v - shift; 1.0 - amp * d * (-d * d).exp() + 0.01 * (13.0 * v).sin() }).collect();
        let f = fit_curve(Model::GaussianDerivative, &x, &y, None).unwrap();
        prop_assert!(f.history.windows(2).all(|h| h[1] <= h[0]));
        prop_assert!(f.residual_norm >= 0.0);
    }

    #[test]
    fn pumping_conserves_population(i_mw in 0.1f64..500.0, det_mhz in -100.0f64..100.0, minus in any::<bool>()) {
        let pol = if minus { Polarization::SigmaMinus } else { Polarization::SigmaPlus };
        let beam = Beam::new(units::mw_cm2(i_mw), units::mhz_to_rad(det_mhz), pol).unwrap();
        let traj = pump_trajectory(&ZeemanPopulations::uniform_upper(), &beam, 200e-6, &cs(), Some(10_000)).unwrap();
        let target = if minus { -4 } else { 4 };
        for w in traj.windows(2) {
            prop_assert!((w[1].total() - 1.0).abs() < 1e-10);
            prop_assert!(w[1].upper(target) >= w[0].upper(target));
        }
    }
}

#[test]
fn width_scales_with_root_temperature_and_half_angle() {
    let base = scaled_linewidth(&params(2.0, 320.0, 120.0, 0.7));
    for t in [80.0, 320.0, 1280.0] {
        let w = scaled_linewidth(&params(2.0, t, 120.0, 0.7));
        assert!((w / base - (t / 320.0f64).sqrt()).abs() < 1e-6, "T = {t}");
    }
    for deg in [1.0f64, 2.0, 4.0] {
        let w = scaled_linewidth(&params(deg, 320.0, 120.0, 0.7));
        let ratio = (deg.to_radians() / 2.0).sin() / (1.0f64.to_radians()).sin();
        assert!((w / base - ratio).abs() < 1e-6, "theta = {deg}");
    }
}

#[test]
fn cesium_doppler_temperature() {
    assert!((cs().doppler_temperature() / 125e-6 - 1.0).abs() < 0.01);
}

#[test]
fn lifetime_times_half_angle_sine_is_constant() {
    let ens = ThermalEnsemble::new(320e-6, &cs()).unwrap();
    let prods: Vec<f64> = [1.0f64, 2.0, 4.0]
        .iter()
        .map(|d| {
            let g = grating_geometry(d.to_radians(), cs().wavelength).unwrap();
            storage_lifetime(&g, &ens) * (d.to_radians() / 2.0).sin()
        })
        .collect();
    for p in &prods {
        assert!((p / prods[0] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn monte_carlo_tracks_analytic_for_five_seeds() {
    let s = cs();
    let g = grating_geometry(units::deg(2.0), s.wavelength).unwrap();
    let ens = ThermalEnsemble::new(320e-6, &s).unwrap();
    let state = GratingState::new(1.0, g.q, ens, 0.0).unwrap();
    let times: Vec<f64> = (0..31)
        .map(|k| 3.0 * state.lifetime() * k as f64 / 30.0)
        .collect();
    let exact = analytic_decay(&state, &times).unwrap();
    for seed in 100..105 {
        let mc = monte_carlo_decay(&state, 100_000, seed, &times).unwrap();
        for (a, i) in mc.amplitude.iter().zip(&mc.intensity) {
            assert_eq!(a * a, *i);
        }
        for (a, b) in mc.amplitude.iter().zip(&exact.amplitude) {
            assert!((a - b).abs() < 0.01, "seed {seed}");
        }
    }
}

#[test]
fn retrieval_envelope_gives_lifetime() {
    let p = ScenarioConfig::default().rir_params().unwrap();
    let tl = MemoryTimeline {
        write_duration: 100e-6,
        write_delta: 0.0,
        storage_time: 0.0,
        read: ReadWaveform::continuous(1400.0, 90e-6).unwrap(),
    };
    let state = write_grating(&p, &tl).unwrap();
    let trace = retrieve(&state, &tl, 181).unwrap();
    let fit = fit_curve(Model::GaussianDecay, &trace.times, &trace.intensity, None).unwrap();
    let tau_g = SQRT_2 / p.doppler_width();
    assert!((fit.get("tau").unwrap() / tau_g - 1.0).abs() < 0.01);
}

#[test]
fn storage_spectrum_is_subnatural() {
    let p = ScenarioConfig::default().rir_params().unwrap();
    let tl = MemoryTimeline {
        write_duration: 100e-6,
        write_delta: 0.0,
        storage_time: 0.0,
        read: ReadWaveform::continuous(1400.0, 90e-6).unwrap(),
    };
    let qu = p.doppler_width();
    let deltas = [0.0, qu * (LN_2 / 2.0).sqrt()];
    let e = storage_spectrum(&p, &tl, &deltas, 64).unwrap();
    assert!((e[1] / e[0] - 0.5).abs() < 1e-12);
    let fwhm = qu * (2.0 * LN_2).sqrt();
    assert!(fwhm / p.species.gamma < 3e-3);
    assert!(units::rad_to_hz(fwhm) < 5.2e6 / 300.0);
}
