//! Atomic density gratings: how strongly the write beams bunch the cloud,
//! and how free flight washes the bunching out again.
//!
//! The ballistic law has a closed form, amplitude e^{−(qut)²/4}. The Monte
//! Carlo generator reaches the same curve the long way round, by sampling
//! individual atom velocities and summing their phases, and serves as an
//! independent check on it.

use std::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physcore::{BeamGeometry, ThermalEnsemble, BOLTZMANN};

/// Minimum atom count accepted by [`monte_carlo_decay`].
pub const MIN_MC_ATOMS: usize = 1000;

/// The stored memory: first-harmonic density contrast at wavevector q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingState {
    /// Contrast |b₁| at the moment of writing, in [0, 1].
    pub b1: f64,
    /// rad/m
    pub q: f64,
    pub ensemble: ThermalEnsemble,
    /// Timeline coordinate (s) at which the write finished.
    pub written_at: f64,
}

impl GratingState {
    pub fn new(b1: f64, q: f64, ensemble: ThermalEnsemble, written_at: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&b1) {
            return Err(Error::Domain(format!(
                "grating contrast must be in [0, 1], got {b1}"
            )));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Domain(format!(
                "grating wavevector must be positive, got {q}"
            )));
        }
        Ok(GratingState {
            b1,
            q,
            ensemble,
            written_at,
        })
    }

    /// Intensity 1/e time τ_g = √2/(qu). Infinite for a frozen gas.
    pub fn lifetime(&self) -> f64 {
        SQRT_2 / (self.q * self.ensemble.u)
    }

    /// Ballistic contrast at absolute time `t` (clamped to the write instant).
    pub fn contrast_at(&self, t: f64) -> f64 {
        self.b1 * ballistic_amplitude(self.q * self.ensemble.u, (t - self.written_at).max(0.0))
    }
}

/// Grating amplitude and diffracted intensity versus time since writing.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    /// s
    pub times: Vec<f64>,
    /// b₁(t)/b₁(0)
    pub amplitude: Vec<f64>,
    /// amplitude², pointwise
    pub intensity: Vec<f64>,
}

impl DecayCurve {
    fn from_amplitude(times: Vec<f64>, amplitude: Vec<f64>) -> Self {
        let intensity = amplitude.iter().map(|a| a * a).collect();
        DecayCurve {
            times,
            amplitude,
            intensity,
        }
    }
}

/// I₁(κ)/I₀(κ) for κ ≥ 0.
///
/// Power series for small κ, backward recurrence on the continued fraction
/// I_{n+1}/I_n = 1/(2(n+1)/κ + I_{n+2}/I_{n+1}) above that, and the
/// large-argument expansion once the recurrence would get long.
pub fn bessel_i1_over_i0(kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    if kappa <= 20.0 {
        let y = kappa * kappa / 4.0;
        let (mut i0, mut i1) = (0.0, 0.0);
        // term_k = y^k/(k!)^2; I1 series carries an extra 1/(k+1)
        let mut term = 1.0;
        let mut k = 0.0;
        loop {
            i0 += term;
            i1 += term / (k + 1.0);
            k += 1.0;
            term *= y / (k * k);
            if term < 1e-17 * i0 {
                break;
            }
        }
        return kappa / 2.0 * i1 / i0;
    }
    if kappa <= 2000.0 {
        let n = (2.0 * kappa) as usize + 60;
        let mut r = 0.0;
        for m in (0..n).rev() {
            r = 1.0 / (2.0 * (m as f64 + 1.0) / kappa + r);
        }
        return r;
    }
    let k = kappa;
    1.0 - 1.0 / (2.0 * k) - 1.0 / (8.0 * k * k) - 1.0 / (8.0 * k * k * k)
}

/// Thermal-equilibrium contrast in the potential (U/2)(1 + cos qz):
/// b₁ = I₁(κ)/I₀(κ) with κ = U/(2k_BT).
pub fn equilibrium_bunching(depth: f64, temperature: f64) -> Result<f64> {
    if !(depth >= 0.0 && depth.is_finite()) {
        return Err(Error::Domain(format!(
            "potential depth must be ≥ 0, got {depth}"
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(bessel_i1_over_i0(depth / (2.0 * BOLTZMANN * temperature)))
}

/// τ_g = Λ/(√2·π·u), the 1/e time of the diffracted intensity.
pub fn storage_lifetime(geometry: &BeamGeometry, ensemble: &ThermalEnsemble) -> f64 {
    geometry.lambda_grating / (SQRT_2 * PI * ensemble.u)
}

fn ballistic_amplitude(qu: f64, t: f64) -> f64 {
    let x = qu * t;
    (-x * x / 4.0).exp()
}

fn check_times(times: &[f64]) -> Result<()> {
    if let Some(&t0) = times.first() {
        if !(t0 >= 0.0) {
            return Err(Error::Domain(format!(
                "times must start at t ≥ 0, got {t0}"
            )));
        }
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Domain("times must be sorted ascending".into()));
    }
    Ok(())
}

/// Closed-form washout at `times` (seconds since writing).
pub fn analytic_decay(state: &GratingState, times: &[f64]) -> Result<DecayCurve> {
    check_times(times)?;
    let qu = state.q * state.ensemble.u;
    let amplitude = times.iter().map(|&t| ballistic_amplitude(qu, t)).collect();
    Ok(DecayCurve::from_amplitude(times.to_vec(), amplitude))
}

/// Velocity along q of atom `index`, drawn from the density ∝ exp(−v²/u²).
///
/// Generator: ChaCha8 keyed by `seed`, with the atom index as stream id; one
/// standard-normal draw per atom scaled by u/√2.
pub fn sample_velocity(seed: u64, index: u64, u: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let z: f64 = StandardNormal.sample(&mut rng);
    z * u / SQRT_2
}

/// Pairwise summation; fixed split points make the result independent of
/// how the caller schedules the work.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Dephasing of `n_atoms` sampled atoms: |(1/N)Σ exp(iqvt)|.
pub fn monte_carlo_decay(
    state: &GratingState,
    n_atoms: usize,
    seed: u64,
    times: &[f64],
) -> Result<DecayCurve> {
    if n_atoms < MIN_MC_ATOMS {
        return Err(Error::SampleSize {
            got: n_atoms,
            min: MIN_MC_ATOMS,
        });
    }
    check_times(times)?;
    let u = state.ensemble.u;
    let velocities: Vec<f64> = (0..n_atoms as u64)
        .into_par_iter()
        .map(|i| sample_velocity(seed, i, u))
        .collect();
    let n = n_atoms as f64;
    let amplitude = times
        .par_iter()
        .map(|&t| {
            let phase = |v: &f64| state.q * v * t;
            let re: Vec<f64> = velocities.iter().map(|v| phase(v).cos()).collect();
            let im: Vec<f64> = velocities.iter().map(|v| phase(v).sin()).collect();
            (pairwise_sum(&re) / n).hypot(pairwise_sum(&im) / n)
        })
        .collect();
    Ok(DecayCurve::from_amplitude(times.to_vec(), amplitude))
}

/// `t_us,amplitude,intensity` CSV text.
pub fn decay_csv(curve: &DecayCurve) -> String {
    let mut out = String::from("t_us,amplitude,intensity\n");
    for i in 0..curve.times.len() {
        out.push_str(&format!(
            "{:.8e},{:.8e},{:.8e}\n",
            curve.times[i] * 1e6,
            curve.amplitude[i],
            curve.intensity[i]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physcore::{grating_geometry, units, AtomSpecies};

    /// Trapezoid rule on (1/π)∫₀^π e^{κcos t}cos(nt) dt; the integrand is
    /// periodic and smooth so the rule converges geometrically.
    fn bessel_i_quadrature(n: u32, kappa: f64) -> f64 {
        let m = 4000;
        let h = PI / m as f64;
        let f = |t: f64| (kappa * t.cos()).exp() * (n as f64 * t).cos();
        let mut s = 0.5 * (f(0.0) + f(PI));
        for k in 1..m {
            s += f(k as f64 * h);
        }
        s * h / PI
    }

    fn reference_state() -> GratingState {
        let cs = AtomSpecies::cesium();
        let g = grating_geometry(units::deg(2.0), 852.347e-9).unwrap();
        GratingState::new(0.363, g.q, ThermalEnsemble::new(320e-6, &cs).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn bessel_ratio_matches_quadrature() {
        for &k in &[
            1e-3, 0.1, 0.78, 1.0, 3.0, 10.0, 19.9, 20.1, 35.0, 120.0, 500.0,
        ] {
            let oracle = bessel_i_quadrature(1, k) / bessel_i_quadrature(0, k);
            let r = bessel_i1_over_i0(k);
            assert!(
                ((r - oracle) / oracle).abs() < 1e-10,
                "κ={k}: {r} vs {oracle}"
            );
        }
    }

    #[test]
    fn bessel_ratio_large_argument_continuity() {
        let a = bessel_i1_over_i0(1999.0);
        let b = bessel_i1_over_i0(2001.0);
        assert!(b > a && b < 1.0);
        assert!((bessel_i1_over_i0(2000.0) - (1.0 - 1.0 / 4000.0 - 1.0 / 32e6)).abs() < 1e-10);
    }

    #[test]
    fn bunching_values() {
        let cs = AtomSpecies::cesium();
        assert_eq!(equilibrium_bunching(0.0, 320e-6).unwrap(), 0.0);
        let b = equilibrium_bunching(2.0 * cs.hbar_gamma(), 320e-6).unwrap();
        assert!((b - 0.363).abs() < 5e-4, "{b}");
        assert!((bessel_i1_over_i0(10.0) - 0.949).abs() < 5e-4);
        assert!(equilibrium_bunching(-1.0, 1e-4).is_err());
        assert!(equilibrium_bunching(1e-27, 0.0).is_err());
    }

    #[test]
    fn reference_lifetime() {
        let cs = AtomSpecies::cesium();
        let g = grating_geometry(units::deg(2.0), 852.347e-9).unwrap();
        let e = ThermalEnsemble::new(320e-6, &cs).unwrap();
        let tau = storage_lifetime(&g, &e);
        assert!((tau - 27.5e-6).abs() < 0.05e-6, "{tau}");
        let s = reference_state();
        assert!(((s.lifetime() - tau) / tau).abs() < 1e-12);
        let e4 = ThermalEnsemble::new(4.0 * 320e-6, &cs).unwrap();
        assert!((storage_lifetime(&g, &e4) / tau - 0.5).abs() < 1e-12);
        let g4 = grating_geometry(units::deg(4.0), 852.347e-9).unwrap();
        // not exactly a half: sin(2°) ≠ 2 sin(1°)
        assert!((storage_lifetime(&g4, &e) / tau - 0.5).abs() < 2e-4);
    }

    #[test]
    fn analytic_points() {
        let s = reference_state();
        let tau = s.lifetime();
        let c = analytic_decay(&s, &[0.0, tau, 30e-6]).unwrap();
        assert_eq!(c.amplitude[0], 1.0);
        assert_eq!(c.intensity[0], 1.0);
        assert!((c.intensity[1] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((c.amplitude[1] - 0.6065).abs() < 1e-4);
        assert!((c.intensity[2] - 0.304).abs() < 1e-3);
        for (i, a) in c.intensity.iter().zip(&c.amplitude) {
            assert_eq!(*i, a * a);
        }
        assert!(analytic_decay(&s, &[1.0, 0.0]).is_err());
        assert!(analytic_decay(&s, &[-1.0]).is_err());
    }

    #[test]
    fn contrast_follows_birth_time() {
        let mut s = reference_state();
        s.written_at = 5e-6;
        assert_eq!(s.contrast_at(5e-6), s.b1);
        assert_eq!(s.contrast_at(0.0), s.b1);
        let tau = s.lifetime();
        assert!((s.contrast_at(5e-6 + tau) / s.b1 - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn state_validation() {
        let e = ThermalEnsemble::frozen();
        assert!(GratingState::new(1.1, 1.0, e, 0.0).is_err());
        assert!(GratingState::new(0.5, 0.0, e, 0.0).is_err());
        assert!(GratingState::new(0.5, 1.0, e, 0.0).is_ok());
    }

    #[test]
    fn monte_carlo_small_run() {
        let s = reference_state();
        let tau = s.lifetime();
        let times: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1 * tau).collect();
        let mc = monte_carlo_decay(&s, 20_000, 7, &times).unwrap();
        assert!((mc.amplitude[0] - 1.0).abs() < 1e-15);
        let an = analytic_decay(&s, &times).unwrap();
        for (a, b) in mc.amplitude.iter().zip(&an.amplitude) {
            assert!((a - b).abs() < 0.03);
        }
    }

    #[test]
    fn frozen_gas_never_decays() {
        let s = GratingState::new(0.5, 2.5e5, ThermalEnsemble::frozen(), 0.0).unwrap();
        let mc = monte_carlo_decay(&s, 1000, 1, &[0.0, 1e-5, 1e-3]).unwrap();
        assert!(mc.amplitude.iter().all(|&a| a == 1.0));
        assert!(s.lifetime().is_infinite());
    }

    #[test]
    fn sample_size_error() {
        assert!(matches!(
            monte_carlo_decay(&reference_state(), 999, 1, &[0.0]),
            Err(Error::SampleSize { got: 999, .. })
        ));
    }

    #[test]
    fn velocity_sampling_is_pure() {
        let a = sample_velocity(42, 17, 0.2);
        let b = sample_velocity(42, 17, 0.2);
        assert_eq!(a, b);
        assert_ne!(a, sample_velocity(42, 18, 0.2));
        assert_ne!(a, sample_velocity(43, 17, 0.2));
    }

    #[test]
    fn pairwise_sum_accuracy() {
        let xs = vec![0.1; 10_000];
        assert!((pairwise_sum(&xs) - 1000.0).abs() < 1e-10);
    }
}
