//! Damped Gauss-Newton (Levenberg-Marquardt) fits of the two lineshapes the
//! analysis needs, and the inversions from fitted widths to temperature.
//!
//! Models:
//! - `GaussianDerivative`: y = c − A·(x−x₀)·exp(−(x−x₀)²/w²)
//! - `GaussianDecay`: y = B·exp(−((x−t₀)/τ)²)
//!
//! Both are solved in nondimensional coordinates X = (x − x̄)/x_range,
//! Y = y/max|y|. Each model keeps its functional form under that map, so
//! the solver works on O(1) numbers whatever the abscissa units.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::physcore::{AtomSpecies, BeamGeometry, BOLTZMANN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    GaussianDerivative,
    GaussianDecay,
}

impl Model {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Model::GaussianDerivative => &["c", "A", "x0", "w"],
            Model::GaussianDecay => &["B", "t0", "tau"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::GaussianDerivative => "gaussian_derivative",
            Model::GaussianDecay => "gaussian_decay",
        }
    }

    pub fn eval(self, p: &[f64], x: f64) -> f64 {
        match self {
            Model::GaussianDerivative => {
                let d = x - p[2];
                p[0] - p[1] * d * (-(d * d) / (p[3] * p[3])).exp()
            }
            Model::GaussianDecay => {
                let z = (x - p[1]) / p[2];
                p[0] * (-z * z).exp()
            }
        }
    }

    /// Affine map (slope, offset) from each scaled parameter back to the
    /// original one: p = slope·p' + offset.
    fn unscale_map(self, s: &Scaling) -> Vec<(f64, f64)> {
        match self {
            Model::GaussianDerivative => vec![
                (s.y_scale, 0.0),
                (s.y_scale / s.x_scale, 0.0),
                (s.x_scale, s.x_shift),
                (s.x_scale, 0.0),
            ],
            Model::GaussianDecay => {
                vec![(s.y_scale, 0.0), (s.x_scale, s.x_shift), (s.x_scale, 0.0)]
            }
        }
    }

    fn initial_guess(self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let range = x[n - 1] - x[0];
        let imax = argmax(y);
        match self {
            Model::GaussianDerivative => {
                let imin = argmin(y);
                let k = (n / 20).max(1);
                let c =
                    (y[..k].iter().sum::<f64>() + y[n - k..].iter().sum::<f64>()) / (2 * k) as f64;
                let x0 = 0.5 * (x[imax] + x[imin]);
                let mut w = (x[imin] - x[imax]).abs() / std::f64::consts::SQRT_2;
                if !(w > 0.0) {
                    w = range.abs() / 10.0;
                }
                let h = 0.5 * (y[imax] - y[imin]);
                let sign = if x[imax] <= x[imin] { 1.0 } else { -1.0 };
                let a = sign * h * std::f64::consts::SQRT_2 * 0.5f64.exp() / w;
                vec![c, a, x0, w]
            }
            Model::GaussianDecay => {
                let b = y[imax];
                let t0 = x[imax];
                let level = b * (-1.0f64).exp();
                let mut tau = f64::NAN;
                for i in imax + 1..n {
                    if y[i] < level {
                        let f = (y[i - 1] - level) / (y[i - 1] - y[i]);
                        tau = x[i - 1] + f * (x[i] - x[i - 1]) - t0;
                        break;
                    }
                }
                if !(tau > 0.0) {
                    tau = (x[n - 1] - t0).max(range.abs() / 2.0);
                }
                vec![b, t0, tau]
            }
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "gaussian_derivative" => Ok(Model::GaussianDerivative),
            "gaussian_decay" => Ok(Model::GaussianDecay),
            _ => Err(Error::Validation(format!(
                "unknown model `{s}` (expected gaussian-derivative or gaussian-decay)"
            ))),
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

struct Scaling {
    x_shift: f64,
    x_scale: f64,
    y_scale: f64,
}

impl Scaling {
    fn from_data(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let (lo, hi) = (x[0], x[n - 1]);
        let x_scale = if hi > lo { hi - lo } else { 1.0 };
        let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Scaling {
            x_shift: 0.5 * (lo + hi),
            x_scale,
            y_scale: if y_max > 0.0 { y_max } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative parameter-change tolerance.
    pub xtol: f64,
    /// Gradient infinity-norm tolerance, in scaled units.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            xtol: 1e-8,
            gtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: Model,
    /// (name, value) in model order, in the data's own units.
    pub params: Vec<(String, f64)>,
    /// Variance estimate per parameter, same order and units squared.
    pub covariance_diag: Vec<f64>,
    /// Euclidean norm of residuals after scaling y by max|y|.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Set when either the step or the gradient criterion was met.
    pub converged: bool,
    /// Scaled residual norm after each accepted step, starting from the
    /// initial guess.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        let i = self.params.iter().position(|(n, _)| n == name)?;
        Some(self.covariance_diag[i].sqrt())
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|(_, v)| *v).collect()
    }

    /// Record with keys `model, params, sigma, iterations, converged,
    /// residual_norm`.
    pub fn to_json(&self) -> Value {
        let mut params = Map::new();
        let mut sigma = Map::new();
        for (i, (name, v)) in self.params.iter().enumerate() {
            params.insert(name.clone(), json!(v));
            sigma.insert(name.clone(), json!(self.covariance_diag[i].sqrt()));
        }
        json!({
            "model": self.model.name(),
            "params": params,
            "sigma": sigma,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_norm": self.residual_norm,
        })
    }

    /// Flat `key = value` report.
    pub fn to_report(&self) -> String {
        let mut out = format!("model = {}\n", self.model.name());
        for (i, (name, v)) in self.params.iter().enumerate() {
            out.push_str(&format!("param.{name} = {v:.9e}\n"));
            out.push_str(&format!(
                "sigma.{name} = {:.9e}\n",
                self.covariance_diag[i].sqrt()
            ));
        }
        out.push_str(&format!("iterations = {}\n", self.iterations));
        out.push_str(&format!("converged = {}\n", self.converged));
        out.push_str(&format!("residual_norm = {:.9e}\n", self.residual_norm));
        out
    }
}

/// Fits `model` to (x, y) with default options.
///
/// `initial_guess` may name any subset of the model parameters; the rest are
/// estimated from the data.
pub fn fit_curve(
    model: Model,
    x: &[f64],
    y: &[f64],
    initial_guess: Option<&[(&str, f64)]>,
) -> Result<FitResult> {
    fit_curve_with(model, x, y, initial_guess, &FitOptions::default())
}

pub fn fit_curve_with(
    model: Model,
    x: &[f64],
    y: &[f64],
    initial_guess: Option<&[(&str, f64)]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let names = model.param_names();
    let m = names.len();
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "{} x values but {} y values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 * m {
        return Err(Error::Validation(format!(
            "{} needs at least {} points, got {}",
            model,
            2 * m,
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite data".into()));
    }
    // repeated abscissae are allowed (square-read traces duplicate window edges)
    if x.windows(2).any(|w| !(w[1] >= w[0])) || !(x[x.len() - 1] > x[0]) {
        return Err(Error::Validation(
            "abscissa must be sorted and span a nonzero range".into(),
        ));
    }

    let mut guess = model.initial_guess(x, y);
    for &(name, v) in initial_guess.unwrap_or(&[]) {
        let i = names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Validation(format!("{model} has no parameter `{name}`")))?;
        guess[i] = v;
    }

    let scaling = Scaling::from_data(x, y);
    let map = model.unscale_map(&scaling);
    let xs: Vec<f64> = x
        .iter()
        .map(|v| (v - scaling.x_shift) / scaling.x_scale)
        .collect();
    let ys: Vec<f64> = y.iter().map(|v| v / scaling.y_scale).collect();
    let p0: Vec<f64> = guess
        .iter()
        .zip(&map)
        .map(|(p, (a, b))| (p - b) / a)
        .collect();

    let problem = Problem {
        model,
        x: &xs,
        y: &ys,
    };
    let sol = levenberg_marquardt(&problem, p0, opts)?;

    let params = names
        .iter()
        .zip(&sol.params)
        .zip(&map)
        .map(|((n, p), (a, b))| (n.to_string(), a * p + b))
        .collect();
    let covariance_diag = sol
        .variance
        .iter()
        .zip(&map)
        .map(|(v, (a, _))| v * a * a)
        .collect();
    let result = FitResult {
        model,
        params,
        covariance_diag,
        residual_norm: sol.cost.sqrt(),
        iterations: sol.iterations,
        converged: sol.converged,
        history: sol.history.iter().map(|c| c.sqrt()).collect(),
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NoConvergence(Box::new(result)))
    }
}

struct Problem<'a> {
    model: Model,
    x: &'a [f64],
    y: &'a [f64],
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .map(|(&x, &y)| self.model.eval(p, x) - y),
        )
    }

    /// Central differences with step 1e-6·max(|p_j|, 1).
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(n, p.len());
        let mut q = p.to_vec();
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1.0);
            q[j] = p[j] + h;
            let up = self.residuals(&q);
            q[j] = p[j] - h;
            let down = self.residuals(&q);
            q[j] = p[j];
            jac.set_column(j, &((up - down) / (2.0 * h)));
        }
        jac
    }
}

struct Solution {
    params: Vec<f64>,
    variance: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn levenberg_marquardt(
    problem: &Problem<'_>,
    mut p: Vec<f64>,
    opts: &FitOptions,
) -> Result<Solution> {
    let m = p.len();
    let mut r = problem.residuals(&p);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Validation(
            "initial guess gives non-finite residuals".into(),
        ));
    }
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = problem.jacobian(&p);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() < opts.gtol {
            converged = true;
            break;
        }
        let diag: Vec<f64> = (0..m).map(|i| jtj[(i, i)]).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| !(d > dmax * 1e-24)) {
            return Err(Error::RankDeficient);
        }

        loop {
            let mut damped = jtj.clone();
            for i in 0..m {
                damped[(i, i)] += lambda * diag[i];
            }
            let step = damped
                .cholesky()
                .ok_or(Error::RankDeficient)?
                .solve(&(-&grad));
            let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small_step = step.norm() <= opts.xtol * (p_norm + opts.xtol);
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = problem.residuals(&trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial < cost {
                p = trial;
                r = r_trial;
                cost = c_trial;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                converged = small_step;
                break;
            }
            if small_step {
                // no descent left at rounding level
                converged = true;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if converged || lambda > 1e16 {
            break;
        }
    }

    let jac = problem.jacobian(&p);
    let jtj = jac.transpose() * &jac;
    let dof = (problem.x.len() - m) as f64;
    let s2 = cost / dof;
    let variance = match jtj.try_inverse() {
        Some(inv) => (0..m).map(|i| (s2 * inv[(i, i)]).max(0.0)).collect(),
        None => vec![f64::NAN; m],
    };
    Ok(Solution {
        params: p,
        variance,
        cost,
        iterations,
        converged,
        history,
    })
}

/// Temperature whose Doppler width qu equals `width` (rad/s).
pub fn temperature_from_width(
    width: f64,
    geometry: &BeamGeometry,
    species: &AtomSpecies,
) -> Result<f64> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Domain(format!(
            "width must be positive, got {width}"
        )));
    }
    let u = width / geometry.q;
    Ok(species.mass * u * u / (2.0 * BOLTZMANN))
}

/// Temperature whose ballistic lifetime √2/(qu) equals `tau_g` (s).
pub fn temperature_from_lifetime(
    tau_g: f64,
    geometry: &BeamGeometry,
    species: &AtomSpecies,
) -> Result<f64> {
    if !(tau_g > 0.0 && tau_g.is_finite()) {
        return Err(Error::Domain(format!(
            "lifetime must be positive, got {tau_g}"
        )));
    }
    let u = std::f64::consts::SQRT_2 / (geometry.q * tau_g);
    Ok(species.mass * u * u / (2.0 * BOLTZMANN))
}
