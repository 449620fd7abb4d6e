//! Write, store and read: the memory timeline.
//!
//! Writing leaves a [`GratingState`]. Reading diffracts the read beam off
//! that grating into the probe mode. The diffracted intensity is
//! η₀·I_R(t)·b₁(t)², where b₁(t) follows the ballistic law from the write
//! instant. Reading never changes b₁, because each diffracted photon
//! returns its atom to the internal state it started in.
//!
//! Traces are sampled per read window. Each window carries its own first
//! and last sample, so adjacent windows share a duplicated edge time (left
//! and right limit). Trapezoidal energies then split exactly across
//! windows.

use crate::error::{Error, Result};
use crate::grating::{equilibrium_bunching, GratingState};
use crate::physcore::optical_potential_depth;
use crate::rirspec::RirParams;

/// Default diffraction efficiency calibration η₀.
pub const DEFAULT_EFFICIENCY: f64 = 1.0;

/// Minimum number of samples in a retrieval trace.
pub const MIN_TRACE_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReadKind {
    Continuous,
    /// On for the first `duty` fraction of every `period`, starting on.
    SquareModulated {
        period: f64,
        duty: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadWaveform {
    pub kind: ReadKind,
    /// Plateau intensity, W/m².
    pub intensity: f64,
    /// s
    pub duration: f64,
}

/// A stretch of the read during which the beam is steadily on or off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadWindow {
    pub start: f64,
    pub end: f64,
    pub on: bool,
}

impl ReadWaveform {
    pub fn continuous(intensity: f64, duration: f64) -> Result<Self> {
        let w = ReadWaveform {
            kind: ReadKind::Continuous,
            intensity,
            duration,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn square(intensity: f64, duration: f64, period: f64, duty: f64) -> Result<Self> {
        let w = ReadWaveform {
            kind: ReadKind::SquareModulated { period, duty },
            intensity,
            duration,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::Validation(format!(
                "read intensity must be ≥ 0, got {}",
                self.intensity
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Validation(format!(
                "read duration must be positive, got {}",
                self.duration
            )));
        }
        if let ReadKind::SquareModulated { period, duty } = self.kind {
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::Validation(format!(
                    "period must be positive, got {period}"
                )));
            }
            if !(duty > 0.0 && duty < 1.0) {
                return Err(Error::Validation(format!(
                    "duty must lie in (0, 1), got {duty}"
                )));
            }
        }
        Ok(())
    }

    /// On/off windows tiling [0, duration].
    pub fn windows(&self) -> Vec<ReadWindow> {
        match self.kind {
            ReadKind::Continuous => vec![ReadWindow {
                start: 0.0,
                end: self.duration,
                on: true,
            }],
            ReadKind::SquareModulated { period, duty } => {
                let mut out = Vec::new();
                let mut k = 0u64;
                loop {
                    let start = k as f64 * period;
                    if start >= self.duration {
                        break;
                    }
                    let mid = start + duty * period;
                    let end = (k + 1) as f64 * period;
                    out.push(ReadWindow {
                        start,
                        end: mid.min(self.duration),
                        on: true,
                    });
                    if mid < self.duration {
                        out.push(ReadWindow {
                            start: mid,
                            end: end.min(self.duration),
                            on: false,
                        });
                    }
                    k += 1;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryTimeline {
    /// s
    pub write_duration: f64,
    /// Two-photon detuning δ during the write, rad/s.
    pub write_delta: f64,
    /// Dark time t_s between the end of the write and the start of the read.
    pub storage_time: f64,
    pub read: ReadWaveform,
}

impl MemoryTimeline {
    pub fn validate(&self) -> Result<()> {
        if !(self.write_duration >= 0.0 && self.storage_time >= 0.0) {
            return Err(Error::Validation("timeline durations must be ≥ 0".into()));
        }
        if !self.write_delta.is_finite() {
            return Err(Error::Validation("write detuning must be finite".into()));
        }
        self.read.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTrace {
    /// Seconds from the start of the read. Non-decreasing; window edges
    /// appear twice.
    pub times: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Read window each sample belongs to.
    pub window_of: Vec<usize>,
    pub windows: Vec<ReadWindow>,
    /// Absolute timeline coordinate of the read start.
    pub read_start: f64,
    pub grating_before: GratingState,
    pub grating_after: GratingState,
}

/// Writes a grating with the coupling and probe of `params`.
///
/// Contrast is the equilibrium bunching in the interference potential,
/// reduced by exp(−δ²/(qu)²) when the pattern moves at δ/q during the write.
pub fn write_grating(params: &RirParams, timeline: &MemoryTimeline) -> Result<GratingState> {
    params.validate()?;
    if !(timeline.write_duration > 0.0) {
        return Err(Error::Validation("write duration must be positive".into()));
    }
    let depth = optical_potential_depth(
        params.coupling.rabi_frequency(&params.species),
        params.probe.rabi_frequency(&params.species),
        params.coupling.detuning,
    )?;
    let peak = equilibrium_bunching(depth, params.ensemble.temperature)?;
    let x = timeline.write_delta / params.doppler_width();
    GratingState::new(
        peak * (-x * x).exp(),
        params.geometry.q,
        params.ensemble,
        timeline.write_duration,
    )
}

fn build_trace(
    state: &GratingState,
    timeline: &MemoryTimeline,
    n_samples: usize,
    efficiency: f64,
    apply_mask: bool,
) -> Result<RetrievalTrace> {
    timeline.validate()?;
    if n_samples < MIN_TRACE_SAMPLES {
        return Err(Error::SampleSize {
            got: n_samples,
            min: MIN_TRACE_SAMPLES,
        });
    }
    let read = &timeline.read;
    let windows = read.windows();
    let read_start = state.written_at + timeline.storage_time;
    let step = read.duration / (n_samples - 1) as f64;

    let mut times = Vec::with_capacity(n_samples + 2 * windows.len());
    let mut window_of = Vec::with_capacity(times.capacity());
    for (wi, w) in windows.iter().enumerate() {
        times.push(w.start);
        window_of.push(wi);
        let first = (w.start / step).floor() as usize + 1;
        for k in first.. {
            let t = k as f64 * step;
            // points within rounding of an edge are the edge sample itself
            if t >= w.end - 1e-9 * step {
                break;
            }
            if t > w.start + 1e-9 * step {
                times.push(t);
                window_of.push(wi);
            }
        }
        times.push(w.end);
        window_of.push(wi);
    }

    let plateau = efficiency * read.intensity;
    let intensity = times
        .iter()
        .zip(&window_of)
        .map(|(&t, &wi)| {
            if apply_mask && !windows[wi].on {
                0.0
            } else {
                let b = state.contrast_at(read_start + t);
                plateau * b * b
            }
        })
        .collect();

    Ok(RetrievalTrace {
        times,
        intensity,
        window_of,
        windows,
        read_start,
        grating_before: *state,
        grating_after: *state,
    })
}

/// Retrieval trace for the read waveform of `timeline`, with η₀ = 1.
pub fn retrieve(
    state: &GratingState,
    timeline: &MemoryTimeline,
    n_samples: usize,
) -> Result<RetrievalTrace> {
    retrieve_with_efficiency(state, timeline, n_samples, DEFAULT_EFFICIENCY)
}

pub fn retrieve_with_efficiency(
    state: &GratingState,
    timeline: &MemoryTimeline,
    n_samples: usize,
    efficiency: f64,
) -> Result<RetrievalTrace> {
    build_trace(state, timeline, n_samples, efficiency, true)
}

/// Repeated reads with a square-modulated beam.
pub fn multi_read(
    state: &GratingState,
    timeline: &MemoryTimeline,
    n_samples: usize,
) -> Result<RetrievalTrace> {
    if !matches!(timeline.read.kind, ReadKind::SquareModulated { .. }) {
        return Err(Error::Validation(
            "multi_read needs a square-modulated read".into(),
        ));
    }
    retrieve(state, timeline, n_samples)
}

/// The same read as `timeline` with the beam held on throughout, sampled on
/// the identical time grid.
pub fn continuous_reference(
    state: &GratingState,
    timeline: &MemoryTimeline,
    n_samples: usize,
) -> Result<RetrievalTrace> {
    build_trace(state, timeline, n_samples, DEFAULT_EFFICIENCY, false)
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

/// Pulse energy: trapezoidal area under the trace.
pub fn retrieved_energy(trace: &RetrievalTrace) -> Result<f64> {
    if trace.times.len() < 2 {
        return Err(Error::SampleSize {
            got: trace.times.len(),
            min: 2,
        });
    }
    Ok(trapezoid(&trace.times, &trace.intensity))
}

/// Trapezoidal energy inside each read window, in window order.
pub fn window_energies(trace: &RetrievalTrace) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.windows.len());
    let mut i = 0;
    while i < trace.times.len() {
        let wi = trace.window_of[i];
        let mut j = i;
        while j + 1 < trace.times.len() && trace.window_of[j + 1] == wi {
            j += 1;
        }
        out.push(trapezoid(&trace.times[i..=j], &trace.intensity[i..=j]));
        i = j + 1;
    }
    out
}

/// Retrieved energy versus write detuning: one full write/read per δ.
pub fn storage_spectrum(
    params: &RirParams,
    timeline: &MemoryTimeline,
    deltas: &[f64],
    n_samples: usize,
) -> Result<Vec<f64>> {
    deltas
        .iter()
        .map(|&d| {
            let tl = MemoryTimeline {
                write_delta: d,
                ..*timeline
            };
            let state = write_grating(params, &tl)?;
            retrieved_energy(&retrieve(&state, &tl, n_samples)?)
        })
        .collect()
}

/// `t_us,intensity` CSV text.
pub fn trace_csv(trace: &RetrievalTrace) -> String {
    let mut out = String::from("t_us,intensity\n");
    for (t, i) in trace.times.iter().zip(&trace.intensity) {
        out.push_str(&format!("{:.8e},{:.8e}\n", t * 1e6, i));
    }
    out
}
