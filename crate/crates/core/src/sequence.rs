//! Line-oriented pulse-sequence files.
//!
//! ```text
//! # write, wait, read
//! write duration=100us delta=0
//! store duration=10us
//! read kind=cw intensity=140mw/cm2 duration=200us
//! read kind=square intensity=140mw/cm2 duration=200us period=10us duty=0.5
//! ```
//!
//! Every dimensioned value needs a unit suffix: `s`, `ms`, `us` for times,
//! `hz`, `khz`, `mhz` for the (cyclic) write detuning, `mw/cm2` or `w/m2`
//! for intensities. A bare `0` is accepted for the detuning.

use crate::error::{Error, Result};
use crate::physcore::units;
use crate::protocol::{MemoryTimeline, ReadWaveform};

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Write { duration: f64, delta: f64 },
    Store { duration: f64 },
    Read(ReadWaveform),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    /// (source line, step)
    pub steps: Vec<(usize, Step)>,
}

#[derive(Clone, Copy)]
enum Dim {
    Time,
    Frequency,
    Intensity,
    Plain,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn syntax(line: usize, tok: &Token<'_>, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column: tok.column,
        token: tok.text.to_string(),
        message: message.into(),
    }
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    column: line[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: line[..s].chars().count() + 1,
        });
    }
    out
}

/// Parses `value` with its unit suffix into SI (rad/s for frequencies).
fn parse_quantity(value: &str, dim: Dim) -> std::result::Result<f64, String> {
    let split = value
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '+' | '-' | 'e' | 'E')))
        .unwrap_or(value.len());
    let (num, unit) = value.split_at(split);
    let x: f64 = num
        .parse()
        .map_err(|_| format!("`{value}` is not a number"))?;
    if !x.is_finite() {
        return Err(format!("`{value}` is not finite"));
    }
    let unit = unit.to_ascii_lowercase();
    let si = match (dim, unit.as_str()) {
        (Dim::Plain, "") => x,
        (Dim::Plain, u) => return Err(format!("unexpected unit `{u}` on a dimensionless value")),
        (Dim::Frequency, "") if x == 0.0 => 0.0,
        (_, "") => return Err(format!("`{value}` needs a unit suffix")),
        (Dim::Time, "s") => x,
        (Dim::Time, "ms") => x / 1e3,
        (Dim::Time, "us") => x / 1e6,
        (Dim::Frequency, "hz") => units::hz_to_rad(x),
        (Dim::Frequency, "khz") => units::khz_to_rad(x),
        (Dim::Frequency, "mhz") => units::mhz_to_rad(x),
        (Dim::Intensity, "mw/cm2") => units::mw_cm2(x),
        (Dim::Intensity, "w/m2") => x,
        (_, u) => return Err(format!("unit `{u}` not valid here")),
    };
    Ok(si)
}

fn allowed_keys(step: &str) -> &'static [(&'static str, Dim)] {
    match step {
        "write" => &[("duration", Dim::Time), ("delta", Dim::Frequency)],
        "store" => &[("duration", Dim::Time)],
        _ => &[
            ("kind", Dim::Plain),
            ("intensity", Dim::Intensity),
            ("duration", Dim::Time),
            ("period", Dim::Time),
            ("duty", Dim::Plain),
        ],
    }
}

/// Parses sequence text into a validated list of steps.
pub fn parse_sequence(text: &str) -> Result<SequenceFile> {
    let mut steps = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        let Some((head, args)) = tokens.split_first() else {
            continue;
        };
        let keyword = head.text.to_ascii_lowercase();
        if !matches!(keyword.as_str(), "write" | "store" | "read") {
            return Err(syntax(line_no, head, "expected `write`, `store` or `read`"));
        }
        let keys = allowed_keys(&keyword);

        let mut values: Vec<(&str, f64)> = Vec::new();
        let mut kind: Option<String> = None;
        for tok in args {
            let Some((key, value)) = tok.text.split_once('=') else {
                return Err(syntax(line_no, tok, "expected key=value"));
            };
            let key_lc = key.to_ascii_lowercase();
            let Some(&(name, dim)) = keys.iter().find(|(k, _)| *k == key_lc) else {
                return Err(syntax(
                    line_no,
                    tok,
                    format!("unknown key `{key}` for {keyword}"),
                ));
            };
            if values.iter().any(|(k, _)| *k == name) || (name == "kind" && kind.is_some()) {
                return Err(syntax(line_no, tok, format!("duplicate key `{key}`")));
            }
            if name == "kind" {
                kind = Some(value.to_ascii_lowercase());
                continue;
            }
            let v = parse_quantity(value, dim).map_err(|m| syntax(line_no, tok, m))?;
            values.push((name, v));
        }
        let get = |name: &str| values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);
        let require = |name: &str| {
            get(name).ok_or_else(|| Error::Semantic {
                line: line_no,
                message: format!("{keyword} needs `{name}=`"),
            })
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Semantic {
                    line: line_no,
                    message: format!("{keyword} {name} must be positive"),
                })
            }
        };

        let step = match keyword.as_str() {
            "write" => Step::Write {
                duration: positive("duration", require("duration")?)?,
                delta: get("delta").unwrap_or(0.0),
            },
            "store" => Step::Store {
                duration: positive("duration", require("duration")?)?,
            },
            _ => {
                let intensity = require("intensity")?;
                let duration = positive("duration", require("duration")?)?;
                let wave = match kind.as_deref() {
                    Some("cw") | Some("continuous") | None => {
                        if get("period").is_some() || get("duty").is_some() {
                            return Err(Error::Semantic {
                                line: line_no,
                                message: "period/duty only apply to kind=square".into(),
                            });
                        }
                        ReadWaveform::continuous(intensity, duration)
                    }
                    Some("square") => {
                        let period = positive("period", require("period")?)?;
                        let duty = require("duty")?;
                        ReadWaveform::square(intensity, duration, period, duty)
                    }
                    Some(other) => {
                        return Err(Error::Semantic {
                            line: line_no,
                            message: format!("unknown read kind `{other}` (cw or square)"),
                        })
                    }
                };
                Step::Read(wave.map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?)
            }
        };
        steps.push((line_no, step));
    }

    match steps.first() {
        Some((_, Step::Write { .. })) => {}
        Some((line, _)) => {
            return Err(Error::Semantic {
                line: *line,
                message: "sequence must begin with write".into(),
            })
        }
        None => {
            return Err(Error::Semantic {
                line: 0,
                message: "sequence must begin with write".into(),
            })
        }
    }
    if let Some((line, _)) = steps
        .iter()
        .skip(1)
        .find(|(_, s)| matches!(s, Step::Write { .. }))
    {
        return Err(Error::Semantic {
            line: *line,
            message: "only one write step is allowed".into(),
        });
    }
    Ok(SequenceFile { steps })
}

impl SequenceFile {
    /// Collapses the steps into a single write → store → read timeline.
    /// Consecutive stores add up; exactly one read must follow.
    pub fn timeline(&self) -> Result<MemoryTimeline> {
        let Some((_, Step::Write { duration, delta })) = self.steps.first() else {
            return Err(Error::Semantic {
                line: 0,
                message: "sequence must begin with write".into(),
            });
        };
        let mut storage = 0.0;
        let mut read = None;
        for (line, step) in &self.steps[1..] {
            match step {
                Step::Store { duration } if read.is_none() => storage += duration,
                Step::Read(w) if read.is_none() => read = Some(*w),
                _ => {
                    return Err(Error::Semantic {
                        line: *line,
                        message: "the read must be the last step".into(),
                    })
                }
            }
        }
        let read = read.ok_or(Error::Semantic {
            line: self.steps.last().map_or(0, |s| s.0),
            message: "sequence needs a read step".into(),
        })?;
        Ok(MemoryTimeline {
            write_duration: *duration,
            write_delta: *delta,
            storage_time: storage,
            read,
        })
    }
}
