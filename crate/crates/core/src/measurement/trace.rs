//! 1 Hz power traces and Watt-second accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp {timestamp} does not follow the previous sample ({previous})")]
    NonMonotonic {
        line: usize,
        timestamp: f64,
        previous: f64,
    },
    #[error("empty integration window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
    #[error("no samples fall inside [{start}, {end}]")]
    NoSamples { start: f64, end: f64 },
    #[error("traces mix wall-clock and numeric timestamps")]
    MixedClocks,
}

/// How a trace file wrote its timestamps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// `HH:MM:SS`, stored as seconds since midnight.
    TimeOfDay,
    /// Plain seconds: epoch or relative to the start of a run.
    #[default]
    Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub device_label: String,
    #[serde(default)]
    pub clock: Clock,
    pub samples: Vec<Sample>,
}

impl PowerTrace {
    pub fn new(device_label: impl Into<String>, clock: Clock) -> Self {
        Self {
            device_label: device_label.into(),
            clock,
            samples: Vec::new(),
        }
    }

    /// Half-open span `[first, last + 1)` covered at 1 Hz.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t + 1.0))
    }

    /// Watts in effect at `t`: the latest sample at or before it.
    pub fn watts_at(&self, t: f64) -> Option<f64> {
        let idx = self.samples.partition_point(|s| s.t <= t);
        idx.checked_sub(1).map(|i| self.samples[i].watts)
    }
}

fn parse_time(field: &str) -> Option<(f64, Clock)> {
    let parts: Vec<&str> = field.split(':').collect();
    if parts.len() == 3 {
        let h: u32 = parts[0].parse().ok()?;
        let m: u32 = parts[1].parse().ok()?;
        let s: f64 = parts[2].parse().ok()?;
        if m >= 60 || !(0.0..61.0).contains(&s) {
            return None;
        }
        return Some((f64::from(h * 3600 + m * 60) + s, Clock::TimeOfDay));
    }
    let v: f64 = field.parse().ok()?;
    v.is_finite().then_some((v, Clock::Seconds))
}

/// Parses `time,watts` lines. Times are `HH:MM:SS` or numeric seconds; an
/// optional first line starting with `time,` is a header.
pub fn parse_power_csv(label: &str, text: &str) -> Result<PowerTrace, TraceError> {
    let mut trace = PowerTrace::new(label, Clock::Seconds);
    let mut clock: Option<Clock> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        if idx == 0 && content.to_ascii_lowercase().starts_with("time,") {
            continue;
        }
        let malformed = |message: String| TraceError::Malformed { line, message };
        let (t_field, w_field) = content
            .split_once(',')
            .ok_or_else(|| malformed(format!("expected `time,watts`, found `{content}`")))?;
        let (t, kind) = parse_time(t_field.trim())
            .ok_or_else(|| malformed(format!("unparsable timestamp `{}`", t_field.trim())))?;
        let watts: f64 = w_field
            .trim()
            .parse()
            .ok()
            .filter(|w: &f64| w.is_finite() && *w >= 0.0)
            .ok_or_else(|| malformed(format!("unparsable wattage `{}`", w_field.trim())))?;
        match clock {
            None => clock = Some(kind),
            Some(c) if c != kind => {
                return Err(malformed("timestamp format changes mid-file".into()));
            }
            _ => {}
        }
        if let Some(prev) = trace.samples.last() {
            if t <= prev.t {
                return Err(TraceError::NonMonotonic {
                    line,
                    timestamp: t,
                    previous: prev.t,
                });
            }
        }
        trace.samples.push(Sample { t, watts });
    }
    trace.clock = clock.unwrap_or_default();
    Ok(trace)
}

/// Union of the traces' spans.
pub fn combined_span(traces: &[PowerTrace]) -> Option<(f64, f64)> {
    traces
        .iter()
        .filter_map(PowerTrace::span)
        .reduce(|(a0, a1), (b0, b1)| (a0.min(b0), a1.max(b1)))
}

/// Rectangular 1 Hz sum: for each whole second `start, start + 1, ...` below
/// `end`, the summed latest-at-or-before wattage of every trace, times 1 s.
/// A trace with no sample yet at a tick contributes nothing.
pub fn integrate_energy(traces: &[PowerTrace], start: f64, end: f64) -> Result<f64, TraceError> {
    if start.is_nan() || end.is_nan() || end <= start {
        return Err(TraceError::EmptyWindow { start, end });
    }
    if let Some(first) = traces.first() {
        if traces.iter().any(|t| t.clock != first.clock) {
            return Err(TraceError::MixedClocks);
        }
    }
    let any_inside = traces
        .iter()
        .flat_map(|t| &t.samples)
        .any(|s| s.t >= start && s.t < end);
    if !any_inside {
        return Err(TraceError::NoSamples { start, end });
    }
    let ticks = (end - start).ceil() as u64;
    let total = (0..ticks)
        .map(|k| {
            let t = start + k as f64;
            traces.iter().filter_map(|tr| tr.watts_at(t)).sum::<f64>()
        })
        .sum();
    Ok(total)
}

/// Formats a trace in the same CSV shape that [`parse_power_csv`] reads.
pub fn to_csv(trace: &PowerTrace) -> String {
    let mut out = String::from("time,watts\n");
    for s in &trace.samples {
        match trace.clock {
            Clock::TimeOfDay => {
                let secs = s.t as u64;
                out.push_str(&format!(
                    "{:02}:{:02}:{:02},{}\n",
                    secs / 3600,
                    secs / 60 % 60,
                    secs % 60,
                    s.watts
                ));
            }
            Clock::Seconds => out.push_str(&format!("{},{}\n", s.t, s.watts)),
        }
    }
    out
}
