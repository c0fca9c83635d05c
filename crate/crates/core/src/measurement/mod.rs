//! Turning an offload pattern into a measured time and energy.
//!
//! Every backend implements [`Evaluator`]. Two are provided: a deterministic
//! device model ([`simulate::SimulatedEvaluator`]) and a wrapper around an
//! external build-and-run command ([`command::CommandEvaluator`]).

pub mod cache;
pub mod command;
pub mod simulate;
pub mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::OffloadPattern;

pub use cache::MeasurementCache;
pub use command::{CommandEvaluator, CommandSpec};
pub use simulate::{simulate, DeviceProfile, SimulatedEvaluator};
pub use trace::{integrate_energy, parse_power_csv, Clock, PowerTrace, Sample, TraceError};

/// Reported processing time of a run that did not finish within its budget.
pub const TIMEOUT_TIME_S: f64 = 10_000.0;

/// Default measurement budget: three minutes.
pub const DEFAULT_BUDGET_S: f64 = 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub time_s: f64,
    pub energy_ws: f64,
    #[serde(default)]
    pub traces: Vec<PowerTrace>,
    /// Integration window the energy was computed over.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    pub timed_out: bool,
    /// Backend diagnostics for a failed evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MeasurementResult {
    /// Placeholder result for a pattern whose evaluation failed: it carries the
    /// timeout time so that search ranks it last.
    pub fn failed(error: impl Into<String>) -> Self {
        Self {
            time_s: TIMEOUT_TIME_S,
            energy_ws: 0.0,
            traces: Vec::new(),
            window: None,
            timed_out: true,
            error: Some(error.into()),
        }
    }

    /// Recomputes the energy from the stored traces.
    pub fn recompute_energy(&self) -> Result<f64, TraceError> {
        let (start, end) = self.window.ok_or(TraceError::EmptyWindow {
            start: 0.0,
            end: 0.0,
        })?;
        integrate_energy(&self.traces, start, end)
    }

    /// Average power draw over the measured window.
    pub fn average_watts(&self) -> Option<f64> {
        let (start, end) = self.window?;
        (end > start).then(|| self.energy_ws / (end - start))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("budget must be positive, got {0}")]
    InvalidBudget(f64),
    #[error("pattern was derived from program {pattern} but the evaluator holds {program}")]
    ProgramMismatch { pattern: String, program: String },
    #[error("no device profile for {0}")]
    MissingProfile(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("power trace: {0}")]
    Trace(#[from] TraceError),
    #[error("evaluator cannot run: {0}")]
    Fatal(String),
}

impl MeasureError {
    /// Fatal errors abort a search; anything else only sinks the pattern.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            MeasureError::Fatal(_)
                | MeasureError::ProgramMismatch { .. }
                | MeasureError::MissingProfile(_)
                | MeasureError::InvalidBudget(_)
        )
    }
}

/// Measures offload patterns. Implementations may be called from several
/// threads at once for distinct patterns.
pub trait Evaluator: Send + Sync {
    fn evaluate(
        &self,
        pattern: &OffloadPattern,
        budget_s: f64,
    ) -> Result<MeasurementResult, MeasureError>;

    /// How many evaluations may run at the same time.
    fn parallelism(&self) -> usize {
        1
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(
        &self,
        pattern: &OffloadPattern,
        budget_s: f64,
    ) -> Result<MeasurementResult, MeasureError> {
        (**self).evaluate(pattern, budget_s)
    }

    fn parallelism(&self) -> usize {
        (**self).parallelism()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(
        &self,
        pattern: &OffloadPattern,
        budget_s: f64,
    ) -> Result<MeasurementResult, MeasureError> {
        (**self).evaluate(pattern, budget_s)
    }

    fn parallelism(&self) -> usize {
        (**self).parallelism()
    }
}

/// Synthesizes a constant-power 1 Hz trace covering `[0, duration)`. The last
/// sample is scaled by the fraction of its second that the run occupies, so
/// the rectangular sum equals `watts * duration`.
pub(crate) fn constant_trace(label: &str, watts: f64, duration: f64) -> PowerTrace {
    let mut trace = PowerTrace::new(label, Clock::Seconds);
    let ticks = duration.ceil() as u64;
    for k in 0..ticks {
        let occupied = (duration - k as f64).min(1.0);
        trace.samples.push(Sample {
            t: k as f64,
            watts: watts * occupied,
        });
    }
    trace
}
