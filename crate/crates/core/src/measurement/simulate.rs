//! Deterministic device model.
//!
//! A run takes `overhead + CPU loop time + device loop time / speedup +
//! transfer events * transfer cost`. Power is the CPU draw, plus the device's
//! base draw when anything is offloaded, plus its active draw scaled by the
//! fraction of the run the device spends computing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{constant_trace, Evaluator, MeasureError, MeasurementResult, TIMEOUT_TIME_S};
use crate::loop_model::{LoopId, LoopProgram};
use crate::pattern::{transfer_count, Device, OffloadPattern};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub device: Device,
    /// Device speedup over the CPU for individual loops.
    #[serde(default)]
    pub loop_speedup: BTreeMap<LoopId, f64>,
    /// Speedup for loops absent from `loop_speedup`.
    #[serde(default = "one")]
    pub default_speedup: f64,
    /// CPU arithmetic throughput.
    pub cpu_ops_per_s: f64,
    /// CPU memory throughput; `None` ignores memory traffic.
    #[serde(default)]
    pub cpu_bytes_per_s: Option<f64>,
    /// Seconds per transfer event of one variable.
    #[serde(default)]
    pub transfer_cost_s: f64,
    /// Device draw for the whole run whenever anything is offloaded.
    #[serde(default)]
    pub base_watts: f64,
    /// Additional device draw while it computes.
    #[serde(default)]
    pub active_watts: f64,
    pub cpu_watts: f64,
    #[serde(default)]
    pub overhead_s: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be a finite non-negative number, got {v}"))
            }
        };
        finite_nonneg("transfer_cost_s", self.transfer_cost_s)?;
        finite_nonneg("base_watts", self.base_watts)?;
        finite_nonneg("active_watts", self.active_watts)?;
        finite_nonneg("cpu_watts", self.cpu_watts)?;
        finite_nonneg("overhead_s", self.overhead_s)?;
        if !(self.cpu_ops_per_s.is_finite() && self.cpu_ops_per_s > 0.0) {
            return Err(format!("cpu_ops_per_s must be positive, got {}", self.cpu_ops_per_s));
        }
        if let Some(b) = self.cpu_bytes_per_s {
            if !(b.is_finite() && b > 0.0) {
                return Err(format!("cpu_bytes_per_s must be positive, got {b}"));
            }
        }
        let speedups = self
            .loop_speedup
            .iter()
            .map(|(id, s)| (format!("loop_speedup[{id}]"), *s))
            .chain([("default_speedup".to_string(), self.default_speedup)]);
        for (name, s) in speedups {
            if !(s.is_finite() && s > 0.0) {
                return Err(format!("{name} must be positive, got {s}"));
            }
        }
        Ok(())
    }

    pub fn speedup(&self, id: LoopId) -> f64 {
        self.loop_speedup.get(&id).copied().unwrap_or(self.default_speedup)
    }

    /// CPU seconds spent in the loop's own statements over a whole run.
    pub fn cpu_time_s(&self, program: &LoopProgram, id: LoopId) -> f64 {
        let lp = &program.loops()[id];
        let trips = (program.entry_count(id) * lp.trip_count) as f64;
        let compute = lp.ops_per_iter as f64 / self.cpu_ops_per_s;
        let memory = self
            .cpu_bytes_per_s
            .map_or(0.0, |rate| lp.bytes_per_iter as f64 / rate);
        trips * (compute + memory)
    }
}

/// Modeled time and power of a pattern before any budget is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeledRun {
    pub time_s: f64,
    pub device_compute_s: f64,
    pub cpu_watts: f64,
    pub device_watts: f64,
    pub offloaded: bool,
}

impl ModeledRun {
    pub fn watts(&self) -> f64 {
        self.cpu_watts + self.device_watts
    }
}

pub fn model(program: &LoopProgram, pattern: &OffloadPattern, profile: &DeviceProfile) -> ModeledRun {
    let on_device = pattern.device_mask(program);
    let mut cpu_s = 0.0;
    let mut device_s = 0.0;
    for (id, dev) in on_device.iter().enumerate() {
        let t = profile.cpu_time_s(program, id);
        if *dev {
            device_s += t / profile.speedup(id);
        } else {
            cpu_s += t;
        }
    }
    let transfers = transfer_count(program, pattern) as f64 * profile.transfer_cost_s;
    let time_s = profile.overhead_s + cpu_s + device_s + transfers;
    let offloaded = on_device.iter().any(|d| *d);
    let busy = if time_s > 0.0 { device_s / time_s } else { 0.0 };
    let device_watts = if offloaded {
        profile.base_watts + profile.active_watts * busy
    } else {
        0.0
    };
    ModeledRun {
        time_s,
        device_compute_s: device_s,
        cpu_watts: profile.cpu_watts,
        device_watts,
        offloaded,
    }
}

fn to_result(device: Device, run: ModeledRun, budget_s: Option<f64>) -> MeasurementResult {
    let timed_out = budget_s.is_some_and(|b| run.time_s > b);
    let measured_s = if timed_out {
        budget_s.expect("checked")
    } else {
        run.time_s
    };
    let mut traces = vec![constant_trace("cpu", run.cpu_watts, measured_s)];
    if run.offloaded {
        traces.push(constant_trace(device.as_str(), run.device_watts, measured_s));
    }
    MeasurementResult {
        time_s: if timed_out { TIMEOUT_TIME_S } else { run.time_s },
        energy_ws: run.watts() * measured_s,
        traces,
        window: Some((0.0, measured_s)),
        timed_out,
        error: None,
    }
}

/// Pure model evaluation with no budget.
pub fn simulate(
    program: &LoopProgram,
    pattern: &OffloadPattern,
    profile: &DeviceProfile,
) -> MeasurementResult {
    to_result(profile.device, model(program, pattern, profile), None)
}

/// Same as [`simulate`], cutting the run at `budget_s`.
pub fn simulate_with_budget(
    program: &LoopProgram,
    pattern: &OffloadPattern,
    profile: &DeviceProfile,
    budget_s: f64,
) -> MeasurementResult {
    to_result(profile.device, model(program, pattern, profile), Some(budget_s))
}

pub struct SimulatedEvaluator<'a> {
    program: &'a LoopProgram,
    profile: DeviceProfile,
    parallelism: usize,
}

impl<'a> SimulatedEvaluator<'a> {
    pub fn new(program: &'a LoopProgram, profile: DeviceProfile) -> Result<Self, MeasureError> {
        profile.validate().map_err(MeasureError::Fatal)?;
        Ok(Self {
            program,
            profile,
            parallelism: 1,
        })
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn program(&self) -> &LoopProgram {
        self.program
    }
}

impl Evaluator for SimulatedEvaluator<'_> {
    fn evaluate(
        &self,
        pattern: &OffloadPattern,
        budget_s: f64,
    ) -> Result<MeasurementResult, MeasureError> {
        if budget_s.is_nan() || budget_s <= 0.0 {
            return Err(MeasureError::InvalidBudget(budget_s));
        }
        if pattern.program_digest != self.program.source_digest() {
            return Err(MeasureError::ProgramMismatch {
                pattern: pattern.program_digest.clone(),
                program: self.program.source_digest().to_string(),
            });
        }
        Ok(simulate_with_budget(self.program, pattern, &self.profile, budget_s))
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}
