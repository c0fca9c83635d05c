//! Choosing between many-core CPU, GPU and FPGA.
//!
//! Devices are verified in the fixed order many-core, GPU, FPGA (cheapest
//! verification first). As soon as one device's best pattern satisfies the
//! user requirement the remaining devices are skipped; otherwise the device
//! with the highest score wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpga::{fpga_pipeline, FpgaConfig, FpgaReport};
use crate::ga::{run_ga_with_cache, GaConfig, GaError, SearchContext, SearchHistory};
use crate::loop_model::LoopProgram;
use crate::measurement::{Evaluator, MeasurementCache};
use crate::pattern::{Device, Gene, OffloadPattern};
use crate::score::{score, ScoreConfig, ScoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementMode {
    /// Best time must not exceed `value` seconds.
    TimeBudget,
    /// Baseline time over best time must reach `value`.
    SpeedupFactor,
    /// Score must reach `value`.
    ScoreMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserRequirement {
    pub mode: RequirementMode,
    pub value: f64,
}

impl UserRequirement {
    pub fn validate(&self) -> Result<(), String> {
        if self.value.is_finite() && self.value > 0.0 {
            Ok(())
        } else {
            Err(format!("requirement value must be positive, got {}", self.value))
        }
    }

    pub fn is_met(&self, r: &DeviceResult) -> bool {
        if r.timed_out {
            return false;
        }
        match self.mode {
            RequirementMode::TimeBudget => r.time_s <= self.value,
            RequirementMode::SpeedupFactor => r.baseline_time_s / r.time_s >= self.value,
            RequirementMode::ScoreMin => r.score >= self.value,
        }
    }
}

/// Best result of one device's search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceResult {
    pub device: Device,
    pub pattern_key: String,
    pub time_s: f64,
    pub energy_ws: f64,
    pub timed_out: bool,
    pub score: f64,
    pub baseline_time_s: f64,
    pub baseline_energy_ws: f64,
    pub evaluations: usize,
}

/// What a device search hands back: its best pattern and the raw numbers.
#[derive(Debug, Clone)]
pub struct DeviceSearch {
    pub pattern: OffloadPattern,
    pub time_s: f64,
    pub energy_ws: f64,
    pub timed_out: bool,
    pub baseline_time_s: f64,
    pub baseline_energy_ws: f64,
    pub evaluations: usize,
    pub details: SearchDetails,
}

#[derive(Debug, Clone)]
pub enum SearchDetails {
    Ga(Box<SearchHistory>),
    Fpga(Box<FpgaReport>),
    None,
}

pub trait DeviceSearcher {
    fn device(&self) -> Device;
    fn search(&self, program: &LoopProgram) -> Result<DeviceSearch, GaError>;
}

/// GA search on one device, plus a measurement of the all-CPU baseline.
pub struct GaSearcher<'a> {
    pub device: Device,
    pub evaluator: &'a dyn Evaluator,
    pub config: GaConfig,
}

impl DeviceSearcher for GaSearcher<'_> {
    fn device(&self) -> Device {
        self.device
    }

    fn search(&self, program: &LoopProgram) -> Result<DeviceSearch, GaError> {
        let cache = MeasurementCache::new();
        let (pattern, history) =
            run_ga_with_cache(program, self.evaluator, self.device, &self.config, &cache)?;
        let ctx = SearchContext::new(program, self.evaluator, self.device, &cache, self.config.eval_settings());
        let (baseline, _, _) = ctx.measure(&Gene::zeros(history.gene_loops.len()))?;
        Ok(DeviceSearch {
            pattern,
            time_s: history.best.time_s,
            energy_ws: history.best.energy_ws,
            timed_out: history.best.timed_out,
            baseline_time_s: baseline.time_s,
            baseline_energy_ws: baseline.energy_ws,
            evaluations: history.evaluations + ctx.evaluations(),
            details: SearchDetails::Ga(Box::new(history)),
        })
    }
}

/// The FPGA narrowing pipeline; its baseline is part of round one.
pub struct FpgaSearcher<'a> {
    pub evaluator: &'a dyn Evaluator,
    pub config: FpgaConfig,
}

impl DeviceSearcher for FpgaSearcher<'_> {
    fn device(&self) -> Device {
        Device::Fpga
    }

    fn search(&self, program: &LoopProgram) -> Result<DeviceSearch, GaError> {
        let cache = MeasurementCache::new();
        let (pattern, report) = fpga_pipeline(program, self.evaluator, &self.config, &cache)?;
        let baseline = report.baseline().clone();
        Ok(DeviceSearch {
            pattern,
            time_s: report.best.time_s,
            energy_ws: report.best.energy_ws,
            timed_out: report.best.timed_out,
            baseline_time_s: baseline.time_s,
            baseline_energy_ws: baseline.energy_ws,
            evaluations: report.evaluations,
            details: SearchDetails::Fpga(Box::new(report)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDevice {
    pub device: Device,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedDevice {
    pub device: Device,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen_device: Device,
    pub chosen_pattern: OffloadPattern,
    pub requirement: UserRequirement,
    pub requirement_met: bool,
    /// Evaluated devices in verification order.
    pub evaluated: Vec<DeviceResult>,
    pub skipped: Vec<SkippedDevice>,
    pub failed: Vec<FailedDevice>,
}

impl SelectionOutcome {
    pub fn evaluated_devices(&self) -> Vec<Device> {
        self.evaluated.iter().map(|r| r.device).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub const REASON_REQUIREMENT_MET: &str = "requirement met";
pub const REASON_NOT_REGISTERED: &str = "no searcher registered";

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no device searcher registered")]
    NoSearchers,
    #[error("invalid requirement: {0}")]
    Requirement(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("every device search failed: {}", summarize(.0))]
    AllFailed(Vec<FailedDevice>),
}

fn summarize(failures: &[FailedDevice]) -> String {
    failures
        .iter()
        .map(|f| format!("{}: {}", f.device, f.error))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Score of a device result under the selection exponents; timed-out
/// results get the penalty.
pub fn device_score(search: &DeviceSearch, config: &ScoreConfig) -> Result<f64, ScoreError> {
    if search.timed_out {
        Ok(config.penalty())
    } else {
        score(search.time_s, search.energy_ws, config)
    }
}

pub fn select_destination(
    program: &LoopProgram,
    searchers: &[&dyn DeviceSearcher],
    requirement: &UserRequirement,
    score_config: &ScoreConfig,
) -> Result<SelectionOutcome, SelectionError> {
    if searchers.is_empty() {
        return Err(SelectionError::NoSearchers);
    }
    requirement.validate().map_err(SelectionError::Requirement)?;

    let mut evaluated: Vec<DeviceResult> = Vec::new();
    let mut patterns: Vec<OffloadPattern> = Vec::new();
    let mut skipped = Vec::new();
    let mut failed = Vec::new();
    let mut met = false;

    for device in Device::VERIFICATION_ORDER {
        if met {
            skipped.push(SkippedDevice {
                device,
                reason: REASON_REQUIREMENT_MET.into(),
            });
            continue;
        }
        let Some(searcher) = searchers.iter().find(|s| s.device() == device) else {
            skipped.push(SkippedDevice {
                device,
                reason: REASON_NOT_REGISTERED.into(),
            });
            continue;
        };
        match searcher.search(program) {
            Ok(found) => {
                let result = DeviceResult {
                    device,
                    pattern_key: found.pattern.key(),
                    time_s: found.time_s,
                    energy_ws: found.energy_ws,
                    timed_out: found.timed_out,
                    score: device_score(&found, score_config)?,
                    baseline_time_s: found.baseline_time_s,
                    baseline_energy_ws: found.baseline_energy_ws,
                    evaluations: found.evaluations,
                };
                met = requirement.is_met(&result);
                evaluated.push(result);
                patterns.push(found.pattern);
            }
            Err(e) => failed.push(FailedDevice {
                device,
                error: e.to_string(),
            }),
        }
    }

    if evaluated.is_empty() {
        return Err(SelectionError::AllFailed(failed));
    }
    let chosen = if met {
        evaluated.len() - 1
    } else {
        (0..evaluated.len())
            .reduce(|a, b| if evaluated[b].score > evaluated[a].score { b } else { a })
            .expect("non-empty")
    };
    Ok(SelectionOutcome {
        chosen_device: evaluated[chosen].device,
        chosen_pattern: patterns.swap_remove(chosen),
        requirement: *requirement,
        requirement_met: met,
        evaluated,
        skipped,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_model::parse_source;
    use crate::pattern::materialize;

    /// Returns fixed numbers without measuring anything.
    struct Fixed {
        device: Device,
        time_s: f64,
        energy_ws: f64,
        fail: bool,
    }

    impl DeviceSearcher for Fixed {
        fn device(&self) -> Device {
            self.device
        }

        fn search(&self, program: &LoopProgram) -> Result<DeviceSearch, GaError> {
            if self.fail {
                return Err(GaError::Config("broken".into()));
            }
            Ok(DeviceSearch {
                pattern: materialize(program, &Gene::ones(1), self.device)?,
                time_s: self.time_s,
                energy_ws: self.energy_ws,
                timed_out: false,
                baseline_time_s: 153.0,
                baseline_energy_ws: 4077.0,
                evaluations: 1,
                details: SearchDetails::None,
            })
        }
    }

    fn fixed(device: Device, time_s: f64, energy_ws: f64) -> Fixed {
        Fixed { device, time_s, energy_ws, fail: false }
    }

    fn program() -> LoopProgram {
        parse_source("float a[4];\nfor (i = 0; i < 4; i++) a[i] = 1.0;").unwrap()
    }

    const FAST: UserRequirement = UserRequirement { mode: RequirementMode::TimeBudget, value: 50.0 };

    #[test]
    fn many_core_meeting_requirement_skips_the_rest() {
        let (m, g, f) = (
            fixed(Device::ManyCore, 40.0, 3000.0),
            fixed(Device::Gpu, 19.0, 2071.0),
            fixed(Device::Fpga, 10.0, 1000.0),
        );
        let out = select_destination(&program(), &[&f, &g, &m], &FAST, &ScoreConfig::default()).unwrap();
        assert_eq!(out.evaluated_devices(), vec![Device::ManyCore]);
        assert_eq!(out.chosen_device, Device::ManyCore);
        assert!(out.requirement_met);
        let skipped: Vec<_> = out.skipped.iter().map(|s| (s.device, s.reason.as_str())).collect();
        assert_eq!(
            skipped,
            vec![(Device::Gpu, REASON_REQUIREMENT_MET), (Device::Fpga, REASON_REQUIREMENT_MET)]
        );
    }

    #[test]
    fn gpu_meeting_requirement_skips_fpga() {
        let (m, g, f) = (
            fixed(Device::ManyCore, 120.0, 3000.0),
            fixed(Device::Gpu, 19.0, 2071.0),
            fixed(Device::Fpga, 10.0, 1000.0),
        );
        let out = select_destination(&program(), &[&m, &g, &f], &FAST, &ScoreConfig::default()).unwrap();
        assert_eq!(out.evaluated_devices(), vec![Device::ManyCore, Device::Gpu]);
        assert_eq!(out.chosen_device, Device::Gpu);
    }

    #[test]
    fn best_score_wins_when_nothing_meets_requirement() {
        let (m, g, f) = (
            fixed(Device::ManyCore, 120.0, 3000.0),
            fixed(Device::Gpu, 90.0, 2500.0),
            fixed(Device::Fpga, 60.0, 1500.0),
        );
        let out = select_destination(&program(), &[&m, &g, &f], &FAST, &ScoreConfig::default()).unwrap();
        assert_eq!(out.evaluated.len(), 3);
        assert!(!out.requirement_met);
        assert_eq!(out.chosen_device, Device::Fpga);
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn ties_go_to_the_earlier_device() {
        let (m, g) = (fixed(Device::ManyCore, 90.0, 2500.0), fixed(Device::Gpu, 90.0, 2500.0));
        let out = select_destination(&program(), &[&g, &m], &FAST, &ScoreConfig::default()).unwrap();
        assert_eq!(out.chosen_device, Device::ManyCore);
        assert_eq!(out.skipped[0], SkippedDevice { device: Device::Fpga, reason: REASON_NOT_REGISTERED.into() });
    }

    #[test]
    fn requirement_forms() {
        let r = DeviceResult {
            device: Device::Gpu,
            pattern_key: "gpu:1".into(),
            time_s: 19.0,
            energy_ws: 2071.0,
            timed_out: false,
            score: 5.0e-3,
            baseline_time_s: 153.0,
            baseline_energy_ws: 4077.0,
            evaluations: 1,
        };
        let req = |mode, value| UserRequirement { mode, value };
        assert!(req(RequirementMode::TimeBudget, 19.0).is_met(&r));
        assert!(!req(RequirementMode::TimeBudget, 18.9).is_met(&r));
        assert!(req(RequirementMode::SpeedupFactor, 8.0).is_met(&r));
        assert!(!req(RequirementMode::SpeedupFactor, 8.1).is_met(&r));
        assert!(req(RequirementMode::ScoreMin, 5.0e-3).is_met(&r));
        let timed_out = DeviceResult { timed_out: true, ..r };
        assert!(!req(RequirementMode::TimeBudget, 1e9).is_met(&timed_out));
        assert!(req(RequirementMode::ScoreMin, 0.0).validate().is_err());
    }

    #[test]
    fn failures_are_reported() {
        let broken = Fixed { device: Device::Gpu, time_s: 1.0, energy_ws: 1.0, fail: true };
        let err = select_destination(&program(), &[&broken], &FAST, &ScoreConfig::default()).unwrap_err();
        assert!(matches!(err, SelectionError::AllFailed(ref f) if f.len() == 1));
        assert!(err.to_string().contains("gpu: invalid search configuration: broken"));
        let ok = fixed(Device::Fpga, 100.0, 100.0);
        let out = select_destination(&program(), &[&broken, &ok], &FAST, &ScoreConfig::default()).unwrap();
        assert_eq!(out.chosen_device, Device::Fpga);
        assert_eq!(out.failed.len(), 1);
        assert!(matches!(
            select_destination(&program(), &[], &FAST, &ScoreConfig::default()),
            Err(SelectionError::NoSearchers)
        ));
    }
}
