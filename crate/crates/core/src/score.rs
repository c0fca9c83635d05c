//! Fitness of a measured pattern: `time^a * energy^b` with non-positive
//! exponents (both `-1/2` by default), so higher is better.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::{MeasurementResult, TIMEOUT_TIME_S};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("{what} must be positive and finite, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("invalid score configuration: {0}")]
    Config(String),
}

fn minus_half() -> f64 {
    -0.5
}
fn timeout_time() -> f64 {
    TIMEOUT_TIME_S
}
fn reference_watts() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default = "minus_half")]
    pub time_exponent: f64,
    #[serde(default = "minus_half")]
    pub energy_exponent: f64,
    /// Time charged to a pattern that timed out or failed.
    #[serde(default = "timeout_time")]
    pub timeout_time_s: f64,
    /// Power used to derive the timeout energy when none is given.
    #[serde(default = "reference_watts")]
    pub reference_watts: f64,
    #[serde(default)]
    pub timeout_energy_ws: Option<f64>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            time_exponent: minus_half(),
            energy_exponent: minus_half(),
            timeout_time_s: timeout_time(),
            reference_watts: reference_watts(),
            timeout_energy_ws: None,
        }
    }
}

impl ScoreConfig {
    pub fn timeout_energy_ws(&self) -> f64 {
        self.timeout_energy_ws
            .unwrap_or(self.timeout_time_s * self.reference_watts)
    }

    /// Fitness assigned to timed-out and failed patterns.
    pub fn penalty(&self) -> f64 {
        score(self.timeout_time_s, self.timeout_energy_ws(), self).unwrap_or(0.0)
    }

    /// Checks the exponents and that the penalty ranks below any run that
    /// finishes inside `budget_s` at up to `reference_watts`.
    pub fn validate(&self, budget_s: f64) -> Result<(), ScoreError> {
        for (what, v) in [
            ("time_exponent", self.time_exponent),
            ("energy_exponent", self.energy_exponent),
        ] {
            if !(v.is_finite() && v <= 0.0) {
                return Err(ScoreError::Config(format!("{what} must be zero or negative, got {v}")));
            }
        }
        if self.time_exponent == 0.0 && self.energy_exponent == 0.0 {
            return Err(ScoreError::Config("both exponents are zero".into()));
        }
        positive("timeout_time_s", self.timeout_time_s)?;
        positive("reference_watts", self.reference_watts)?;
        positive("timeout_energy_ws", self.timeout_energy_ws())?;
        positive("budget_s", budget_s)?;
        let worst_finished = score(budget_s, budget_s * self.reference_watts, self)?;
        if self.penalty() >= worst_finished {
            return Err(ScoreError::Config(format!(
                "timeout fitness {} is not below the fitness {} of a run finishing at the {budget_s} s budget",
                self.penalty(),
                worst_finished
            )));
        }
        Ok(())
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64, ScoreError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ScoreError::NonPositive { what, value })
    }
}

pub fn score(time_s: f64, energy_ws: f64, config: &ScoreConfig) -> Result<f64, ScoreError> {
    let t = positive("time_s", time_s)?;
    let e = positive("energy_ws", energy_ws)?;
    Ok(t.powf(config.time_exponent) * e.powf(config.energy_exponent))
}

/// Fitness of a measurement, with timed-out and failed runs charged the
/// penalty.
pub fn fitness(result: &MeasurementResult, config: &ScoreConfig) -> Result<f64, ScoreError> {
    if result.timed_out || result.error.is_some() {
        return Ok(config.penalty());
    }
    score(result.time_s, result.energy_ws, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_inverse_root_product() {
        let c = ScoreConfig::default();
        let s = score(4.0, 25.0, &c).unwrap();
        assert!((s - 0.1).abs() < 1e-15);
        assert!(score(0.0, 1.0, &c).is_err());
        assert!(score(1.0, f64::NAN, &c).is_err());
    }

    #[test]
    fn figure_five_values() {
        let c = ScoreConfig::default();
        assert_eq!(score(1.0, 1.0, &c).unwrap(), 1.0);
        let cpu = score(153.0, 4077.0, &c).unwrap();
        let gpu = score(19.0, 2071.0, &c).unwrap();
        assert!((cpu - 1.266e-3).abs() < 1e-6, "{cpu}");
        assert!((gpu - 5.042e-3).abs() < 1e-6, "{gpu}");
        assert!((gpu / cpu - 3.98).abs() < 0.01);
    }

    #[test]
    fn faster_and_cheaper_scores_higher() {
        let c = ScoreConfig::default();
        assert!(score(19.0, 2071.0, &c).unwrap() > score(153.0, 4077.0, &c).unwrap());
    }

    #[test]
    fn penalty_uses_reference_power() {
        let c = ScoreConfig::default();
        assert_eq!(c.timeout_energy_ws(), 1.0e7);
        let timed_out = MeasurementResult::failed("x");
        assert_eq!(fitness(&timed_out, &c).unwrap(), c.penalty());
        assert!(c.validate(180.0).is_ok());
    }

    #[test]
    fn penalty_above_budget_fitness_is_rejected() {
        let c = ScoreConfig {
            timeout_energy_ws: Some(1.0),
            timeout_time_s: 1.0,
            ..ScoreConfig::default()
        };
        assert!(matches!(c.validate(180.0), Err(ScoreError::Config(_))));
        let zero = ScoreConfig {
            time_exponent: 0.0,
            energy_exponent: 0.0,
            ..ScoreConfig::default()
        };
        assert!(zero.validate(180.0).is_err());
    }
}
