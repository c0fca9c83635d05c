//! The run configuration file read by the `offload` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::destination::UserRequirement;
use crate::fpga::{FilterThresholds, FpgaConfig, ResourceModel};
use crate::ga::GaConfig;
use crate::measurement::{CommandSpec, DeviceProfile, DEFAULT_BUDGET_S};
use crate::pattern::Device;
use crate::score::ScoreConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    #[default]
    Simulated,
    External,
}

/// A single device or automatic selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceChoice {
    Auto,
    #[serde(alias = "many-core")]
    ManyCore,
    Gpu,
    Fpga,
}

impl DeviceChoice {
    pub fn device(self) -> Option<Device> {
        match self {
            DeviceChoice::Auto => None,
            DeviceChoice::ManyCore => Some(Device::ManyCore),
            DeviceChoice::Gpu => Some(Device::Gpu),
            DeviceChoice::Fpga => Some(Device::Fpga),
        }
    }
}

impl std::str::FromStr for DeviceChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DeviceChoice::Auto);
        }
        match s.parse::<Device>().map_err(|e| e.to_string())? {
            Device::ManyCore => Ok(DeviceChoice::ManyCore),
            Device::Gpu => Ok(DeviceChoice::Gpu),
            Device::Fpga => Ok(DeviceChoice::Fpga),
        }
    }
}

fn population() -> usize {
    12
}
fn generations() -> usize {
    12
}
fn crossover_rate() -> f64 {
    0.9
}
fn mutation_rate() -> f64 {
    0.05
}
fn elite() -> usize {
    1
}

/// GA shape; budget, seed and scoring come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaParams {
    #[serde(default = "population")]
    pub population: usize,
    #[serde(default = "generations")]
    pub generations: usize,
    #[serde(default = "crossover_rate")]
    pub crossover_rate: f64,
    #[serde(default = "mutation_rate")]
    pub mutation_rate: f64,
    #[serde(default = "elite")]
    pub elite: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: population(),
            generations: generations(),
            crossover_rate: crossover_rate(),
            mutation_rate: mutation_rate(),
            elite: elite(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpgaParams {
    #[serde(default)]
    pub thresholds: FilterThresholds,
    #[serde(default)]
    pub resources: ResourceModel,
}

fn auto() -> DeviceChoice {
    DeviceChoice::Auto
}
fn one() -> usize {
    1
}
fn out_dir() -> PathBuf {
    PathBuf::from("offload-out")
}
fn budget() -> f64 {
    DEFAULT_BUDGET_S
}
fn retries() -> u32 {
    1
}
fn yes() -> bool {
    true
}
fn all_devices() -> Vec<Device> {
    Device::VERIFICATION_ORDER.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Loop source (`.c` or any non-JSON text) or a JSON loop descriptor.
    pub input: PathBuf,
    #[serde(default = "auto")]
    pub device: DeviceChoice,
    /// Devices considered by `select`.
    #[serde(default = "all_devices")]
    pub devices: Vec<Device>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub parallel: usize,
    #[serde(default = "out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "budget")]
    pub budget_s: f64,
    #[serde(default = "retries")]
    pub retries: u32,
    #[serde(default = "yes")]
    pub hoist_transfers: bool,
    #[serde(default)]
    pub mode: EvaluationMode,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub fpga: FpgaParams,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub profiles: BTreeMap<Device, DeviceProfile>,
    #[serde(default)]
    pub commands: BTreeMap<Device, CommandSpec>,
    #[serde(default)]
    pub requirement: Option<UserRequirement>,
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub device: Option<DeviceChoice>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub budget_s: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut config = Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.out_dir);
        for spec in self.commands.values_mut() {
            match &mut spec.working_dir {
                Some(dir) => fix(dir),
                None => spec.working_dir = Some(base.to_path_buf()),
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.device {
            self.device = d;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = o.parallel {
            self.parallel = p;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(b) = o.budget_s {
            self.budget_s = b;
        }
    }

    /// Checks everything that does not need the program. Returns warnings.
    pub fn validate(&self) -> Result<Vec<String>, String> {
        let mut warnings = Vec::new();
        if self.parallel == 0 {
            return Err("parallel must be at least 1".into());
        }
        if self.devices.is_empty() {
            return Err("devices must name at least one device".into());
        }
        for (device, profile) in &self.profiles {
            if profile.device != *device {
                return Err(format!(
                    "profile under `{device}` declares device `{}`",
                    profile.device
                ));
            }
            profile
                .validate()
                .map_err(|e| format!("profile `{device}`: {e}"))?;
            if *device == Device::ManyCore && profile.transfer_cost_s != 0.0 {
                warnings.push(
                    "many_core shares memory with the host; its transfer_cost_s is treated as 0".into(),
                );
            }
        }
        if let Some(r) = &self.requirement {
            r.validate()?;
        }
        self.fpga.thresholds.validate()?;
        self.fpga.resources.validate()?;
        self.ga_config()
            .validate(2)
            .map_err(|e| e.to_string())?;
        Ok(warnings)
    }

    /// Fails unless `device` can be evaluated in the configured mode.
    pub fn require_backend(&self, device: Device) -> Result<(), String> {
        match self.mode {
            EvaluationMode::Simulated if !self.profiles.contains_key(&device) => {
                Err(format!("no simulated profile for device `{device}`"))
            }
            EvaluationMode::External if !self.commands.contains_key(&device) => {
                Err(format!("no command for device `{device}`"))
            }
            _ => Ok(()),
        }
    }

    /// The device profile as used for evaluation: many-core runs in shared
    /// memory, so its transfers are free.
    pub fn profile(&self, device: Device) -> Option<DeviceProfile> {
        let mut p = self.profiles.get(&device)?.clone();
        if device == Device::ManyCore {
            p.transfer_cost_s = 0.0;
        }
        Some(p)
    }

    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population: self.ga.population,
            generations: self.ga.generations,
            crossover_rate: self.ga.crossover_rate,
            mutation_rate: self.ga.mutation_rate,
            elite: self.ga.elite,
            budget_s: self.budget_s,
            retries: self.retries,
            seed: self.seed,
            hoist_transfers: self.hoist_transfers,
            score: self.score.clone(),
        }
    }

    pub fn fpga_config(&self) -> FpgaConfig {
        FpgaConfig {
            thresholds: self.fpga.thresholds.clone(),
            resources: self.fpga.resources.clone(),
            budget_s: self.budget_s,
            retries: self.retries,
            hoist_transfers: self.hoist_transfers,
            score: self.score.clone(),
        }
    }
}
