//! The `offload` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DeviceChoice, EvaluationMode, Overrides, RunConfig};
use crate::destination::{
    select_destination, DeviceSearcher, FpgaSearcher, GaSearcher, SearchDetails, SelectionError,
    UserRequirement,
};
use crate::fpga::fpga_pipeline;
use crate::ga::{run_ga, GaError};
use crate::loop_model::{arithmetic_intensity, load_program, LoopProgram, ProgramError};
use crate::measurement::trace::combined_span;
use crate::measurement::{
    integrate_energy, parse_power_csv, CommandEvaluator, Evaluator, MeasurementCache,
    PowerTrace, SimulatedEvaluator,
};
use crate::pattern::{Device, OffloadPattern};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluator error: {0}")]
    Evaluator(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Evaluator(_) => 3,
            CliError::Parse(_) => 4,
        }
    }
}

impl From<ProgramError> for CliError {
    fn from(e: ProgramError) -> Self {
        match e {
            ProgramError::Io { .. } => CliError::Config(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<GaError> for CliError {
    fn from(e: GaError) -> Self {
        match e {
            GaError::Evaluator { .. } => CliError::Evaluator(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::AllFailed(_) => CliError::Evaluator(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "offload", version, about = "Energy-aware search for loop offload patterns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the loop table of a program.
    Analyze(AnalyzeArgs),
    /// Search offload patterns for one device.
    Search(RunArgs),
    /// Verify many-core, GPU and FPGA in turn and pick a destination.
    Select(RunArgs),
    /// Integrate power traces into Watt-seconds.
    Energy(EnergyArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Loop source or JSON descriptor; defaults to the config's input.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the program as a JSON descriptor instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_device_choice)]
    pub device: Option<DeviceChoice>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "budget-s")]
    pub budget_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    /// Trace files, optionally labelled as `label=path`.
    #[arg(required = true)]
    pub traces: Vec<String>,
    /// Window start: seconds or HH:MM:SS. Defaults to the first sample.
    #[arg(long)]
    pub start: Option<String>,
    /// Window end (exclusive). Defaults to one second past the last sample.
    #[arg(long)]
    pub end: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_device_choice(s: &str) -> Result<DeviceChoice, String> {
    s.parse()
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Search(a) => cmd_search(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Energy(a) => cmd_energy(&a),
    }
}

/// Entry point of the binary: runs the command, prints its output or the
/// error, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("offload: {e}");
            e.exit_code()
        }
    }
}

pub fn loop_table(program: &LoopProgram) -> String {
    let mut out = String::from("id  parent  depth  trips  total_trips  ops  bytes  intensity  parallel\n");
    for lp in program.loops() {
        let parent = lp.parent.map_or("-".to_string(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{:<3} {:<7} {:<6} {:<6} {:<12} {:<4} {:<6} {:<10} {}",
            lp.id,
            parent,
            lp.depth,
            lp.trip_count,
            program.entry_count(lp.id) * lp.trip_count,
            lp.ops_per_iter,
            lp.bytes_per_iter,
            arithmetic_intensity(lp).to_string(),
            if lp.parallelizable { "yes" } else { "no" }
        );
    }
    let _ = writeln!(
        out,
        "{} loops, {} parallelizable",
        program.loops().len(),
        program.parallelizable_ids().len()
    );
    out
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let input = match (&args.input, &args.config) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => RunConfig::load(c).map_err(CliError::Config)?.input,
        (None, None) => return Err(CliError::Config("give an input file or --config".into())),
    };
    let program = load_program(&input)?;
    if args.json {
        let mut text = serde_json::to_string_pretty(&program).expect("program serializes");
        text.push('\n');
        Ok(text)
    } else {
        Ok(loop_table(&program))
    }
}

fn load_run(args: &RunArgs) -> Result<(RunConfig, Vec<String>, LoopProgram), CliError> {
    let mut config = RunConfig::load(&args.config).map_err(CliError::Config)?;
    config.apply(&Overrides {
        device: args.device,
        seed: args.seed,
        parallel: args.parallel,
        out_dir: args.out.clone(),
        budget_s: args.budget_s,
    });
    let warnings = config.validate().map_err(CliError::Config)?;
    let program = load_program(&config.input)?;
    Ok((config, warnings, program))
}

fn evaluator_for<'a>(
    config: &RunConfig,
    program: &'a LoopProgram,
    device: Device,
) -> Result<Box<dyn Evaluator + 'a>, CliError> {
    config.require_backend(device).map_err(CliError::Config)?;
    match config.mode {
        EvaluationMode::Simulated => {
            let profile = config.profile(device).expect("checked above");
            let eval = SimulatedEvaluator::new(program, profile)
                .map_err(|e| CliError::Config(e.to_string()))?
                .with_parallelism(config.parallel);
            Ok(Box::new(eval))
        }
        EvaluationMode::External => {
            let mut spec = config.commands[&device].clone();
            spec.parallelism = config.parallel;
            let eval = CommandEvaluator::new(spec).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Box::new(eval))
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

/// The best pattern as written to `best_pattern.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPatternFile {
    pub pattern_key: String,
    pub offloaded_loops: Vec<usize>,
    pub time_s: f64,
    pub energy_ws: f64,
    pub score: f64,
    pub pattern: OffloadPattern,
}

pub fn cmd_search(args: &RunArgs) -> Result<String, CliError> {
    let (config, mut warnings, program) = load_run(args)?;
    let device = config.device.device().ok_or_else(|| {
        CliError::Config("search needs a single device; use `select` for automatic choice".into())
    })?;
    let evaluator = evaluator_for(&config, &program, device)?;
    let mut out = String::new();

    let best = match device {
        Device::Fpga => {
            let cache = MeasurementCache::new();
            let (pattern, report) = fpga_pipeline(&program, evaluator.as_ref(), &config.fpga_config(), &cache)?;
            let path = write_file(&config.out_dir, "fpga_report.json", &json_line(&report))?;
            let _ = writeln!(
                out,
                "fpga: {} candidates, {} retained, {} measurements -> {}",
                report.candidates.len(),
                report.retained.len(),
                report.measurements.len(),
                path.display()
            );
            BestPatternFile {
                pattern_key: pattern.key(),
                offloaded_loops: pattern.offloaded_loops(&program),
                time_s: report.best.time_s,
                energy_ws: report.best.energy_ws,
                score: report.best.score,
                pattern,
            }
        }
        _ => {
            let (pattern, history) = run_ga(&program, evaluator.as_ref(), device, &config.ga_config())?;
            warnings.extend(history.warnings.iter().cloned());
            let path = write_file(&config.out_dir, "history.json", &json_line(&history))?;
            let _ = writeln!(
                out,
                "{device}: {} generations, {} evaluations, {} cache hits -> {}",
                history.generations.len(),
                history.evaluations,
                history.cache_hits,
                path.display()
            );
            BestPatternFile {
                pattern_key: pattern.key(),
                offloaded_loops: pattern.offloaded_loops(&program),
                time_s: history.best.time_s,
                energy_ws: history.best.energy_ws,
                score: history.best.fitness,
                pattern,
            }
        }
    };
    write_file(&config.out_dir, "best_pattern.json", &json_line(&best))?;
    for w in &warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let _ = writeln!(
        out,
        "best {}: {:.3} s, {:.1} Ws, score {:.6e}",
        best.pattern_key, best.time_s, best.energy_ws, best.score
    );
    Ok(out)
}

pub fn cmd_select(args: &RunArgs) -> Result<String, CliError> {
    let (config, warnings, program) = load_run(args)?;
    if config.device != DeviceChoice::Auto {
        return Err(CliError::Config(
            "select chooses the device itself; drop --device or use `auto`".into(),
        ));
    }
    let requirement: UserRequirement = config
        .requirement
        .ok_or_else(|| CliError::Config("select needs a `requirement` in the config".into()))?;
    for d in &config.devices {
        config.require_backend(*d).map_err(CliError::Config)?;
    }

    let mut evaluators = Vec::new();
    for d in Device::VERIFICATION_ORDER {
        if config.devices.contains(&d) {
            evaluators.push((d, evaluator_for(&config, &program, d)?));
        }
    }
    let ga_searchers: Vec<GaSearcher> = evaluators
        .iter()
        .filter(|(d, _)| *d != Device::Fpga)
        .map(|(d, e)| GaSearcher {
            device: *d,
            evaluator: e.as_ref(),
            config: config.ga_config(),
        })
        .collect();
    let fpga_searcher = evaluators
        .iter()
        .find(|(d, _)| *d == Device::Fpga)
        .map(|(_, e)| FpgaSearcher {
            evaluator: e.as_ref(),
            config: config.fpga_config(),
        });
    let recorder = Recorder {
        inner: ga_searchers
            .iter()
            .map(|s| s as &dyn DeviceSearcher)
            .chain(fpga_searcher.iter().map(|s| s as &dyn DeviceSearcher))
            .collect(),
        details: std::cell::RefCell::new(Vec::new()),
    };
    let wrapped: Vec<RecordingSearcher> = (0..recorder.inner.len())
        .map(|i| RecordingSearcher { recorder: &recorder, index: i })
        .collect();
    let searchers: Vec<&dyn DeviceSearcher> = wrapped.iter().map(|s| s as &dyn DeviceSearcher).collect();

    let outcome = select_destination(&program, &searchers, &requirement, &config.score)?;
    for (device, details) in recorder.details.borrow().iter() {
        match details {
            SearchDetails::Ga(h) => {
                write_file(&config.out_dir, &format!("history_{device}.json"), &json_line(h))?;
            }
            SearchDetails::Fpga(r) => {
                write_file(&config.out_dir, "fpga_report.json", &json_line(r))?;
            }
            SearchDetails::None => {}
        }
    }
    let path = write_file(&config.out_dir, "selection.json", &json_line(&outcome))?;

    let mut out = String::new();
    for w in &warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    for r in &outcome.evaluated {
        let _ = writeln!(
            out,
            "{:<10} {:<24} {:>10.3} s {:>12.1} Ws  score {:.6e}",
            r.device.as_str(),
            r.pattern_key,
            r.time_s,
            r.energy_ws,
            r.score
        );
    }
    for s in &outcome.skipped {
        let _ = writeln!(out, "{:<10} skipped: {}", s.device.as_str(), s.reason);
    }
    for f in &outcome.failed {
        let _ = writeln!(out, "{:<10} failed: {}", f.device.as_str(), f.error);
    }
    let _ = writeln!(
        out,
        "chosen: {} ({}) -> {}",
        outcome.chosen_device,
        if outcome.requirement_met { "requirement met" } else { "best score" },
        path.display()
    );
    Ok(out)
}

/// Keeps each device's search details so `select` can write them out.
struct Recorder<'a> {
    inner: Vec<&'a dyn DeviceSearcher>,
    details: std::cell::RefCell<Vec<(Device, SearchDetails)>>,
}

struct RecordingSearcher<'r, 'a> {
    recorder: &'r Recorder<'a>,
    index: usize,
}

impl DeviceSearcher for RecordingSearcher<'_, '_> {
    fn device(&self) -> Device {
        self.recorder.inner[self.index].device()
    }

    fn search(&self, program: &LoopProgram) -> Result<crate::destination::DeviceSearch, GaError> {
        let mut found = self.recorder.inner[self.index].search(program)?;
        let details = std::mem::replace(&mut found.details, SearchDetails::None);
        self.recorder.details.borrow_mut().push((self.device(), details));
        Ok(found)
    }
}

fn parse_instant(text: &str) -> Result<f64, CliError> {
    let bad = || CliError::Parse(format!("invalid time `{text}`: expected seconds or HH:MM:SS"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        return Ok(nums[0] * 3600.0 + nums[1] * 60.0 + nums[2]);
    }
    text.parse::<f64>().map_err(|_| bad())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub traces: Vec<String>,
    pub window: (f64, f64),
    pub seconds: u64,
    pub energy_ws: f64,
}

pub fn energy_of(traces: &[PowerTrace], start: Option<f64>, end: Option<f64>) -> Result<EnergyReport, CliError> {
    let span = combined_span(traces).ok_or_else(|| CliError::Parse("traces contain no samples".into()))?;
    let window = (start.unwrap_or(span.0), end.unwrap_or(span.1));
    let energy_ws = integrate_energy(traces, window.0, window.1).map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(EnergyReport {
        traces: traces.iter().map(|t| t.device_label.clone()).collect(),
        window,
        seconds: (window.1 - window.0).ceil() as u64,
        energy_ws,
    })
}

pub fn cmd_energy(args: &EnergyArgs) -> Result<String, CliError> {
    let mut traces = Vec::new();
    for arg in &args.traces {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(arg);
                let stem = p.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let trace = parse_power_csv(&label, &text)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        traces.push(trace);
    }
    let start = args.start.as_deref().map(parse_instant).transpose()?;
    let end = args.end.as_deref().map(parse_instant).transpose()?;
    let report = energy_of(&traces, start, end)?;
    if let Some(dir) = &args.out {
        write_file(dir, "energy.json", &json_line(&report))?;
    }
    Ok(format!(
        "{:.1} Watt*sec over {} s ({})\n",
        report.energy_ws,
        report.seconds,
        report.traces.join(" + ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Evaluator(String::new()).exit_code(), 3);
        assert_eq!(CliError::Parse(String::new()).exit_code(), 4);
    }

    #[test]
    fn instants() {
        assert_eq!(parse_instant("15:04:07").unwrap(), 54247.0);
        assert_eq!(parse_instant("12.5").unwrap(), 12.5);
        assert!(parse_instant("soon").is_err());
    }

    #[test]
    fn table_for_empty_program() {
        let p = crate::loop_model::parse_source("").unwrap();
        let t = loop_table(&p);
        assert_eq!(t.lines().count(), 2);
        assert!(t.ends_with("0 loops, 0 parallelizable\n"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
