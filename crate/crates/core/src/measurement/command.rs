//! Evaluation through an external build-and-run command.
//!
//! The command receives the pattern key in `OFFLOAD_PATTERN` and the budget in
//! `OFFLOAD_BUDGET_S`. Its last stdout line must be `ELAPSED_S=<seconds>`. It
//! may also print `ENERGY_WS=<watt-seconds>`; otherwise energy is integrated
//! from the configured power-trace CSV files over the run's window.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use super::{
    integrate_energy, parse_power_csv, Clock, Evaluator, MeasureError, MeasurementResult,
    PowerTrace, TIMEOUT_TIME_S,
};
use crate::pattern::OffloadPattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSource {
    pub label: String,
    pub path: PathBuf,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    /// Program and arguments.
    pub argv: Vec<String>,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    #[serde(default)]
    pub traces: Vec<TraceSource>,
    #[serde(default = "one")]
    pub parallelism: usize,
}

#[derive(Debug, Clone)]
pub struct CommandEvaluator {
    spec: CommandSpec,
}

impl CommandEvaluator {
    pub fn new(spec: CommandSpec) -> Result<Self, MeasureError> {
        if spec.argv.is_empty() {
            return Err(MeasureError::Fatal("command argv is empty".into()));
        }
        if spec.parallelism == 0 {
            return Err(MeasureError::Fatal("command parallelism must be at least 1".into()));
        }
        Ok(Self { spec })
    }

    fn resolve(&self, path: &PathBuf) -> PathBuf {
        match &self.spec.working_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.clone(),
        }
    }

    fn read_traces(&self) -> Result<Vec<PowerTrace>, MeasureError> {
        self.spec
            .traces
            .iter()
            .map(|src| {
                let path = self.resolve(&src.path);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    MeasureError::Backend(format!("reading {}: {e}", path.display()))
                })?;
                Ok(parse_power_csv(&src.label, &text)?)
            })
            .collect()
    }

    fn energy_from_traces(
        &self,
        start: &RunStart,
        elapsed_s: f64,
    ) -> Result<TraceEnergy, MeasureError> {
        let traces = self.read_traces()?;
        let clock = traces.first().map(|t| t.clock).unwrap_or_default();
        let origin = match clock {
            Clock::TimeOfDay => start.time_of_day,
            Clock::Seconds => start.epoch,
        }
        .floor();
        let window = (origin, origin + elapsed_s.ceil().max(1.0));
        let energy = integrate_energy(&traces, window.0, window.1)?;
        Ok((energy, traces, window))
    }
}

/// Energy, the traces it came from and the integration window.
type TraceEnergy = (f64, Vec<PowerTrace>, (f64, f64));

struct RunStart {
    epoch: f64,
    time_of_day: f64,
}

impl RunStart {
    fn now() -> Self {
        let epoch = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let local = chrono::Local::now();
        let time_of_day = f64::from(local.num_seconds_from_midnight())
            + f64::from(local.nanosecond() % 1_000_000_000) / 1e9;
        Self { epoch, time_of_day }
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut out = String::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_string(&mut out);
        }
        out
    })
}

/// Kills the command together with anything it spawned. The command runs as
/// the leader of its own process group on Unix.
fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    if let Ok(pid) = libc::pid_t::try_from(child.id()) {
        // SAFETY: plain syscall on a process group we created.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Waits for the child, killing it once `budget_s` has passed. Returns `None`
/// when it was killed.
fn wait_with_budget(child: &mut Child, budget_s: f64) -> Result<Option<bool>, MeasureError> {
    let started = Instant::now();
    let budget = Duration::from_secs_f64(budget_s);
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(Some(status.success())),
            Ok(None) if started.elapsed() >= budget => {
                kill_tree(child);
                let _ = child.wait();
                return Ok(None);
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(MeasureError::Backend(format!("waiting for command: {e}"))),
        }
    }
}

fn parse_report(stdout: &str) -> Result<(f64, Option<f64>), String> {
    let value = |line: &str, key: &str| -> Option<Result<f64, String>> {
        let rest = line.trim().strip_prefix(key)?;
        Some(
            rest.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| format!("bad value in `{}`", line.trim())),
        )
    };
    let last = stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or("command printed nothing")?;
    let elapsed = value(last, "ELAPSED_S=")
        .ok_or_else(|| format!("last output line `{}` is not ELAPSED_S=<seconds>", last.trim()))??;
    let energy = stdout
        .lines()
        .find_map(|l| value(l, "ENERGY_WS="))
        .transpose()?;
    Ok((elapsed, energy))
}

impl Evaluator for CommandEvaluator {
    fn evaluate(
        &self,
        pattern: &OffloadPattern,
        budget_s: f64,
    ) -> Result<MeasurementResult, MeasureError> {
        if budget_s.is_nan() || budget_s <= 0.0 {
            return Err(MeasureError::InvalidBudget(budget_s));
        }
        let mut cmd = Command::new(&self.spec.argv[0]);
        cmd.args(&self.spec.argv[1..])
            .env("OFFLOAD_PATTERN", pattern.key())
            .env("OFFLOAD_BUDGET_S", budget_s.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &self.spec.working_dir {
            cmd.current_dir(dir);
        }
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let start = RunStart::now();
        let mut child = cmd.spawn().map_err(|e| {
            MeasureError::Fatal(format!("cannot start `{}`: {e}", self.spec.argv[0]))
        })?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());
        let finished = wait_with_budget(&mut child, budget_s)?;
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();

        let Some(success) = finished else {
            let mut result = MeasurementResult {
                time_s: TIMEOUT_TIME_S,
                energy_ws: 0.0,
                traces: Vec::new(),
                window: None,
                timed_out: true,
                error: None,
            };
            if self.spec.traces.is_empty() {
                result.error = Some("timed out; no power traces configured".into());
            } else {
                match self.energy_from_traces(&start, budget_s) {
                    Ok((energy, traces, window)) => {
                        result.energy_ws = energy;
                        result.traces = traces;
                        result.window = Some(window);
                    }
                    Err(e) => result.error = Some(format!("timed out; {e}")),
                }
            }
            return Ok(result);
        };
        if !success {
            return Err(MeasureError::Backend(format!(
                "command exited with failure: {}",
                stderr.trim()
            )));
        }
        let (elapsed, energy) = parse_report(&stdout).map_err(MeasureError::Backend)?;
        let timed_out = elapsed > budget_s;
        let (energy_ws, traces, window) = match energy {
            Some(e) => (e, Vec::new(), None),
            None if self.spec.traces.is_empty() => {
                return Err(MeasureError::Backend(
                    "no ENERGY_WS line and no power traces configured".into(),
                ))
            }
            None => {
                let (e, t, w) = self.energy_from_traces(&start, elapsed.min(budget_s))?;
                (e, t, Some(w))
            }
        };
        Ok(MeasurementResult {
            time_s: if timed_out { TIMEOUT_TIME_S } else { elapsed },
            energy_ws,
            traces,
            window,
            timed_out,
            error: None,
        })
    }

    fn parallelism(&self) -> usize {
        self.spec.parallelism
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::loop_model::parse_source;
    use crate::pattern::{materialize, Device, Gene};

    fn pattern() -> OffloadPattern {
        let p = parse_source("float a[4];\nfor (i = 0; i < 4; i++) a[i] = 1.0;").unwrap();
        materialize(&p, &Gene::ones(1), Device::Gpu).unwrap()
    }

    fn sh(script: &str) -> CommandSpec {
        CommandSpec {
            argv: vec!["sh".into(), "-c".into(), script.into()],
            working_dir: None,
            traces: Vec::new(),
            parallelism: 1,
        }
    }

    #[test]
    fn reads_reported_time_and_energy() {
        let eval = CommandEvaluator::new(sh(
            "echo building $OFFLOAD_PATTERN; echo ENERGY_WS=2071.5; echo ELAPSED_S=19.25",
        ))
        .unwrap();
        let r = eval.evaluate(&pattern(), 180.0).unwrap();
        assert_eq!(r.time_s, 19.25);
        assert_eq!(r.energy_ws, 2071.5);
        assert!(!r.timed_out);
    }

    #[test]
    fn pattern_key_is_passed_in_environment() {
        let eval = CommandEvaluator::new(sh(
            "test \"$OFFLOAD_PATTERN\" = gpu:1 && test \"$OFFLOAD_BUDGET_S\" = 5 && echo ENERGY_WS=1 && echo ELAPSED_S=1",
        ))
        .unwrap();
        assert!(eval.evaluate(&pattern(), 5.0).is_ok());
    }

    #[test]
    fn integrates_epoch_traces_over_run_window() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = sh(
            "now=$(date +%s); for k in -5 -4 -3 -2 -1 0 1 2 3 4 5 6; do echo \"$((now + k)),10\"; done > cpu.csv; echo ELAPSED_S=2.5",
        );
        spec.working_dir = Some(dir.path().to_path_buf());
        spec.traces = vec![TraceSource {
            label: "cpu".into(),
            path: "cpu.csv".into(),
        }];
        let r = CommandEvaluator::new(spec).unwrap().evaluate(&pattern(), 60.0).unwrap();
        assert_eq!(r.energy_ws, 30.0);
        assert_eq!(r.recompute_energy().unwrap(), 30.0);
    }

    #[test]
    fn slow_command_is_killed_and_penalized() {
        let eval = CommandEvaluator::new(sh("sleep 5; echo ELAPSED_S=5")).unwrap();
        let started = Instant::now();
        let r = eval.evaluate(&pattern(), 0.3).unwrap();
        assert!(started.elapsed() < Duration::from_secs(4));
        assert!(r.timed_out);
        assert_eq!(r.time_s, 10_000.0);
    }

    #[test]
    fn reported_time_over_budget_is_a_timeout() {
        let eval = CommandEvaluator::new(sh("echo ENERGY_WS=5; echo ELAPSED_S=500")).unwrap();
        let r = eval.evaluate(&pattern(), 180.0).unwrap();
        assert!(r.timed_out);
        assert_eq!(r.time_s, 10_000.0);
    }

    #[test]
    fn bad_output_and_failures_are_backend_errors() {
        for script in ["echo hello", "echo ELAPSED_S=abc", "exit 3", "echo ELAPSED_S=1"] {
            let err = CommandEvaluator::new(sh(script)).unwrap().evaluate(&pattern(), 10.0).unwrap_err();
            assert!(matches!(err, MeasureError::Backend(_)), "{script}: {err:?}");
            assert!(!err.is_fatal());
        }
    }

    #[test]
    fn missing_program_is_fatal() {
        let spec = CommandSpec {
            argv: vec!["/nonexistent/offload-runner".into()],
            working_dir: None,
            traces: Vec::new(),
            parallelism: 1,
        };
        let err = CommandEvaluator::new(spec).unwrap().evaluate(&pattern(), 1.0).unwrap_err();
        assert!(err.is_fatal());
        assert!(CommandEvaluator::new(sh("")).is_ok());
        assert!(CommandEvaluator::new(CommandSpec { argv: vec![], ..sh("") }).is_err());
    }

    #[test]
    fn report_parsing() {
        assert_eq!(parse_report("x\nELAPSED_S=3\n\n").unwrap(), (3.0, None));
        assert_eq!(parse_report("ENERGY_WS=7\nELAPSED_S=3").unwrap(), (3.0, Some(7.0)));
        assert!(parse_report("ELAPSED_S=3\nmore").is_err());
        assert!(parse_report("ELAPSED_S=-1").is_err());
    }
}
