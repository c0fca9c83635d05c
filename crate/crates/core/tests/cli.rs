mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixture, read_fixture};
use offload_core::destination::{SelectionOutcome, REASON_REQUIREMENT_MET};
use offload_core::ga::SearchHistory;
use offload_core::pattern::Device;
use serde_json::{json, Value};

fn offload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offload"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The Himeno config with an absolute input path and `edit` applied, written
/// into `dir`.
fn himeno_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> String {
    let mut v: Value = serde_json::from_str(&read_fixture("himeno.json")).unwrap();
    v["input"] = json!(fixture("himeno.c"));
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn analyze_lists_every_loop() {
    let o = offload(&["analyze", fixture("himeno.c").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("13 loops, 13 parallelizable"), "{text}");

    let o = offload(&["analyze", fixture("nested.c").to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["loops"].as_array().unwrap().len(), 2);
    assert_eq!(v["loops"][0]["parallelizable"], json!(false));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(offload(&["search", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    let cfg = himeno_config(dir.path(), |_| {});
    assert_eq!(offload(&["search", "--config", &cfg]).status.code(), Some(2), "auto is not a device");
    assert_eq!(offload(&["search", "--config", &cfg, "--device", "tpu"]).status.code(), Some(2));

    let bad = dir.path().join("bad.c");
    std::fs::write(&bad, "float a[4];\nfor (i = 0; i < 4; i++) { a[i] = ; }\n").unwrap();
    let cfg = himeno_config(dir.path(), |v| v["input"] = json!(bad));
    assert_eq!(offload(&["search", "--config", &cfg, "--device", "gpu"]).status.code(), Some(4));

    let cfg = himeno_config(dir.path(), |v| {
        v["mode"] = json!("external");
        v["commands"] = json!({ "gpu": { "argv": ["/definitely/not/a/program"] } });
    });
    let o = offload(&["search", "--config", &cfg, "--device", "gpu"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn search_writes_identical_histories_for_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = himeno_config(dir.path(), |_| {});
    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        let o = offload(&[
            "search", "--config", &cfg, "--device", "gpu", "--seed", "7", "--parallel", "3", "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out_dir.join("history.json")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let history = SearchHistory::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(history.config.seed, 7);
    assert_eq!(history.generations.len(), 12);
    assert_eq!(history.to_json(), std::str::from_utf8(&a).unwrap().trim_end());
}

#[test]
fn fpga_search_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = himeno_config(dir.path(), |_| {});
    let out_dir = dir.path().join("out");
    let o = offload(&["search", "--config", &cfg, "--device", "fpga", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("fpga_report.json")).unwrap()).unwrap();
    assert_eq!(report["retained"], json!([2, 9, 5]));
    let best: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("best_pattern.json")).unwrap()).unwrap();
    assert_eq!(best["offloaded_loops"], json!([2, 5, 9]));
}

#[test]
fn select_stops_at_the_first_device_meeting_the_requirement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = himeno_config(dir.path(), |v| {
        v["requirement"] = json!({ "mode": "time_budget", "value": 60.0 });
    });
    let out_dir = dir.path().join("sel");
    let o = offload(&["select", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let outcome = SelectionOutcome::from_json(&std::fs::read_to_string(out_dir.join("selection.json")).unwrap()).unwrap();
    assert_eq!(outcome.chosen_device, Device::ManyCore);
    assert!(outcome.requirement_met);
    assert_eq!(outcome.evaluated_devices(), vec![Device::ManyCore]);
    let skipped: Vec<_> = outcome.skipped.iter().map(|s| (s.device, s.reason.as_str())).collect();
    assert_eq!(
        skipped,
        vec![(Device::Gpu, REASON_REQUIREMENT_MET), (Device::Fpga, REASON_REQUIREMENT_MET)]
    );
    assert!(out_dir.join("history_many_core.json").exists());
    assert!(!out_dir.join("history_gpu.json").exists());
}

#[test]
fn select_takes_the_best_score_when_nothing_qualifies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = himeno_config(dir.path(), |v| {
        v["requirement"] = json!({ "mode": "time_budget", "value": 5.0 });
    });
    let out_dir = dir.path().join("sel");
    let o = offload(&["select", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let outcome = SelectionOutcome::from_json(&std::fs::read_to_string(out_dir.join("selection.json")).unwrap()).unwrap();
    assert!(!outcome.requirement_met);
    assert_eq!(outcome.evaluated_devices(), Device::VERIFICATION_ORDER.to_vec());
    assert_eq!(outcome.chosen_device, Device::Gpu);
    assert!(out_dir.join("fpga_report.json").exists());

    let o = offload(&["select", "--config", &cfg, "--device", "gpu"]);
    assert_eq!(o.status.code(), Some(2));
    let no_req = himeno_config(dir.path(), |_| {});
    assert_eq!(offload(&["select", "--config", &no_req]).status.code(), Some(2));
}

#[test]
fn energy_reproduces_the_published_totals() {
    let cpu_only = format!("cpu={}", fixture("fig5_cpu_only.csv").display());
    let o = offload(&["energy", &cpu_only]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("4077.0 Watt*sec over 153 s"), "{}", stdout(&o));

    let dir = tempfile::tempdir().unwrap();
    let o = offload(&[
        "energy",
        &format!("cpu={}", fixture("fig5_cpu.csv").display()),
        &format!("gpu={}", fixture("fig5_gpu.csv").display()),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("energy.json")).unwrap()).unwrap();
    assert!((report["energy_ws"].as_f64().unwrap() - 2071.0).abs() < 1e-6);
    assert_eq!(report["seconds"], json!(19));

    let o = offload(&["energy", &cpu_only, "--start", "15:04:07", "--end", "15:04:15"]);
    assert!(stdout(&o).starts_with("210.7 Watt*sec over 8 s"), "{}", stdout(&o));
    assert_eq!(offload(&["energy", "cpu=/no/such/file.csv"]).status.code(), Some(2));
}
