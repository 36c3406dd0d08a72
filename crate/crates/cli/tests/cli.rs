use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_omega-sim"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn exec(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = exec(
            bin()
                .arg("run")
                .arg(scenarios().join("two_mode.scn"))
                .args(["--seed", "3", "--out"])
                .arg(dir.path()),
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for f in ["trace.csv", "ledger.csv", "summary.json", "behavior.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let trace = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert!(
        trace.starts_with("tick,real_time,virtual_time,active_config,channel,bits,event,damage\n")
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("summary.json")).unwrap()).unwrap();
    let keys: Vec<&String> = summary.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        [
            "total_damage",
            "reconf_wall_ticks",
            "R",
            "h_k",
            "h_kp",
            "S",
            "mode_switches",
            "erratic"
        ]
    );
}

#[test]
fn batch_uses_a_directory_per_seed() {
    let out = tempfile::tempdir().unwrap();
    let o = exec(
        bin()
            .arg("run")
            .arg(scenarios().join("iterative.scn"))
            .args(["--seed", "1", "--seed", "2", "--jobs", "2", "--out"])
            .arg(out.path()),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(out.path().join("seed-1/trace.csv").is_file());
    assert!(out.path().join("seed-2/summary.json").is_file());
}

#[test]
fn missing_scenario_exits_2() {
    let o = exec(bin().args(["run", "/nonexistent/none.scn"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_scenario_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.scn");
    fs::write(&p, "SPACE\n  b[2] = bool\nCHANNELS\n  q = fast\n").unwrap();
    let o = exec(bin().arg("run").arg(&p).arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains('4'));
}

#[test]
fn run_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("capped.scn");
    let text = "SPACE\n  b[2] = bool\nSTORAGE\n  pattern = 0 values (0,0)\n  pattern = 1 values (1,1)\nCONTROLLER\n  damage_cap = 0\nENVIRONMENT\n  event = 1\n    demand = 1\nRUN\n  ticks = 5\n";
    fs::write(&p, text).unwrap();
    let o = exec(bin().arg("run").arg(&p).arg("--out").arg(dir.path()));
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn paper_check_passes_on_the_corpus() {
    let o = exec(bin().args(["paper-check", "--corpus"]).arg(scenarios()));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = exec(bin().args(["paper-check", "--json"]));
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["mismatches"], 0);
    assert!(report["rows"].as_array().is_some_and(|r| !r.is_empty()));
}

#[test]
fn paper_check_catches_a_tampered_rate() {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(scenarios()).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
    }
    let target = dir.path().join("paper_5_1.scn");
    let text = fs::read_to_string(&target).unwrap();
    assert!(text.contains("r = 5\n"));
    fs::write(&target, text.replace("r = 5\n", "r = 1\n")).unwrap();
    let o = exec(bin().args(["paper-check", "--corpus"]).arg(dir.path()));
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn analysis_commands_emit_json() {
    let reach = exec(
        bin()
            .arg("reachability")
            .arg(scenarios().join("three_components.scn"))
            .args(["--budget", "3", "--budget", "2", "--json"]),
    );
    assert_eq!(reach.status.code(), Some(0));
    let table: serde_json::Value = serde_json::from_str(&stdout(&reach)).unwrap();
    assert_eq!(table["rows"][0]["reachable"], true);
    assert_eq!(table["rows"][1]["reachable"], false);

    let dec = exec(
        bin()
            .arg("decompose")
            .arg(scenarios().join("paper_5_1.scn"))
            .args(["dec_p", "--json"]),
    );
    assert_eq!(dec.status.code(), Some(0));
    let d: serde_json::Value = serde_json::from_str(&stdout(&dec)).unwrap();
    for k in ["operation", "permissible", "reason", "trace_equal"] {
        assert!(d.get(k).is_some(), "{k} missing from {d}");
    }

    let an = exec(
        bin()
            .arg("analyze")
            .arg(scenarios().join("corridor.scn"))
            .arg("--json"),
    );
    assert_eq!(an.status.code(), Some(0));
    let a: serde_json::Value = serde_json::from_str(&stdout(&an)).unwrap();
    for k in [
        "reachable",
        "path",
        "min_budget",
        "hazard_key",
        "redundancy_groups",
    ] {
        assert!(a.get(k).is_some(), "{k} missing from {a}");
    }

    let safety = exec(
        bin()
            .arg("safety")
            .arg(scenarios().join("probe.scn"))
            .arg("--json"),
    );
    assert_eq!(safety.status.code(), Some(0));
}
