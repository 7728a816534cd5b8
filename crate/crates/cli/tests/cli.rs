//! Drives the compiled binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tilequorum::metrics::{parse_csv, parse_jsonl, Protocol};
use tilequorum::scenarios;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilequorum")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_scenario(dir: &Path, name: &str) -> String {
    let spec = scenarios::find(name).unwrap();
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, spec.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn fault_free_run_reports_no_rejuvenation() {
    let d = tempfile::tempdir().unwrap();
    let file = write_scenario(d.path(), "fault_free_n3");
    let o = bin(d.path(), &["run", &file, "--out", "m.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.contains("rejuvenations=0")));
    let rows = parse_csv(&fs::read_to_string(d.path().join("m.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), Protocol::ALL.len());
    assert!(rows.iter().all(|r| r.delivered == 10 && r.rejuv_count == 0));
}

#[test]
fn builtin_names_and_jsonl_output() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(d.path(), &["run", "wrong_output_tile", "--format", "jsonl"]);
    assert_eq!(code(&o), 0);
    let rows = parse_jsonl(&fs::read_to_string(d.path().join("wrong_output_tile.jsonl")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].partial_rejuv >= 1);
}

#[test]
fn seed_override_changes_the_scenario_seed_only() {
    let d = tempfile::tempdir().unwrap();
    let a = bin(d.path(), &["run", "network_tile", "--out", "a.csv"]);
    let b = bin(d.path(), &["run", "network_tile", "--seed", "99", "--out", "b.csv"]);
    let c = bin(d.path(), &["run", "network_tile", "--seed", "99", "--out", "c.csv"]);
    assert_eq!((code(&a), code(&b), code(&c)), (0, 0, 0));
    let read = |f: &str| fs::read(d.path().join(f)).unwrap();
    assert_eq!(read("b.csv"), read("c.csv"));
    assert_ne!(read("a.csv"), read("b.csv"));
}

#[test]
fn verify_rejects_unbounded_scenarios() {
    let d = tempfile::tempdir().unwrap();
    let file = write_scenario(d.path(), "unbounded_corruption");
    let o = bin(d.path(), &["verify", &file]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid scenario"));
}

#[test]
fn verify_expect_violation_passes_on_the_negative_scenario() {
    let d = tempfile::tempdir().unwrap();
    let file = write_scenario(d.path(), "unbounded_corruption");
    assert_eq!(code(&bin(d.path(), &["verify", &file, "--expect-violation"])), 0);
    // a clean scenario does not satisfy the expectation
    assert_eq!(code(&bin(d.path(), &["verify", "fault_free_n3", "--expect-violation"])), 2);
    assert_eq!(code(&bin(d.path(), &["verify", "crash_tile"])), 0);
}

#[test]
fn run_reports_violations_and_exhaustion() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin(d.path(), &["run", "single_core_wrong_output"])), 2);
    assert_eq!(code(&bin(d.path(), &["run", "software_hashing", "--max-cycles", "1000000"])), 3);
}

#[test]
fn usage_and_parse_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.json"), r#"{"name":"x","unknown":1}"#).unwrap();
    assert_eq!(code(&bin(d.path(), &["run", "bad.json"])), 1);
    assert_eq!(code(&bin(d.path(), &["run", "no_such_scenario"])), 1);
    assert_eq!(code(&bin(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&bin(d.path(), &["run", "fault_free_n3", "--format", "xml"])), 1);
}

#[test]
fn batch_merges_deterministically() {
    let d = tempfile::tempdir().unwrap();
    let sc = d.path().join("sc");
    fs::create_dir(&sc).unwrap();
    for name in ["fault_free_n5", "crash_tile", "escalation_chain", "scale_out"] {
        write_scenario(&sc, name);
    }
    let a = bin(d.path(), &["batch", "sc", "--out", "a.csv", "--jobs", "2"]);
    let b = bin(d.path(), &["batch", "sc", "--out", "b.csv", "--jobs", "1"]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    let (ta, tb) = (fs::read(d.path().join("a.csv")).unwrap(), fs::read(d.path().join("b.csv")).unwrap());
    assert_eq!(ta, tb);
    let rows = parse_csv(std::str::from_utf8(&ta).unwrap()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    // sorted by file name, then by protocol list
    assert_eq!(names, ["crash_tile", "escalation_chain", "fault_free_n5", "fault_free_n5", "fault_free_n5", "scale_out"]);
}

#[test]
fn batch_exit_is_the_worst_run() {
    let d = tempfile::tempdir().unwrap();
    let sc = d.path().join("sc");
    fs::create_dir(&sc).unwrap();
    write_scenario(&sc, "fault_free_n3");
    write_scenario(&sc, "single_core_wrong_output");
    fs::write(sc.join("broken.json"), "{").unwrap();
    let o = bin(d.path(), &["batch", "sc"]);
    assert_eq!(code(&o), 2);
    let rows = parse_csv(&fs::read_to_string(d.path().join("batch.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), Protocol::ALL.len() + 2);
}

#[test]
fn batch_of_an_empty_directory_fails() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("empty")).unwrap();
    assert_eq!(code(&bin(d.path(), &["batch", "empty"])), 1);
}

#[test]
fn list_exports_parseable_scenarios() {
    let d = tempfile::tempdir().unwrap();
    let o = bin(d.path(), &["list-scenarios", "--export", "out"]);
    assert_eq!(code(&o), 0);
    let n = fs::read_dir(d.path().join("out")).unwrap().count();
    assert_eq!(n, scenarios::builtin().len());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), n);
    for e in fs::read_dir(d.path().join("out")).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        tilequorum::ScenarioSpec::from_json(&text).unwrap();
    }
}
