use std::path::Path;
use std::process::Command as Process;

use mixnl_cli::config::{Command, Format, RunConfig};
use mixnl_cli::report::Report;
use mixnl_cli::{assemble, resolve, CliError};
use proptest::prelude::*;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn mixnl(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_mixnl")).args(args).output().unwrap()
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "run.cfg", "command = solve\ns = 0.5\nmesh = 64\n");
    let cfg = resolve(None, Some(&file), &[("s", "0.75".into())]).unwrap();
    assert_eq!(cfg.s, 0.75);
    assert_eq!(cfg.mesh, 64);
    assert_eq!(cfg.command, Command::Solve);
    let cfg = resolve(Some(Command::Extend), Some(&file), &[]).unwrap();
    assert_eq!(cfg.command, Command::Extend);
}

#[test]
fn empty_file_and_full_flags_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "empty.cfg", "");
    let flags: Vec<(&str, String)> = [
        ("dim", "3"),
        ("s", "0.25"),
        ("p", "2.5"),
        ("lambda", "-0.5"),
        ("mesh", "96"),
        ("grading", "1.5"),
        ("rmax", "3"),
        ("quad", "64"),
        ("tol", "1e-9"),
        ("seed", "18446744073709551615"),
        ("jobs", "1"),
        ("out", "results"),
        ("format", "csv,json"),
    ]
    .into_iter()
    .map(|(k, v)| (k, v.to_string()))
    .collect();
    let cfg = resolve(Some(Command::Spectrum), Some(&file), &flags).unwrap();
    assert_eq!(cfg.dim, 3);
    assert_eq!(cfg.lambda, -0.5);
    assert_eq!(cfg.seed, u64::MAX);
    assert_eq!(cfg.format, vec![Format::Json, Format::Csv]);
}

#[test]
fn validation_names_the_key() {
    let cases: [(&str, &str); 6] = [
        ("dim = 3\np = 7\n", "p"),
        ("s = 1\n", "s"),
        ("p = 2\n", "p"),
        ("dim = 1\n", "dim"),
        ("tol = 0\n", "tol"),
        ("starts = 3\n", "starts"),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in cases {
        let file = write(dir.path(), "bad.cfg", text);
        match resolve(None, Some(&file), &[]) {
            Err(CliError::Invalid { key: k, .. }) => assert_eq!(k, key, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
        assert!(assemble(None, Some(&file), &[]).is_ok());
    }
}

#[test]
fn unknown_flag_values_are_rejected() {
    assert!(matches!(
        resolve(None, None, &[("control", "sideways".into())]),
        Err(CliError::Invalid { key, .. }) if key == "control"
    ));
}

#[test]
fn binary_exit_codes() {
    assert_eq!(mixnl(&["--help"]).status.code(), Some(0));
    assert_eq!(mixnl(&["--version"]).status.code(), Some(0));
    assert_eq!(mixnl(&["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mixnl(&["integrate"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let o = mixnl(&["solve", "--dim", "3", "--p", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report: Report = serde_json::from_str(&std::fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
    assert!(report.error.unwrap().contains("`p`"));
}

#[test]
fn solve_writes_every_requested_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let o = mixnl(&["solve", "--mesh", "48", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    for name in ["solve.json", "solve_checks.csv", "profile.csv", "profile.svg", "solution.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let csv = std::fs::read_to_string(out.join("solve_checks.csv")).unwrap();
    assert!(csv.starts_with("name,verdict,margin,tolerance\n"));
    assert_eq!(csv.lines().count(), 6);
    let cache: Vec<_> = std::fs::read_dir(out.join("cache")).unwrap().collect();
    assert_eq!(cache.len(), 1);
    // no temporary files are left behind
    assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));

    let only_json = dir.path().join("json");
    let o = mixnl(&["solve", "--mesh", "48", "--format", "json", "--out", only_json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!only_json.join("profile.svg").exists());
    assert!(only_json.join("solve.json").is_file());
}

#[test]
fn report_schema_has_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        command: Command::Solve,
        mesh: 48,
        out: dir.path().to_path_buf(),
        format: vec![Format::Json],
        ..RunConfig::default()
    };
    let report = mixnl_cli::run::run(&cfg);
    assert_eq!(report.exit_code(), 0);
    let value: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    for key in ["version", "config", "environment", "results"] {
        assert!(value.get(key).is_some(), "{key}");
    }
    assert!(value["environment"]["build_id"].is_string());
    for row in value["results"].as_array().unwrap() {
        for key in ["name", "verdict", "margin", "tolerance", "data"] {
            assert!(row.get(key).is_some(), "{key}");
        }
    }
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        2usize..6,
        0.01f64..0.99,
        2.01f64..4.0,
        -5.0f64..5.0,
        16usize..400,
        any::<u64>(),
        prop::sample::subsequence(vec![Format::Json, Format::Csv, Format::Svg], 1..=3),
        prop::collection::vec(0.01f64..0.99, 1..6),
        any::<bool>(),
    )
        .prop_map(|(dim, s, p, lambda, mesh, seed, format, mut s_knots, grid)| {
            s_knots.sort_by(f64::total_cmp);
            RunConfig {
                dim,
                s,
                p,
                lambda,
                mesh,
                seed,
                format,
                s_knots,
                grid,
                ..RunConfig::default()
            }
        })
}

proptest! {
    #[test]
    fn config_text_round_trips_byte_identically(cfg in arb_config()) {
        let text = cfg.to_text();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
