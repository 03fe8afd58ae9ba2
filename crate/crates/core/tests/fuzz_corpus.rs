//! Replays the fuzz corpus seeds through the invariants the fuzz targets
//! assert, so the seeds stay meaningful without a fuzzing toolchain.

use bifurc::io::{
    decode_field, encode_field, parse_branch_csv, parse_eps_grid, parse_theta_grid, RunConfig,
};
use bifurc::problem::{validate, ProblemSpec};
use std::fs;
use std::path::PathBuf;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn run_config_seeds_parse() {
    for (name, data) in seeds("parse_run_config") {
        let cfg = RunConfig::from_json(std::str::from_utf8(&data).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }
}

#[test]
fn problem_spec_seeds_validate() {
    for (name, data) in seeds("parse_problem_spec") {
        let spec: ProblemSpec =
            serde_json::from_slice(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        let rep = validate(&spec);
        assert_eq!(rep.ok, rep.violations.is_empty());
    }
}

#[test]
fn field_seeds_round_trip() {
    let mut decoded = 0;
    for (_, data) in seeds("decode_field") {
        if let Ok(f) = decode_field(&data) {
            assert_eq!(encode_field(&f), data);
            decoded += 1;
        }
    }
    assert!(decoded >= 2);
}

#[test]
fn branch_csv_seeds_parse() {
    for (name, data) in seeds("parse_branch_csv") {
        let rows = parse_branch_csv(std::str::from_utf8(&data).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!rows.is_empty());
    }
}

#[test]
fn grid_string_seeds_parse() {
    for (name, data) in seeds("parse_grid_strings") {
        let s = std::str::from_utf8(&data).unwrap();
        let ok = parse_eps_grid(s).is_ok() || (1..=3).any(|d| parse_theta_grid(s, d).is_ok());
        assert!(ok, "{name}");
    }
}
