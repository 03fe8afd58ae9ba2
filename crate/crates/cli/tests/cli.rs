use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bifurc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bifurc"))
        .args(args)
        .output()
        .expect("run bifurc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_spec(dir: &Path, body: &str) -> String {
    let path = dir.join("spec.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const ZERO_MASS: &str = r#"{"N": 1, "p": 3, "q": 5, "A": 1,
  "a": {"family": "gaussian_bump", "amplitude": 0, "width": 1},
  "b": {"family": "gaussian_bump", "amplitude": 1, "width": 1},
  "case": "l1_case"}"#;

const SUPERCRITICAL: &str = r#"{"N": 3, "p": 3, "q": 6, "A": 1,
  "a": {"family": "gaussian_bump", "amplitude": 1, "width": 1},
  "b": {"family": "gaussian_bump", "amplitude": 1, "width": 1},
  "case": "l1_case"}"#;

#[test]
fn groundstate_outputs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = bifurc(&["groundstate", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["profile.csv", "groundstate.json", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let profile = fs::read_to_string(a.join("profile.csv")).unwrap();
    assert!(profile.starts_with("r,z,dz\n0,1.4142135623730951,"));
}

#[test]
fn zero_mass_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), ZERO_MASS);
    let o = bifurc(&["verify", "--spec", &spec]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(a₂)"), "{}", stderr(&o));
}

#[test]
fn supercritical_exponent_fails_the_window() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SUPERCRITICAL);
    let o = bifurc(&[
        "groundstate",
        "--spec",
        &spec,
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exponent window"), "{}", stderr(&o));
}

#[test]
fn gamma_profile_is_monotone_on_each_side() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bifurc(&[
        "gamma",
        "--out",
        tmp.path().to_str().unwrap(),
        "--theta-grid",
        "-6:6:121",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("gamma.csv")).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (t, g) = l.split_once(',').unwrap();
            (t.parse().unwrap(), g.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 121);
    for w in rows.windows(2) {
        let ((t0, g0), (_, g1)) = (w[0], w[1]);
        if t0 < 0.0 {
            assert!(g1 <= g0, "{w:?}");
        } else {
            assert!(g1 >= g0, "{w:?}");
        }
    }
}

#[test]
fn branch_then_morse() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let d = dir.to_str().unwrap();
    let o = bifurc(&["branch", "--out", d, "--eps-grid", "0.2:3", "--dump-fields"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("branch.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(
        fs::read_to_string(dir.join("loglog_w.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    assert!(dir.join("fields/u_02.bin").exists());
    assert!(
        !dir.join("report.json").exists(),
        "three points are too few for rate fits"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest["config"]["eps_grid"],
        serde_json::json!([0.2, 0.1, 0.05])
    );

    let o = bifurc(&["morse", "--branch", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("branch.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1")), "{csv}");
    assert!(dir.join("morse.json").exists());
}

#[test]
fn verify_selected_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"problem": {"N": 1, "p": 3, "q": 5, "A": 1,
        "a": {"family": "gaussian_bump", "amplitude": 0.5641895835477563, "width": 1},
        "b": {"family": "gaussian_bump", "amplitude": 1, "width": 1},
        "case": "l1_case"}, "verify": {"criteria": [1, 13]}}"#;
    let spec = write_spec(tmp.path(), cfg);
    let out = tmp.path().join("verdict.json");
    let o = bifurc(&["verify", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["criteria"].as_array().unwrap().len(), 2);
    assert!(stderr(&o).contains("PASS criterion  1"));
}

#[test]
fn rejects_malformed_flags() {
    let o = bifurc(&["branch", "--eps-grid", "0.1,0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("io::Parse"), "{}", stderr(&o));
    let o = bifurc(&["gamma", "--case", "sideways"]);
    assert!(!o.status.success());
}
