//! One test per acceptance criterion. Each prints a single `PASS`/`FAIL`
//! line and fails when its criterion fails. All tests share one verifier so
//! branches are swept once.

use bifurc::io::{RunConfig, VerifyLevel};
use bifurc::verify::Verifier;
use std::sync::OnceLock;

fn verifier() -> &'static Verifier {
    static V: OnceLock<Verifier> = OnceLock::new();
    V.get_or_init(|| {
        Verifier::new(RunConfig::default())
            .expect("default config")
            .with_level(VerifyLevel::Full)
    })
}

fn check(id: u8) {
    let r = verifier().criterion(id);
    println!("{}", r.line());
    assert!(
        r.passed,
        "{}\n{}",
        r.line(),
        serde_json::to_string_pretty(&r.details).unwrap_or_default()
    );
}

#[test]
fn criterion_01_ground_state_fidelity() {
    check(1);
}

#[test]
fn criterion_02_gamma_limit_integrable() {
    check(2);
}

#[test]
fn criterion_03_gamma_limit_algebraic() {
    check(3);
}

#[test]
fn criterion_04_gamma_decay() {
    check(4);
}

#[test]
fn criterion_05_gprime_rates() {
    check(5);
}

#[test]
fn criterion_06_reduction() {
    check(6);
}

#[test]
fn criterion_07_localization() {
    check(7);
}

#[test]
fn criterion_08_energy_expansion() {
    check(8);
}

#[test]
fn criterion_09_morse_index() {
    check(9);
}

#[test]
fn criterion_10_hessian_limit() {
    check(10);
}

#[test]
fn criterion_11_scaling_trichotomy() {
    check(11);
}

#[test]
fn criterion_12_pde_residual() {
    check(12);
}

#[test]
fn criterion_13_calculus_consistency() {
    check(13);
}
