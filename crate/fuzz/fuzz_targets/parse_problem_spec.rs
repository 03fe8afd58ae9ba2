#![no_main]

use bifurc::problem::{validate, ProblemSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<ProblemSpec>(data) {
        let report = validate(&spec);
        assert_eq!(report.ok, report.violations.is_empty());
    }
});
