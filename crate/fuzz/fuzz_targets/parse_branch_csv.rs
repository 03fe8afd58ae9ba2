#![no_main]

use bifurc::io::{parse_branch_csv, write_branch_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_branch_csv(text) {
        let dim = rows.iter().map(|r| r.theta.len()).max().unwrap_or(1).max(1);
        let _ = write_branch_csv(&rows, dim);
    }
});
