#![no_main]

use bifurc::io::{parse_eps_grid, parse_theta_grid};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(eps) = parse_eps_grid(text) {
        assert!(eps.windows(2).all(|w| w[1] < w[0]));
    }
    for dim in 1..=3 {
        if let Ok(pts) = parse_theta_grid(text, dim) {
            assert!(pts.iter().all(|p| p.len() == dim));
        }
    }
});
