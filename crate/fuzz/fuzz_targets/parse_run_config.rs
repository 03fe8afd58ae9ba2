#![no_main]

use bifurc::io::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        // Accepted configs survive a round trip and hash stably.
        let again = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
        let _ = cfg.grid();
    }
});
