#![no_main]

use hermfunc::harness::{JobConfig, Tolerances};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = JobConfig::from_toml_str(text) else { return };
    let _ = Tolerances::resolve(&cfg.tolerances, false);
    if let Ok(res) = cfg.resolutions() {
        let _ = cfg.alias_check(&res);
    }
    let _ = cfg.modes();
});
