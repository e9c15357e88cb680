#![no_main]

use hermfunc::exact::{parse_rational, rational_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(r) = parse_rational(text) {
        assert_eq!(parse_rational(&rational_string(&r)), Some(r));
    }
});
