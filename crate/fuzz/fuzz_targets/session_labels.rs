#![no_main]

use libfuzzer_sys::fuzz_target;
use peft_lad::logs::parse_session_labels;

fuzz_target!(|data: &[u8]| {
    let _ = parse_session_labels(data);
});
