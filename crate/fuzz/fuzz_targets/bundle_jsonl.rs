#![no_main]

use libfuzzer_sys::fuzz_target;
use peft_lad::logs::parse_jsonl;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(seqs) = parse_jsonl(text) {
        let again: String = seqs
            .iter()
            .map(|s| serde_json::to_string(s).unwrap() + "\n")
            .collect();
        assert_eq!(parse_jsonl(&again).unwrap(), seqs);
    }
});
