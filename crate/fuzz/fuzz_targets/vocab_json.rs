#![no_main]

use libfuzzer_sys::fuzz_target;
use peft_lad::tokenizer::{Vocabulary, CLS};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(vocab) = Vocabulary::from_json(text) {
        for (id, tok) in vocab.tokens().iter().enumerate().skip(CLS + 1) {
            assert_eq!(vocab.id(tok), id);
        }
        assert_eq!(Vocabulary::from_json(&vocab.to_json()).unwrap(), vocab);
    }
});
