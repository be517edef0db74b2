#![no_main]

use libfuzzer_sys::fuzz_target;
use peft_lad::eval::{SynonymLexicon, MAX_SYNONYMS};

fuzz_target!(|data: &[u8]| {
    if let Ok(lex) = SynonymLexicon::from_csv(data) {
        for w in lex.words() {
            let syns = lex.get(w).unwrap();
            assert!(!syns.is_empty() && syns.len() <= MAX_SYNONYMS);
        }
    }
});
