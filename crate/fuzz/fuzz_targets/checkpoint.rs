#![no_main]

use libfuzzer_sys::fuzz_target;
use peft_lad::training::{restore, CheckpointManifest};

/// Keeps model construction within a few megabytes.
const MAX_PARAMS: usize = 1 << 20;

// Manifest JSON, a NUL byte, then the raw weights.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = serde_json::from_slice::<CheckpointManifest>(&data[..split]) else {
        return;
    };
    let m = &manifest.model;
    if m.validate().is_err() || manifest.peft.validate(m).is_err() {
        return;
    }
    let size = m
        .vocab_size
        .saturating_add(m.max_len)
        .saturating_mul(m.hidden)
        .saturating_add(
            m.layers
                .saturating_mul(m.hidden)
                .saturating_mul(4 * m.hidden + 2 * m.ffn_dim),
        );
    if size > MAX_PARAMS {
        return;
    }
    let weights = data.get(split + 1..).unwrap_or(&[]);
    let _ = restore(&manifest, weights);
});
