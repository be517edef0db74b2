#![no_main]

use libfuzzer_sys::fuzz_target;
use peft_lad::logs::{group_sessions, group_windows, read_log_bytes, DatasetFormat};

fuzz_target!(|data: &[u8]| {
    let physical = String::from_utf8_lossy(data).lines().count();
    for format in [DatasetFormat::LabeledLines, DatasetFormat::Hdfs] {
        let parsed = read_log_bytes(data, format);
        assert_eq!(parsed.events.len() + parsed.rejected.len(), physical);
        let n = parsed.events.len();
        let seqs = match format {
            DatasetFormat::LabeledLines => group_windows(parsed.events, 7),
            DatasetFormat::Hdfs => group_sessions(parsed.events, None),
        };
        if let Ok(seqs) = seqs {
            assert_eq!(seqs.iter().map(|s| s.len()).sum::<usize>(), n);
        }
    }
});
