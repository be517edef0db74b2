use std::collections::BTreeSet;

use peft_lad::logs::{
    chronological_split, group_sessions, group_sliding, group_windows, read_log_bytes, Bundle,
    DatasetFormat, Grouping, Label, LogSequence,
};
use peft_lad::model::ModelStyle;
use peft_lad::tokenizer::{build_vocab, encode, pad_batch, Vocabulary, PAD, UNK};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "open", "close", "read", "write", "node", "disk", "error", "retry",
];

/// One raw line: label flag, message words and numeric parameters. Some
/// lines are blank or flag-only, and some carry invalid UTF-8.
fn line() -> impl Strategy<Value = Vec<u8>> {
    (
        0u8..10,
        prop::collection::vec(
            (prop::sample::select(WORDS), 0u32..5000, any::<bool>()),
            0..5,
        ),
        any::<bool>(),
    )
        .prop_map(|(kind, words, broken)| {
            let mut out = match kind {
                0 => b"FATAL".to_vec(),
                1 => b"KERNDTLB".to_vec(),
                2 => Vec::new(),
                _ => b"-".to_vec(),
            };
            for (w, n, with_num) in words {
                out.push(b' ');
                out.extend_from_slice(w.as_bytes());
                if with_num {
                    out.extend_from_slice(format!(" {n}").as_bytes());
                }
            }
            if broken && kind == 3 {
                out.extend_from_slice(b" \xff\xfe");
            }
            out
        })
}

fn log() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(line(), 1..120)
}

fn join(lines: &[Vec<u8>]) -> Vec<u8> {
    lines.join(&b'\n')
}

fn hdfs_log() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0usize..6, prop::sample::select(WORDS), 0u32..100), 1..80).prop_map(
        |rows| {
            rows.into_iter()
                .map(|(blk, w, n)| {
                    format!(
                        "081109 {n} INFO dfs.DataNode: {w} block blk_{}{blk} size {n}",
                        if blk % 2 == 0 { "-" } else { "" }
                    )
                })
                .collect()
        },
    )
}

fn windows(raw: &[u8], size: usize) -> Vec<LogSequence> {
    group_windows(
        read_log_bytes(raw, DatasetFormat::LabeledLines).events,
        size,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn parsing_is_deterministic(lines in log(), size in 1usize..20) {
        let raw = join(&lines);
        let a = windows(&raw, size);
        let b = windows(&raw, size);
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn every_accepted_line_lands_in_one_window(lines in log(), size in 1usize..20) {
        let raw = join(&lines);
        let parsed = read_log_bytes(&raw, DatasetFormat::LabeledLines);
        let physical = String::from_utf8_lossy(&raw).lines().count();
        prop_assert_eq!(parsed.events.len() + parsed.rejected.len(), physical);
        let accepted: Vec<usize> = parsed.events.iter().map(|e| e.line).collect();
        let seqs = group_windows(parsed.events, size).unwrap();
        let grouped: Vec<usize> = seqs.iter().flat_map(|s| s.events.iter().map(|e| e.line)).collect();
        prop_assert_eq!(&grouped, &accepted);
        prop_assert!(seqs.iter().all(|s| !s.is_empty() && s.len() <= size));
        let rejected: BTreeSet<usize> = parsed.rejected.iter().map(|r| r.line).collect();
        prop_assert!(accepted.iter().all(|l| !rejected.contains(l)));
    }

    #[test]
    fn sliding_windows_cover_every_line(lines in log(), size in 1usize..20, stride_pick in any::<prop::sample::Index>()) {
        let stride = 1 + stride_pick.index(size);
        let events = read_log_bytes(&join(&lines), DatasetFormat::LabeledLines).events;
        let accepted: BTreeSet<usize> = events.iter().map(|e| e.line).collect();
        let seqs = group_sliding(events, size, stride).unwrap();
        let covered: BTreeSet<usize> = seqs.iter().flat_map(|s| s.events.iter().map(|e| e.line)).collect();
        prop_assert_eq!(covered, accepted);
    }

    #[test]
    fn window_label_is_any_anomalous_member(lines in log(), size in 1usize..20) {
        let raw = join(&lines);
        for seq in windows(&raw, size) {
            let brute = seq
                .events
                .iter()
                .any(|e| lines[e.line - 1].split(|b| *b == b' ').next() != Some(&b"-"[..]));
            prop_assert_eq!(seq.label == Label::Anomalous, brute);
        }
    }

    #[test]
    fn test_split_strictly_follows_train(lines in log(), size in 1usize..8, ratio in 0.05f64..0.95) {
        let seqs = windows(&join(&lines), size);
        if let Ok(split) = chronological_split(seqs.clone(), ratio) {
            let last_train = split.train.iter().map(|s| s.order_key).max().unwrap();
            prop_assert!(split.test.iter().all(|s| s.order_key > last_train));
            prop_assert_eq!(split.train.len(), (ratio * seqs.len() as f64 + 1e-9).floor() as usize);
            prop_assert_eq!(split.len(), seqs.len());
        }
    }

    #[test]
    fn sessions_split_chronologically(lines in hdfs_log(), ratio in 0.1f64..0.9) {
        let raw = lines.join("\n");
        let parsed = read_log_bytes(raw.as_bytes(), DatasetFormat::Hdfs);
        let n = parsed.events.len();
        let seqs = group_sessions(parsed.events, None).unwrap();
        prop_assert_eq!(seqs.iter().map(LogSequence::len).sum::<usize>(), n);
        let keys: BTreeSet<&str> = seqs.iter().map(|s| s.events[0].session.as_deref().unwrap()).collect();
        prop_assert_eq!(keys.len(), seqs.len());
        for s in &seqs {
            prop_assert!(s.events.iter().all(|e| e.session == s.events[0].session));
        }
        if let Ok(split) = chronological_split(seqs, ratio) {
            let last_train = split.train.iter().map(|s| s.order_key).max().unwrap();
            prop_assert!(split.test.iter().all(|s| s.order_key > last_train));
        }
    }

    #[test]
    fn bundle_survives_a_disk_roundtrip(lines in log()) {
        let raw = join(&lines);
        if let Ok(bundle) = Bundle::prepare(&raw, DatasetFormat::LabeledLines, Grouping::tumbling(4), None, 0.8) {
            let dir = tempfile::tempdir().unwrap();
            bundle.save(dir.path()).unwrap();
            let back = Bundle::load(dir.path()).unwrap();
            prop_assert_eq!(back.split, bundle.split);
            prop_assert_eq!(back.manifest, bundle.manifest);
        }
    }
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..30).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encoding_is_stable(train in prop::collection::vec(text(), 1..10), probe in text(), max_len in 2usize..40) {
        let vocab = build_vocab(&train, 1, max_len).unwrap();
        for style in [ModelStyle::Masked, ModelStyle::Autoregressive] {
            let a = encode(&probe, &vocab, style).unwrap();
            let b = encode(&probe, &vocab, style).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.len() <= max_len);
        }
        prop_assert_eq!(Vocabulary::from_json(&vocab.to_json()).unwrap(), vocab);
    }

    #[test]
    fn test_tokens_never_reach_the_vocabulary(
        train in prop::collection::vec(text(), 1..10),
        test in prop::collection::vec(text(), 1..10),
    ) {
        let vocab = build_vocab(&train, 1, 64).unwrap();
        let before = vocab.clone();
        let seen: BTreeSet<&str> = train.iter().flat_map(|t| t.split_whitespace()).collect();
        for t in &test {
            let enc = encode(t, &vocab, ModelStyle::Autoregressive).unwrap();
            for (id, word) in enc.ids.iter().zip(t.split_whitespace()) {
                prop_assert_eq!(*id == UNK, !seen.contains(word));
            }
        }
        prop_assert_eq!(vocab, before);
    }

    #[test]
    fn selected_position_is_never_pad(
        texts in prop::collection::vec(text(), 1..12),
        max_len in 2usize..40,
        masked in any::<bool>(),
    ) {
        let vocab = build_vocab(&texts[..1], 1, max_len).unwrap();
        let style = if masked { ModelStyle::Masked } else { ModelStyle::Autoregressive };
        let mut batch: Vec<_> = texts.iter().map(|t| encode(t, &vocab, style).unwrap()).collect();
        pad_batch(&mut batch);
        let width = batch[0].len();
        for row in &batch {
            prop_assert_eq!(row.len(), width);
            prop_assert_eq!(row.mask[row.selected], 1);
            prop_assert_ne!(row.ids[row.selected], PAD);
            prop_assert_eq!(row.selected, if masked { 0 } else { row.real_len() - 1 });
        }
    }
}
