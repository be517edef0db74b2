use std::collections::HashMap;

use super::{LabeledSplit, LogEvent, LogSequence, SessionLabels};
use crate::error::{Error, Result};

/// One sequence per distinct session key, ordered by first appearance.
///
/// With a label table, a session's label is looked up there; sessions missing
/// from the table (or no table at all) fall back to the any-anomalous rule.
pub fn group_sessions(
    events: Vec<LogEvent>,
    labels: Option<&SessionLabels>,
) -> Result<Vec<LogSequence>> {
    let mut order: Vec<String> = Vec::new();
    let mut buckets: HashMap<String, Vec<LogEvent>> = HashMap::new();
    for ev in events {
        let key = ev
            .session
            .clone()
            .ok_or(Error::Grouping { line: ev.line })?;
        buckets
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(ev);
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let mut evs = buckets.remove(&key).expect("bucket exists");
        evs.sort_by_key(|e| e.line);
        let mut seq = LogSequence::from_events(evs);
        if let Some(label) = labels.and_then(|t| t.get(&key)) {
            seq.label = *label;
        }
        out.push(seq);
    }
    out.sort_by_key(|s| s.order_key);
    Ok(out)
}

/// Non-overlapping windows of `window` events in file order; the final
/// partial window is kept.
pub fn group_windows(events: Vec<LogEvent>, window: usize) -> Result<Vec<LogSequence>> {
    group_sliding(events, window, window)
}

/// Windows of `window` events starting every `stride` events. Stops once a
/// window reaches the end, so every event is covered and no window is a
/// suffix of the previous one.
pub fn group_sliding(
    events: Vec<LogEvent>,
    window: usize,
    stride: usize,
) -> Result<Vec<LogSequence>> {
    if window == 0 {
        return Err(Error::config("window must be at least 1"));
    }
    if stride == 0 || stride > window {
        return Err(Error::config(format!(
            "stride must be in 1..={window}, got {stride}"
        )));
    }
    if stride == window {
        let mut out = Vec::with_capacity(events.len().div_ceil(window));
        let mut it = events.into_iter().peekable();
        while it.peek().is_some() {
            out.push(LogSequence::from_events(it.by_ref().take(window).collect()));
        }
        return Ok(out);
    }
    let n = events.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        out.push(LogSequence::from_events(events[start..end].to_vec()));
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// First `floor(ratio * n)` sequences train, the rest test.
pub fn chronological_split(seqs: Vec<LogSequence>, train_ratio: f64) -> Result<LabeledSplit> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::config(format!(
            "train ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    if let Some(w) = seqs.windows(2).find(|w| w[0].order_key >= w[1].order_key) {
        return Err(Error::input(format!(
            "sequences are not in chronological order (order key {} before {})",
            w[0].order_key, w[1].order_key
        )));
    }
    let n = seqs.len();
    let n_train = (train_ratio * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::config(format!(
            "train ratio {train_ratio} over {n} sequences leaves an empty partition"
        )));
    }
    let mut train = seqs;
    let test = train.split_off(n_train);
    Ok(LabeledSplit { train, test })
}

/// Event templates joined by single spaces.
pub fn concat_sequence_text(seq: &LogSequence) -> String {
    let mut out = String::new();
    for (i, ev) in seq.events.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&ev.template);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logs::Label;

    fn ev(line: usize, session: Option<&str>, anomalous: bool) -> LogEvent {
        LogEvent {
            template: format!("event {}", line % 3),
            line,
            label: if anomalous {
                Label::Anomalous
            } else {
                Label::Normal
            },
            session: session.map(str::to_string),
        }
    }

    #[test]
    fn sessions_partition_by_key() {
        let events = vec![
            ev(1, Some("blk_1"), false),
            ev(2, Some("blk_2"), false),
            ev(3, Some("blk_1"), false),
        ];
        let seqs = group_sessions(events, None).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(
            seqs[0].events.iter().map(|e| e.line).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert_eq!(
            seqs[1].events.iter().map(|e| e.line).collect::<Vec<_>>(),
            vec![2]
        );
        assert!(group_sessions(vec![], None).unwrap().is_empty());
    }

    #[test]
    fn session_label_table_wins() {
        let events = vec![ev(1, Some("blk_1"), false), ev(2, Some("blk_2"), false)];
        let table: SessionLabels = [("blk_1".to_string(), Label::Anomalous)]
            .into_iter()
            .collect();
        let seqs = group_sessions(events, Some(&table)).unwrap();
        assert_eq!(seqs[0].label, Label::Anomalous);
        assert_eq!(seqs[1].label, Label::Normal);
    }

    #[test]
    fn missing_session_key_names_the_line() {
        let events = vec![ev(1, Some("blk_1"), false), ev(7, None, false)];
        assert!(matches!(
            group_sessions(events, None),
            Err(Error::Grouping { line: 7 })
        ));
    }

    #[test]
    fn tumbling_windows_keep_partial_tail() {
        let events: Vec<_> = (1..=120).map(|i| ev(i, None, i == 56)).collect();
        let seqs = group_windows(events, 50).unwrap();
        assert_eq!(
            seqs.iter().map(|s| s.len()).collect::<Vec<_>>(),
            vec![50, 50, 20]
        );
        assert_eq!(
            seqs.iter().map(|s| s.label).collect::<Vec<_>>(),
            vec![Label::Normal, Label::Anomalous, Label::Normal]
        );
        let single = group_windows(vec![ev(1, None, false)], 50).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].len(), 1);
    }

    #[test]
    fn sliding_windows_cover_everything() {
        let events: Vec<_> = (1..=10).map(|i| ev(i, None, false)).collect();
        let seqs = group_sliding(events, 4, 2).unwrap();
        let starts: Vec<_> = seqs.iter().map(|s| s.order_key).collect();
        assert_eq!(starts, vec![1, 3, 5, 7]);
        assert_eq!(seqs.last().unwrap().events.last().unwrap().line, 10);
        assert!(group_sliding(vec![], 4, 5).is_err());
    }

    #[test]
    fn split_ratios() {
        let seqs: Vec<_> = (1..=10)
            .map(|i| LogSequence::from_events(vec![ev(i, None, false)]))
            .collect();
        let s = chronological_split(seqs.clone(), 0.8).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        let s = chronological_split(seqs.clone(), 0.1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 9));
        assert!(matches!(
            chronological_split(seqs.clone(), 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            chronological_split(seqs[..1].to_vec(), 0.8),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn text_concatenation() {
        let mk = |t: &[&str]| LogSequence {
            order_key: 1,
            label: Label::Normal,
            events: t
                .iter()
                .enumerate()
                .map(|(i, s)| LogEvent {
                    template: s.to_string(),
                    line: i + 1,
                    label: Label::Normal,
                    session: None,
                })
                .collect(),
        };
        assert_eq!(
            concat_sequence_text(&mk(&["open <*>", "close"])),
            "open <*> close"
        );
        assert_eq!(concat_sequence_text(&mk(&["open <*>"])), "open <*>");
        assert_eq!(concat_sequence_text(&mk(&[])), "");
    }
}
