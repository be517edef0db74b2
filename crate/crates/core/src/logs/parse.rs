use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::{DatasetFormat, Label, LogEvent, WILDCARD};
use crate::error::{Error, Result};

fn session_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"blk_-?\d+").expect("static regex"))
}

fn is_hex_literal(tok: &str) -> bool {
    let body = tok
        .strip_prefix("0x")
        .or_else(|| tok.strip_prefix("0X"))
        .map(|b| (b, true))
        .unwrap_or((tok, false));
    match body {
        (b, true) => !b.is_empty() && b.bytes().all(|c| c.is_ascii_hexdigit()),
        (b, false) => b.len() >= 8 && b.bytes().all(|c| c.is_ascii_hexdigit()),
    }
}

/// Whether a whitespace token is a parameter that must become `<*>`.
///
/// Anything holding a digit (numbers, ids, IPs, timestamps), hex strings and
/// path-like tokens are masked.
pub fn mask_token(tok: &str) -> bool {
    tok.bytes().any(|c| c.is_ascii_digit()) || tok.contains('/') || is_hex_literal(tok)
}

fn template_of<'a>(tokens: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for tok in tokens {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(if mask_token(tok) { WILDCARD } else { tok });
    }
    out
}

/// Parses one raw line. `line` is the 1-based ordinal in the source file.
pub fn parse_line(raw: &str, format: DatasetFormat, line: usize) -> Result<LogEvent> {
    let raw = raw.trim_end_matches(['\r', '\n']);
    let mut fields = raw.split_whitespace();
    let reject = |reason: &str| Error::Parse {
        line,
        reason: reason.to_string(),
    };
    match format {
        DatasetFormat::LabeledLines => {
            let flag = fields.next().ok_or_else(|| reject("empty line"))?;
            let mut rest = fields.peekable();
            if rest.peek().is_none() {
                return Err(reject("expected a label field followed by a message"));
            }
            let label = if flag == "-" {
                Label::Normal
            } else {
                Label::Anomalous
            };
            Ok(LogEvent {
                template: template_of(rest),
                line,
                label,
                session: None,
            })
        }
        DatasetFormat::Hdfs => {
            if fields.clone().next().is_none() {
                return Err(reject("empty line"));
            }
            let session = session_regex().find(raw).map(|m| m.as_str().to_string());
            Ok(LogEvent {
                template: template_of(fields),
                line,
                label: Label::Normal,
                session,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

/// Result of parsing a whole file: accepted events plus everything that was
/// not accepted, so nothing is dropped silently.
#[derive(Clone, Debug, Default)]
pub struct ParsedLog {
    pub events: Vec<LogEvent>,
    pub rejected: Vec<Rejected>,
    /// Number of invalid UTF-8 sequences replaced with U+FFFD.
    pub invalid_utf8: usize,
}

/// Parses a log held in memory. Lines are separated by `\n`; a trailing
/// newline does not create an extra (rejected) line.
pub fn read_log_bytes(bytes: &[u8], format: DatasetFormat) -> ParsedLog {
    let mut out = ParsedLog::default();
    if bytes.is_empty() {
        return out;
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let mut text = String::with_capacity(raw.len());
        for chunk in raw.utf8_chunks() {
            text.push_str(chunk.valid());
            if !chunk.invalid().is_empty() {
                out.invalid_utf8 += 1;
                text.push(char::REPLACEMENT_CHARACTER);
            }
        }
        match parse_line(&text, format, line) {
            Ok(ev) => out.events.push(ev),
            Err(e) => {
                log::warn!("rejected {e}");
                out.rejected.push(Rejected {
                    line,
                    reason: match e {
                        Error::Parse { reason, .. } => reason,
                        other => other.to_string(),
                    },
                });
            }
        }
    }
    out
}

pub fn read_log(path: &Path, format: DatasetFormat) -> Result<ParsedLog> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?
        .read_to_end(&mut bytes)?;
    Ok(read_log_bytes(&bytes, format))
}

pub type SessionLabels = HashMap<String, Label>;

/// Reads a `BlockId,Label` CSV with labels `Normal` / `Anomaly`.
pub fn parse_session_labels(reader: impl Read) -> Result<SessionLabels> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            reason: "label CSV needs BlockId,Label columns".into(),
        });
    }
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let (Some(id), Some(label)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Parse {
                line,
                reason: "expected two columns".into(),
            });
        };
        let label = match label {
            "Normal" => Label::Normal,
            "Anomaly" => Label::Anomalous,
            other => {
                return Err(Error::Parse {
                    line,
                    reason: format!("label `{other}` is neither Normal nor Anomaly"),
                })
            }
        };
        out.insert(id.to_string(), label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hdfs_line_masks_parameters_and_extracts_block() {
        let ev = parse_line(
            "Receiving block blk_3587 src: /10.0.0.1:50010",
            DatasetFormat::Hdfs,
            1,
        )
        .unwrap();
        assert_eq!(ev.template, "Receiving block <*> src: <*>");
        assert_eq!(ev.session.as_deref(), Some("blk_3587"));
        assert_eq!(ev.label, Label::Normal);
    }

    #[test]
    fn hdfs_negative_block_ids() {
        let ev = parse_line(
            "081109 203615 148 INFO Deleting block blk_-1608999687919862906 file",
            DatasetFormat::Hdfs,
            4,
        )
        .unwrap();
        assert_eq!(ev.session.as_deref(), Some("blk_-1608999687919862906"));
        assert_eq!(ev.template, "<*> <*> <*> INFO Deleting block <*> file");
    }

    #[test]
    fn labeled_lines_flag_field() {
        let normal = parse_line(
            "- 1117838570 RAS KERNEL INFO generating core.2275",
            DatasetFormat::LabeledLines,
            1,
        )
        .unwrap();
        assert_eq!(normal.label, Label::Normal);
        assert_eq!(normal.template, "<*> RAS KERNEL INFO generating <*>");
        let anomalous = parse_line(
            "KERNDTLB 1117838570 RAS KERNEL FATAL data TLB error",
            DatasetFormat::LabeledLines,
            2,
        )
        .unwrap();
        assert_eq!(anomalous.label, Label::Anomalous);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(
            parse_line("", DatasetFormat::Hdfs, 9),
            Err(Error::Parse { line: 9, .. })
        ));
        assert!(matches!(
            parse_line("-", DatasetFormat::LabeledLines, 3),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn masking_rules() {
        for masked in [
            "42",
            "0x1f",
            "deadbeef",
            "10.0.0.1",
            "/var/log",
            "core.2275",
            "blk_1",
        ] {
            assert!(mask_token(masked), "{masked}");
        }
        for kept in ["open", "src:", "RAS", "facade", "<*>"] {
            assert!(!mask_token(kept), "{kept}");
        }
    }

    #[test]
    fn rejected_and_invalid_bytes_are_counted() {
        let raw = b"- ok line\n\n- bad \xff byte\nonlyflag\n";
        let parsed = read_log_bytes(raw, DatasetFormat::LabeledLines);
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.rejected.len(), 2);
        assert_eq!(parsed.rejected[0].line, 2);
        assert_eq!(parsed.rejected[1].line, 4);
        assert_eq!(parsed.invalid_utf8, 1);
        assert_eq!(parsed.events[1].template, "bad \u{fffd} byte");
    }

    #[test]
    fn session_label_csv() {
        let csv = "BlockId,Label\nblk_1,Anomaly\nblk_2,Normal\n";
        let labels = parse_session_labels(csv.as_bytes()).unwrap();
        assert_eq!(labels["blk_1"], Label::Anomalous);
        assert_eq!(labels["blk_2"], Label::Normal);
        let bad = parse_session_labels("BlockId,Label\nblk_1,Maybe\n".as_bytes());
        assert!(matches!(bad, Err(Error::Parse { line: 2, .. })));
    }
}
