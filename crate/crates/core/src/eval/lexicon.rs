use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Up to three synonyms per word, in preference order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

pub const MAX_SYNONYMS: usize = 3;

impl SynonymLexicon {
    pub fn insert(&mut self, word: &str, synonyms: &[&str]) -> Result<()> {
        let word = word.trim();
        if word.is_empty() {
            return Err(Error::config("lexicon word is empty"));
        }
        let syns: Vec<String> = synonyms.iter().map(|s| s.trim().to_string()).collect();
        if syns.is_empty() || syns.len() > MAX_SYNONYMS {
            return Err(Error::config(format!(
                "`{word}` needs 1..={MAX_SYNONYMS} synonyms, got {}",
                syns.len()
            )));
        }
        for (i, s) in syns.iter().enumerate() {
            if s.is_empty() || s == word || syns[..i].contains(s) {
                return Err(Error::config(format!(
                    "`{word}` has an empty, repeated or identical synonym `{s}`"
                )));
            }
        }
        if self.entries.insert(word.to_string(), syns).is_some() {
            return Err(Error::config(format!(
                "`{word}` appears twice in the lexicon"
            )));
        }
        Ok(())
    }

    /// Reads `word,syn1[,syn2[,syn3]]` rows. Blank lines and lines starting
    /// with `#` are skipped; there is no header.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut lex = SynonymLexicon::default();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let fields: Vec<&str> = rec.iter().collect();
            if fields.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            lex.insert(fields[0], &fields[1..])
                .map_err(|e| Error::Parse {
                    line,
                    reason: e.to_string(),
                })?;
        }
        if lex.is_empty() {
            return Err(Error::config("lexicon has no entries"));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_csv(File::open(path)?)
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
