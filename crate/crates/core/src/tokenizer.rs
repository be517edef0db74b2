//! Word-level vocabulary and fixed-contract encoding of sequence text.

use std::collections::HashMap;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::logs::{Label, LogSequence};
use crate::model::ModelStyle;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<cls>"];
/// Key holding the length limit in the JSON form; never a token.
const MAX_LEN_KEY: &str = "max_len";
pub const DEFAULT_MAX_LEN: usize = 256;

/// Token to id map. Ids are contiguous from 0 with PAD, UNK and CLS first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
}

/// Builds a vocabulary from training text only.
///
/// Whitespace tokens seen at least `min_count` times get ids from 3 upward,
/// most frequent first, ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(
    train_texts: &[S],
    min_count: usize,
    max_len: usize,
) -> Result<Vocabulary> {
    if train_texts.is_empty() {
        return Err(Error::config(
            "cannot build a vocabulary from an empty corpus",
        ));
    }
    if min_count == 0 {
        return Err(Error::config("min_count must be at least 1"));
    }
    if max_len < 2 {
        return Err(Error::config("max_len must be at least 2"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in train_texts {
        for tok in text.as_ref().split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t) && t != MAX_LEN_KEY)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = RESERVED
        .iter()
        .copied()
        .chain(ranked.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Ok(Vocabulary::from_tokens(tokens, max_len))
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, max_len: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            index,
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Id of a token from text; reserved names and unseen tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i > CLS => i,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `{token: id, ..., "max_len": n}`.
    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        for (i, t) in self.tokens.iter().enumerate() {
            map.insert(t.clone(), Value::from(i));
        }
        map.insert(MAX_LEN_KEY.into(), Value::from(self.max_len));
        serde_json::to_string_pretty(&Value::Object(map)).expect("vocabulary serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Load {
            what: "vocabulary".into(),
            reason,
        };
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = value else {
            return Err(bad("expected a JSON object".into()));
        };
        let max_len = map
            .get(MAX_LEN_KEY)
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("missing integer max_len".into()))? as usize;
        if max_len < 2 {
            return Err(bad(format!("max_len {max_len} is below 2")));
        }
        let n = map.len() - 1;
        let mut tokens = vec![None; n];
        for (tok, id) in map.iter().filter(|(k, _)| k.as_str() != MAX_LEN_KEY) {
            let id = id
                .as_u64()
                .ok_or_else(|| bad(format!("id of `{tok}` is not a non-negative integer")))?
                as usize;
            let slot = tokens
                .get_mut(id)
                .ok_or_else(|| bad(format!("id {id} of `{tok}` is outside 0..{n}")))?;
            if slot.is_some() {
                return Err(bad(format!("id {id} assigned twice")));
            }
            *slot = Some(tok.clone());
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .map(|t| t.expect("ids are a permutation"))
            .collect();
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(bad(format!("reserved id {i} must be `{r}`")));
            }
        }
        Ok(Vocabulary::from_tokens(tokens, max_len))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Vocabulary::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Token ids ready for the model. `selected` is the position whose final
/// hidden state feeds the classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub selected: usize,
    pub label: Label,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-PAD positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Copy without trailing PAD positions.
    pub fn trimmed(&self) -> TokenizedSequence {
        let n = self.real_len();
        TokenizedSequence {
            ids: self.ids[..n].to_vec(),
            mask: self.mask[..n].to_vec(),
            selected: self.selected,
            label: self.label,
        }
    }

    /// Appends PAD positions up to `len`.
    pub fn pad_to(&mut self, len: usize) {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.mask.push(0);
        }
    }
}

/// Encodes text. Masked style prepends CLS and selects it; autoregressive
/// style selects the last real token. Over-long inputs keep their prefix.
pub fn encode(text: &str, vocab: &Vocabulary, style: ModelStyle) -> Result<TokenizedSequence> {
    let mut words = text.split_whitespace().peekable();
    if words.peek().is_none() {
        return Err(Error::Encoding("empty text".into()));
    }
    let mut ids = Vec::new();
    if style == ModelStyle::Masked {
        ids.push(CLS);
    }
    ids.extend(words.take(vocab.max_len - ids.len()).map(|w| vocab.id(w)));
    let selected = match style {
        ModelStyle::Masked => 0,
        ModelStyle::Autoregressive => ids.len() - 1,
    };
    Ok(TokenizedSequence {
        mask: vec![1; ids.len()],
        ids,
        selected,
        label: Label::Normal,
    })
}

pub fn encode_sequence(
    seq: &LogSequence,
    vocab: &Vocabulary,
    style: ModelStyle,
) -> Result<TokenizedSequence> {
    let mut t = encode(&seq.text(), vocab, style)?;
    t.label = seq.label;
    Ok(t)
}

/// Pads every row to the longest one.
pub fn pad_batch(batch: &mut [TokenizedSequence]) {
    let len = batch.iter().map(TokenizedSequence::len).max().unwrap_or(0);
    for row in batch {
        row.pad_to(len);
    }
}
