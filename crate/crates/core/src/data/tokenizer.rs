use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for out-of-vocabulary words.
pub const UNK_ID: u32 = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenizerKind {
    #[serde(rename = "byte")]
    Byte,
    #[serde(rename = "whitespace-word")]
    Word,
}

impl FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte" => Ok(Self::Byte),
            "whitespace-word" | "word" => Ok(Self::Word),
            other => Err(Error::InvalidConfig(format!("tokenizer: unknown kind {other:?}"))),
        }
    }
}

/// Byte-level or whitespace-word tokenizer with an explicit vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    kind: TokenizerKind,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

impl Tokenizer {
    pub fn byte() -> Self {
        Self::from_tokens(TokenizerKind::Byte, (0..=255u8).map(byte_token).collect())
    }

    /// Word vocabulary in first-occurrence order, `<unk>` at id 0.
    pub fn word_from_text(text: &str) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string()];
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for w in text.split_whitespace() {
            if w != UNK_TOKEN && seen.insert(w, ()).is_none() {
                tokens.push(w.to_string());
            }
        }
        Self::from_tokens(TokenizerKind::Word, tokens)
    }

    fn from_tokens(kind: TokenizerKind, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { kind, tokens, index }
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        match self.kind {
            TokenizerKind::Byte => text.bytes().map(u32::from).collect(),
            TokenizerKind::Word => text
                .split_whitespace()
                .map(|w| self.index.get(w).copied().unwrap_or(UNK_ID))
                .collect(),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        match self.kind {
            TokenizerKind::Byte => {
                let bytes: Vec<u8> = ids.iter().filter_map(|&i| u8::try_from(i).ok()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            TokenizerKind::Word => ids
                .iter()
                .map(|&i| self.tokens.get(i as usize).map_or(UNK_TOKEN, String::as_str))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    /// Vocabulary as a JSON object mapping token to id.
    pub fn vocab_json(&self) -> String {
        let map: BTreeMap<&str, u32> = self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        serde_json::to_string_pretty(&map).expect("vocabulary serializes")
    }

    pub fn from_vocab_json(kind: TokenizerKind, json: &str) -> Result<Self> {
        let map: BTreeMap<String, u32> =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("vocabulary: {e}")))?;
        let mut tokens = vec![None; map.len()];
        for (tok, id) in map {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::Format(format!("vocabulary id {id} out of range")))?;
            if slot.replace(tok).is_some() {
                return Err(Error::Format(format!("vocabulary id {id} assigned twice")));
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(Option::unwrap).collect();
        let tok = Self::from_tokens(kind, tokens);
        match kind {
            TokenizerKind::Byte if tok != Self::byte() => Err(Error::Format("byte vocabulary must list 256 byte tokens".into())),
            TokenizerKind::Word if tok.tokens.first().map(String::as_str) != Some(UNK_TOKEN) => {
                Err(Error::Format("word vocabulary must map <unk> to 0".into()))
            }
            _ => Ok(tok),
        }
    }

    pub fn save_vocab(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.vocab_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load_vocab(kind: TokenizerKind, path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab_json(kind, &json)
    }
}
