use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fewshot::{render_pair, FewshotTemplate};
use super::tokenizer::{Tokenizer, TokenizerKind};
use crate::error::{Error, Result};

/// Fractions of the token sequence given to the train and validation
/// splits, taken as contiguous blocks in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.9, val: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train > 0.0 && self.val >= 0.0 && self.train + self.val <= 1.0 + 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "split: fractions ({}, {}) must be non-negative with a positive train share and sum to at most 1",
                self.train, self.val
            )))
        }
    }

    fn lengths(&self, n: usize) -> (usize, usize) {
        let take = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let train = take(self.train).min(n);
        let val = take(self.val).min(n - train);
        (train, val)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub tokenizer: Tokenizer,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
}

/// Tokenizes `text` and splits it. A word vocabulary is built from the
/// training block only, so unseen validation words become `<unk>`.
pub fn ingest_text(text: &str, kind: TokenizerKind, split: SplitFractions) -> Result<TokenStream> {
    split.validate()?;
    if text.trim().is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (tokenizer, ids) = match kind {
        TokenizerKind::Byte => {
            let t = Tokenizer::byte();
            let ids = t.encode(text);
            (t, ids)
        }
        TokenizerKind::Word => {
            let words: Vec<&str> = text.split_whitespace().collect();
            let (n_train, _) = split.lengths(words.len());
            let t = Tokenizer::word_from_text(&words[..n_train].join(" "));
            let ids = t.encode(text);
            (t, ids)
        }
    };
    let (n_train, n_val) = split.lengths(ids.len());
    if n_train == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(TokenStream {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        tokenizer,
    })
}

pub fn ingest_corpus(path: &Path, kind: TokenizerKind, split: SplitFractions) -> Result<TokenStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_text(&text, kind, split)
}

const NOUNS: &[&str] = &["cat", "dog", "bird", "fox", "owl", "bee", "cow", "ant"];
const ADJS: &[&str] = &["red", "big", "old", "shy", "tiny", "calm", "wild"];
const VERBS: &[&str] = &["sees", "likes", "chases", "finds", "helps", "hears"];

/// Deterministic text from a small grammar: simple sentences, counting
/// runs and solved few-shot style string transformations.
pub fn synthetic_corpus(seed: u64, bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(bytes + 64);
    while out.len() < bytes {
        match rng.random_range(0..4) {
            0 | 1 => {
                let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).unwrap();
                let line = format!(
                    "the {} {} {} the {} {} .\n",
                    pick(&mut rng, ADJS),
                    pick(&mut rng, NOUNS),
                    pick(&mut rng, VERBS),
                    pick(&mut rng, ADJS),
                    pick(&mut rng, NOUNS)
                );
                out.push_str(&line);
            }
            2 => {
                let start = rng.random_range(0..10);
                let len = rng.random_range(3..7);
                let nums: Vec<String> = (start..start + len).map(|n| n.to_string()).collect();
                out.push_str(&nums.join(" "));
                out.push('\n');
            }
            _ => {
                let t = *FewshotTemplate::ALL.choose(&mut rng).unwrap();
                let (input, output) = render_pair(t, &mut rng);
                out.push_str(&format!("{input} -> {output}\n"));
            }
        }
    }
    out.truncate(bytes);
    out
}
