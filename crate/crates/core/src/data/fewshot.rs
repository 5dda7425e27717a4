use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

/// String transformation tasks used for in-context prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FewshotTemplate {
    Copy,
    Reverse,
    Upper,
    /// Each letter replaced by the next one (`z` wraps to `a`).
    Successor,
    Sort,
}

impl FewshotTemplate {
    pub const ALL: [FewshotTemplate; 5] = [Self::Copy, Self::Reverse, Self::Upper, Self::Successor, Self::Sort];

    pub fn name(self) -> &'static str {
        match self {
            Self::Copy => "copy",
            Self::Reverse => "reverse",
            Self::Upper => "upper",
            Self::Successor => "successor",
            Self::Sort => "sort",
        }
    }

    pub fn apply(self, input: &str) -> String {
        match self {
            Self::Copy => input.to_string(),
            Self::Reverse => input.chars().rev().collect(),
            Self::Upper => input.to_uppercase(),
            Self::Successor => input
                .chars()
                .map(|c| if c == 'z' { 'a' } else { (c as u8 + 1) as char })
                .collect(),
            Self::Sort => {
                let mut cs: Vec<char> = input.chars().collect();
                cs.sort_unstable();
                cs.into_iter().collect()
            }
        }
    }

    fn stream(self) -> u64 {
        Self::ALL.iter().position(|&t| t == self).unwrap() as u64
    }
}

impl FromStr for FewshotTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

impl fmt::Display for FewshotTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Random lowercase word of 3 to 5 letters and its transformation.
pub(crate) fn render_pair(t: FewshotTemplate, rng: &mut ChaCha8Rng) -> (String, String) {
    let len = rng.random_range(3..=5);
    let input: String = (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect();
    let output = t.apply(&input);
    (input, output)
}

/// Prompt and target text: `shots` lines `in -> out`, then the bare query
/// `in ->` whose target is ` out` plus a newline.
pub fn fewshot_texts(template: FewshotTemplate, shots: usize, n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(template.stream());
    (0..n)
        .map(|_| {
            let mut prompt = String::new();
            for _ in 0..shots {
                let (i, o) = render_pair(template, &mut rng);
                prompt.push_str(&format!("{i} -> {o}\n"));
            }
            let (i, o) = render_pair(template, &mut rng);
            prompt.push_str(&format!("{i} ->"));
            (prompt, format!(" {o}\n"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewshotExample {
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
}

impl FewshotExample {
    /// Prompt followed by target.
    pub fn sequence(&self) -> Vec<u32> {
        self.prompt.iter().chain(&self.target).copied().collect()
    }

    /// The token that follows the prompt.
    pub fn next_token(&self) -> Option<u32> {
        self.target.first().copied()
    }
}

/// Tokenized few-shot prompts for a named template.
pub fn make_fewshot_prompts(
    template: &str,
    shots: usize,
    n: usize,
    seed: u64,
    tokenizer: &Tokenizer,
) -> Result<Vec<FewshotExample>> {
    let t: FewshotTemplate = template.parse()?;
    Ok(fewshot_texts(t, shots, n, seed)
        .into_iter()
        .map(|(p, q)| FewshotExample {
            prompt: tokenizer.encode(&p),
            target: tokenizer.encode(&q),
        })
        .collect())
}
