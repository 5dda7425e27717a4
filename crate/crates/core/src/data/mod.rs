//! Tokenizers, corpus ingestion and few-shot prompt construction.

mod corpus;
mod fewshot;
mod tokenizer;

pub use corpus::{ingest_corpus, ingest_text, synthetic_corpus, SplitFractions, TokenStream};
pub use fewshot::{fewshot_texts, make_fewshot_prompts, FewshotExample, FewshotTemplate};
pub use tokenizer::{Tokenizer, TokenizerKind, UNK_ID, UNK_TOKEN};
