use std::collections::HashMap;

use super::{ModelConfig, ModelError, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Whitespace tokenizer over a closed, lower-case word list.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
    max_len: usize,
    strict: bool,
}

impl Tokenizer {
    pub fn new(config: &ModelConfig) -> Self {
        let words: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(config.vocab.iter().cloned())
            .collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words,
            index,
            max_len: config.max_text_len,
            strict: config.strict_vocab,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// `[CLS]` followed by the word ids, truncated or padded with `[PAD]`
    /// to `max_len`. Unknown words become `[UNK]` unless the vocabulary is
    /// strict.
    pub fn tokenize(&self, caption: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(CLS);
        for word in caption.split_whitespace() {
            let w = word.to_lowercase();
            let id = match self.index.get(&w) {
                Some(&i) if i >= SPECIAL_TOKENS.len() => i,
                _ if self.strict => return Err(ModelError::Vocabulary(word.to_string())),
                _ => UNK,
            };
            ids.push(id);
        }
        ids.resize(self.max_len, PAD);
        Ok(ids)
    }

    /// Inverse of [`Tokenizer::tokenize`] for in-vocabulary captions.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != PAD && i != CLS)
            .map(|&i| self.words.get(i).map_or("[UNK]", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
