//! Vocabulary-driven greedy longest-match WordPiece.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const CONTINUATION: &str = "##";
pub const UNK_TOKEN: &str = "[UNK]";
pub const PAD_TOKEN: &str = "[PAD]";
const MAX_CHARS_PER_WORD: usize = 100;

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: HashMap<String, usize>,
    size: usize,
    unk: usize,
    pad: usize,
    max_len: usize,
}

impl Tokenizer {
    /// Requires an `[UNK]` entry. `[PAD]` is optional; without it padding
    /// reuses the unknown index.
    pub fn new<S: AsRef<str>>(tokens: &[S], max_len: usize) -> Result<Self> {
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            vocab.entry(t.as_ref().to_string()).or_insert(i);
        }
        let unk = *vocab
            .get(UNK_TOKEN)
            .ok_or_else(|| Error::Config(format!("vocabulary has no {UNK_TOKEN} token")))?;
        let pad = vocab.get(PAD_TOKEN).copied().unwrap_or(unk);
        Ok(Self {
            vocab,
            size: tokens.len(),
            unk,
            pad,
            max_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.size
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    /// Lowercases, splits on whitespace and punctuation, then splits each
    /// word greedily into the longest vocabulary pieces. A word with any
    /// unmatched remainder becomes a single unknown token. Output is cut at
    /// `max_len`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for word in basic_split(&text.to_lowercase()) {
            self.word_pieces(&word, &mut out);
            if out.len() >= self.max_len {
                out.truncate(self.max_len);
                break;
            }
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<usize>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(self.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let begin = chars[start].0;
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let stop = chars.get(end).map_or(word.len(), |c| c.0);
                let sub = &word[begin..stop];
                let key = if start > 0 {
                    format!("{CONTINUATION}{sub}")
                } else {
                    sub.to_string()
                };
                if let Some(&idx) = self.vocab.get(&key) {
                    found = Some(idx);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(idx) => {
                    pieces.push(idx);
                    start = end;
                }
                None => {
                    out.push(self.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() || c.is_control() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(vocab: &[&str]) -> Tokenizer {
        Tokenizer::new(vocab, 64).unwrap()
    }

    #[test]
    fn empty_text() {
        assert!(tok(&["[UNK]"]).tokenize("").is_empty());
        assert!(tok(&["[UNK]"]).tokenize("   \t").is_empty());
    }

    #[test]
    fn whole_word_and_greedy_pieces() {
        let t = tok(&["[PAD]", "[UNK]", "cat", "un", "##believ", "##able", "##bel", "!"]);
        assert_eq!(t.tokenize("Cat"), vec![2]);
        assert_eq!(t.tokenize("unbelievable"), vec![3, 4, 5]);
        assert_eq!(t.tokenize("cat! dog"), vec![2, 7, 1]);
        // a remainder that cannot be matched turns the whole word into [UNK]
        assert_eq!(t.tokenize("unbelievablx"), vec![1]);
    }

    #[test]
    fn truncates_and_stays_in_range() {
        let mut t = tok(&["[UNK]", "a"]);
        t.max_len = 3;
        let ids = t.tokenize("a a a a a zz");
        assert_eq!(ids, vec![1, 1, 1]);
        assert!(ids.iter().all(|&i| i < t.vocab_size()));
    }

    #[test]
    fn missing_unk_is_a_config_error() {
        assert!(matches!(Tokenizer::new(&["a"], 8), Err(Error::Config(_))));
    }

    #[test]
    fn pad_falls_back_to_unk() {
        assert_eq!(tok(&["x", "[UNK]"]).pad(), 1);
        assert_eq!(tok(&["[PAD]", "[UNK]"]).pad(), 0);
    }
}
