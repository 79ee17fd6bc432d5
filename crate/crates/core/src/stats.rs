//! Corpus statistics: instruction length, entity mentions and vocabulary.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

const PUNCTUATION: [char; 9] = ['.', ',', ';', ':', '!', '?', '(', ')', '"'];

/// Splits punctuation off into its own tokens, then splits on whitespace.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in word.char_indices() {
            if PUNCTUATION.contains(&c) {
                if start < i {
                    out.push(&word[start..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < word.len() {
            out.push(&word[start..]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub mean_tokens: f64,
    pub mean_entities: f64,
    pub vocabulary_size: usize,
}

impl DatasetStats {
    pub fn csv_header() -> &'static str {
        "records,mean_tokens,mean_entities,vocabulary_size"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{}",
            self.records, self.mean_tokens, self.mean_entities, self.vocabulary_size
        )
    }
}

/// Statistics over `(instruction, entity mentions)` pairs. Vocabulary is
/// case-insensitive.
pub fn dataset_stats<'a, I>(items: I) -> Result<DatasetStats, StatsError>
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let mut records = 0usize;
    let mut tokens = 0usize;
    let mut entities = 0usize;
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for (text, mentions) in items {
        let toks = tokenize(text);
        records += 1;
        tokens += toks.len();
        entities += mentions;
        vocab.extend(toks.into_iter().map(str::to_lowercase));
    }
    if records == 0 {
        return Err(StatsError::Empty);
    }
    Ok(DatasetStats {
        records,
        mean_tokens: tokens as f64 / records as f64,
        mean_entities: entities as f64 / records as f64,
        vocabulary_size: vocab.len(),
    })
}
