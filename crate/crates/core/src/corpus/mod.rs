//! Multilingual retrieval corpora: toy synthesis, XOR-style ingestion, and
//! the answer-containment labeling rule shared by mining and evaluation.

mod io;
mod synth;
mod xor;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, config_err, Result};

pub use io::{read_corpus, write_corpus, CORPUS_FORMAT_VERSION};
pub use synth::{generate_corpus, CorpusConfig};
pub use xor::{load_xor_jsonl, XorLoad, XorOptions};

pub type TokenId = u32;
pub type PassageId = u32;
pub type QueryId = u64;

/// The passage-side language. Query languages are `1..`.
pub const PIVOT: usize = 0;

/// First id handed to generated queries; source ids stay below it.
pub const GENERATED_ID_BASE: QueryId = 1 << 40;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Language {
    pub id: usize,
    pub name: String,
    pub vocab_offset: u32,
    pub vocab_size: u32,
}

impl Language {
    pub fn contains(&self, token: TokenId) -> bool {
        token >= self.vocab_offset && token < self.vocab_offset + self.vocab_size
    }

    pub fn end(&self) -> u32 {
        self.vocab_offset + self.vocab_size
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub tokens: Vec<TokenId>,
    /// `(start, length)` of the planted answer, when known.
    pub answer_span: Option<(u32, u32)>,
}

impl Passage {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Source,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub language: usize,
    pub tokens: Vec<TokenId>,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub query: Query,
    pub positive_passage_id: PassageId,
    pub answer_tokens: Vec<TokenId>,
    pub mined_negative_ids: Vec<PassageId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Pivot-language queries used for the first warm-up phase.
    Pretrain,
    Train,
    Dev,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub seed: u64,
    pub languages: Vec<Language>,
    pub passages: Vec<Passage>,
    pub pretrain: Vec<TrainingSample>,
    pub train: Vec<TrainingSample>,
    pub dev: Vec<TrainingSample>,
    pub max_query_len: usize,
    pub max_passage_len: usize,
    /// Per-language word permutations; present only for synthetic corpora,
    /// where they make cross-language synonymy exact.
    pub word_maps: Option<Vec<Vec<u32>>>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[TrainingSample] {
        match split {
            Split::Pretrain => &self.pretrain,
            Split::Train => &self.train,
            Split::Dev => &self.dev,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<TrainingSample> {
        match split {
            Split::Pretrain => &mut self.pretrain,
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
        }
    }

    /// Passage ids are dense indices into `passages`.
    pub fn passage(&self, id: PassageId) -> &Passage {
        &self.passages[id as usize]
    }

    pub fn vocab_size(&self) -> usize {
        self.languages.iter().map(|l| l.end()).max().unwrap_or(0) as usize
    }

    pub fn query_languages(&self) -> impl Iterator<Item = &Language> {
        self.languages.iter().filter(|l| l.id != PIVOT)
    }

    pub fn min_passage_len(&self) -> usize {
        self.passages.iter().map(Passage::len).min().unwrap_or(0)
    }

    /// Maps a query into another language through the word permutations.
    /// Only synthetic corpora know the exact translation.
    pub fn translate_query(&self, query: &Query, target: usize) -> Option<Query> {
        let maps = self.word_maps.as_ref()?;
        let src = &self.languages[query.language];
        let dst = &self.languages[target];
        let src_map = &maps[query.language];
        let dst_map = &maps[target];
        // inverse of the source permutation
        let mut inverse = vec![0u32; src_map.len()];
        for (word, &slot) in src_map.iter().enumerate() {
            inverse[slot as usize] = word as u32;
        }
        let tokens = query
            .tokens
            .iter()
            .map(|&t| {
                let word = inverse[(t - src.vocab_offset) as usize];
                dst.vocab_offset + dst_map[word as usize]
            })
            .collect();
        Some(Query {
            id: query.id,
            language: target,
            tokens,
            origin: query.origin,
        })
    }

    /// Checks the type invariants that every consumer relies on.
    pub fn validate(&self) -> Result<()> {
        validate_languages(&self.languages)?;
        if self.passages.is_empty() {
            return Err(config_err!("corpus has no passages"));
        }
        let pivot = &self.languages[PIVOT];
        for (i, p) in self.passages.iter().enumerate() {
            if p.id as usize != i {
                return Err(arg_err!("passage at index {i} has id {}", p.id));
            }
            if p.tokens.is_empty() || p.tokens.len() > self.max_passage_len {
                return Err(arg_err!("passage {} has {} tokens", p.id, p.tokens.len()));
            }
            if let Some(t) = p.tokens.iter().find(|&&t| !pivot.contains(t)) {
                return Err(arg_err!("passage {} token {t} outside pivot block", p.id));
            }
            if let Some((s, l)) = p.answer_span {
                if (s + l) as usize > p.tokens.len() {
                    return Err(arg_err!("passage {} answer span out of range", p.id));
                }
            }
        }
        for split in [Split::Pretrain, Split::Train, Split::Dev] {
            for s in self.split(split) {
                let q = &s.query;
                if q.tokens.is_empty() || q.tokens.len() > self.max_query_len {
                    return Err(arg_err!("query {} has {} tokens", q.id, q.tokens.len()));
                }
                let lang = self
                    .languages
                    .get(q.language)
                    .ok_or_else(|| arg_err!("query {} has unknown language", q.id))?;
                if let Some(t) = q.tokens.iter().find(|&&t| !lang.contains(t)) {
                    return Err(arg_err!("query {} token {t} outside its block", q.id));
                }
                let pos = self
                    .passages
                    .get(s.positive_passage_id as usize)
                    .ok_or_else(|| arg_err!("query {} positive out of range", q.id))?;
                if !contains_answer(pos, &s.answer_tokens)? {
                    return Err(arg_err!("query {} positive lacks its answer", q.id));
                }
                for &n in &s.mined_negative_ids {
                    if contains_answer(self.passage(n), &s.answer_tokens)? {
                        return Err(arg_err!("query {} negative {n} contains the answer", q.id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Vocab blocks must be non-empty and pairwise disjoint, ids dense from 0.
pub fn validate_languages(languages: &[Language]) -> Result<()> {
    if languages.is_empty() {
        return Err(config_err!("no languages"));
    }
    for (i, l) in languages.iter().enumerate() {
        if l.id != i {
            return Err(config_err!("language at index {i} has id {}", l.id));
        }
        if l.vocab_size == 0 {
            return Err(config_err!("language {} has an empty vocab block", l.id));
        }
    }
    let mut blocks: Vec<(u32, u32)> = languages
        .iter()
        .map(|l| (l.vocab_offset, l.end()))
        .collect();
    blocks.sort_unstable();
    for w in blocks.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(config_err!(
                "vocab blocks [{}, {}) and [{}, {}) overlap",
                w[0].0,
                w[0].1,
                w[1].0,
                w[1].1
            ));
        }
    }
    Ok(())
}

/// True iff `answer` occurs as a contiguous run of the passage tokens.
pub fn contains_answer(passage: &Passage, answer: &[TokenId]) -> Result<bool> {
    if answer.is_empty() {
        return Err(arg_err!("empty answer"));
    }
    Ok(passage.tokens.windows(answer.len()).any(|w| w == answer))
}

pub fn token_count<'a>(passages: impl IntoIterator<Item = &'a Passage>) -> usize {
    passages.into_iter().map(Passage::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(tokens: &[u32]) -> Passage {
        Passage {
            id: 0,
            tokens: tokens.to_vec(),
            answer_span: None,
        }
    }

    #[test]
    fn containment_hand_traces() {
        let p = passage(&[5, 7, 9, 2]);
        assert!(contains_answer(&p, &[7, 9]).unwrap());
        assert!(!contains_answer(&p, &[9, 7]).unwrap());
        assert!(contains_answer(&p, &[5, 7, 9, 2]).unwrap());
        assert!(!contains_answer(&p, &[5, 7, 9, 2, 1]).unwrap());
    }

    #[test]
    fn empty_answer_is_an_argument_error() {
        assert!(matches!(
            contains_answer(&passage(&[1]), &[]),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn token_counts() {
        assert_eq!(token_count(&[]), 0);
        assert_eq!(token_count(&[passage(&[1, 2, 3, 4])]), 4);
        let ps = [passage(&[1; 3]), passage(&[1; 5]), passage(&[1; 2])];
        assert_eq!(token_count(&ps), 10);
    }

    #[test]
    fn overlapping_blocks_rejected() {
        let langs = vec![
            Language {
                id: 0,
                name: "p".into(),
                vocab_offset: 0,
                vocab_size: 10,
            },
            Language {
                id: 1,
                name: "a".into(),
                vocab_offset: 5,
                vocab_size: 10,
            },
        ];
        assert!(matches!(
            validate_languages(&langs),
            Err(crate::Error::Config(_))
        ));
        assert!(validate_languages(&langs[..1]).is_ok());
        assert!(validate_languages(&[]).is_err());
    }
}
