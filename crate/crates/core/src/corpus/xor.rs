//! Reader for XOR-Retrieve style JSONL.
//!
//! Accepted per-line fields: `question`, `lang`, `answers` (list of strings)
//! and the positive passage as either `positive_ctxs[0].text` (the public
//! DPR-style layout), `positive_passage` or `positive`. Text is tokenized by
//! whitespace and lowercasing, then hashed into a fixed-size block per
//! language.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde_json::Value;

use super::{contains_answer, Corpus, Language, Origin, Passage, Query, TrainingSample, PIVOT};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct XorOptions {
    pub bucket_size: u32,
    pub pivot_lang: String,
    pub max_query_len: usize,
    pub max_passage_len: usize,
}

impl Default for XorOptions {
    fn default() -> Self {
        Self {
            bucket_size: 512,
            pivot_lang: "en".to_string(),
            max_query_len: 32,
            max_passage_len: 128,
        }
    }
}

#[derive(Clone, Debug)]
pub struct XorLoad {
    pub corpus: Corpus,
    /// Records missing a required field.
    pub skipped_missing: usize,
    /// Records whose positive passage has no exact answer match.
    pub skipped_no_span: usize,
}

impl XorLoad {
    pub fn skipped(&self) -> usize {
        self.skipped_missing + self.skipped_no_span
    }
}

struct RawRecord {
    question: String,
    lang: String,
    answers: Vec<String>,
    passage: String,
}

fn parse_record(v: &Value) -> Option<RawRecord> {
    let question = v.get("question")?.as_str()?.to_string();
    let lang = v.get("lang")?.as_str()?.to_string();
    let answers: Vec<String> = v
        .get("answers")?
        .as_array()?
        .iter()
        .filter_map(|a| a.as_str().map(str::to_string))
        .collect();
    let passage = v
        .get("positive_ctxs")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("text"))
        .or_else(|| v.get("positive_passage"))
        .or_else(|| v.get("positive"))?
        .as_str()?
        .to_string();
    if answers.is_empty() || question.trim().is_empty() || passage.trim().is_empty() {
        return None;
    }
    Some(RawRecord {
        question,
        lang,
        answers,
        passage,
    })
}

fn hash_token(word: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn tokenize(text: &str, lang: &Language) -> Vec<u32> {
    text.split_whitespace()
        .map(|w| {
            let w = w.to_lowercase();
            lang.vocab_offset + (hash_token(&w) % u64::from(lang.vocab_size)) as u32
        })
        .collect()
}

pub fn load_xor_jsonl(path: &Path, opts: &XorOptions) -> Result<XorLoad> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped_missing = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(line).ok().as_ref().and_then(parse_record) {
            Some(r) => records.push(r),
            None => skipped_missing += 1,
        }
    }

    let codes: BTreeSet<&str> = records
        .iter()
        .map(|r| r.lang.as_str())
        .filter(|l| *l != opts.pivot_lang)
        .collect();
    let mut languages = vec![Language {
        id: PIVOT,
        name: opts.pivot_lang.clone(),
        vocab_offset: 0,
        vocab_size: opts.bucket_size,
    }];
    for (i, code) in codes.iter().enumerate() {
        languages.push(Language {
            id: i + 1,
            name: code.to_string(),
            vocab_offset: (i as u32 + 1) * opts.bucket_size,
            vocab_size: opts.bucket_size,
        });
    }
    let lang_id: HashMap<&str, usize> = languages
        .iter()
        .map(|l| (l.name.as_str(), l.id))
        .collect();

    let mut passages: Vec<Passage> = Vec::new();
    let mut passage_ids: HashMap<String, u32> = HashMap::new();
    let mut train = Vec::new();
    let mut skipped_no_span = 0;
    for (n, r) in records.iter().enumerate() {
        let lang = &languages[lang_id[r.lang.as_str()]];
        let mut p_tokens = tokenize(&r.passage, &languages[PIVOT]);
        p_tokens.truncate(opts.max_passage_len);
        let mut q_tokens = tokenize(&r.question, lang);
        q_tokens.truncate(opts.max_query_len);
        let probe = Passage {
            id: 0,
            tokens: p_tokens,
            answer_span: None,
        };
        let answer = r
            .answers
            .iter()
            .map(|a| tokenize(a, &languages[PIVOT]))
            .find(|a| !a.is_empty() && contains_answer(&probe, a).unwrap_or(false));
        let Some(answer) = answer else {
            skipped_no_span += 1;
            continue;
        };
        let next = passages.len() as u32;
        let pid = *passage_ids.entry(r.passage.clone()).or_insert(next);
        if pid == next {
            let start = probe
                .tokens
                .windows(answer.len())
                .position(|w| w == answer.as_slice())
                .map(|s| (s as u32, answer.len() as u32));
            passages.push(Passage {
                id: pid,
                tokens: probe.tokens,
                answer_span: start,
            });
        }
        train.push(TrainingSample {
            query: Query {
                id: n as u64,
                language: lang.id,
                tokens: q_tokens,
                origin: Origin::Source,
            },
            positive_passage_id: pid,
            answer_tokens: answer,
            mined_negative_ids: Vec::new(),
        });
    }

    if train.is_empty() {
        return Err(Error::Format(format!(
            "{}: no valid records ({skipped_missing} missing fields, {skipped_no_span} without an answer span)",
            path.display()
        )));
    }
    let corpus = Corpus {
        seed: 0,
        languages,
        passages,
        pretrain: Vec::new(),
        train,
        dev: Vec::new(),
        max_query_len: opts.max_query_len,
        max_passage_len: opts.max_passage_len,
        word_maps: None,
    };
    corpus.validate()?;
    Ok(XorLoad {
        corpus,
        skipped_missing,
        skipped_no_span,
    })
}
