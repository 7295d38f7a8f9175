//! Line-delimited corpus files.
//!
//! Line 1 is a header record; every following line is either a passage or a
//! sample record. Token ids are written as explicit integers.
//!
//! ```text
//! {"format":"xlr-corpus","version":1,"seed":7,"max_query_len":32,...}
//! {"kind":"passage","id":0,"tokens":[...],"answer_span":[12,2]}
//! {"kind":"sample","split":"train","query":{...},"positive_passage_id":0,...}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Language, Passage, Split, TrainingSample};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "xlr-corpus";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    max_query_len: usize,
    max_passage_len: usize,
    languages: Vec<Language>,
    word_maps: Option<Vec<Vec<u32>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Passage(Passage),
    Sample {
        split: Split,
        #[serde(flatten)]
        sample: TrainingSample,
    },
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: CORPUS_FORMAT_VERSION,
        seed: corpus.seed,
        max_query_len: corpus.max_query_len,
        max_passage_len: corpus.max_passage_len,
        languages: corpus.languages.clone(),
        word_maps: corpus.word_maps.clone(),
    };
    write_line(&mut w, &header).map_err(|e| Error::io(path, e))?;
    for p in &corpus.passages {
        write_line(&mut w, &Record::Passage(p.clone())).map_err(|e| Error::io(path, e))?;
    }
    for split in [Split::Pretrain, Split::Train, Split::Dev] {
        for s in corpus.split(split) {
            let rec = Record::Sample {
                split,
                sample: s.clone(),
            };
            write_line(&mut w, &rec).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty corpus file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.format != FORMAT_NAME {
        return Err(Error::Incompatible {
            path: path.into(),
            message: format!("format tag {:?}", header.format),
        });
    }
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(Error::Incompatible {
            path: path.into(),
            message: format!("corpus version {}", header.version),
        });
    }
    let mut corpus = Corpus {
        seed: header.seed,
        languages: header.languages,
        passages: Vec::new(),
        pretrain: Vec::new(),
        train: Vec::new(),
        dev: Vec::new(),
        max_query_len: header.max_query_len,
        max_passage_len: header.max_passage_len,
        word_maps: header.word_maps,
    };
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 2)))?;
        match rec {
            Record::Passage(p) => corpus.passages.push(p),
            Record::Sample { split, sample } => corpus.split_mut(split).push(sample),
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    #[test]
    fn round_trip_is_byte_identical() {
        let cfg = CorpusConfig {
            passages: 120,
            concepts: 10,
            pretrain_samples: 10,
            train_samples: 30,
            dev_samples: 10,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_corpus(&c, &a).unwrap();
        let back = read_corpus(&a).unwrap();
        assert_eq!(back, c);
        write_corpus(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let first = std::fs::read_to_string(&a).unwrap();
        assert!(first.starts_with("{\"format\":\"xlr-corpus\",\"version\":1"));
    }

    #[test]
    fn wrong_version_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"format\":\"xlr-corpus\",\"version\":99,\"seed\":0,\"max_query_len\":32,\
             \"max_passage_len\":128,\"languages\":[],\"word_maps\":null}\n",
        )
        .unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Incompatible { .. })));
    }
}
