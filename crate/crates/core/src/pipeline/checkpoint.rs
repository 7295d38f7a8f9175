//! Training-state files.
//!
//! ```text
//! magic "XLRCKPT\0" | version u32 | sections u32
//! | per section: name_len u32, name, payload_len u64, payload
//! ```
//!
//! Sections: `meta` (JSON), `encoder`, `generator`, `cross_scorer`, and while
//! an iteration is in progress `optim` and `snapshot`. Parameter payloads are
//! little-endian f64 arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cursor, EvalReport, IterPhase, LossRecord, RunConfig, TrainState};
use crate::corpus::Language;
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::generator::{CrossScorer, GeneratedQuery, QueryGenerator};
use crate::training::{AdamWConfig, OptimizerState};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"XLRCKPT\0";

#[derive(Serialize, Deserialize)]
struct CursorMeta {
    phase: IterPhase,
    step: u64,
    optimizer: AdamWConfig,
    optimizer_step: u64,
    optimizer_total: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: String,
    languages: Vec<Language>,
    vocab: usize,
    iteration: usize,
    index_version: u64,
    cursor: Option<CursorMeta>,
    pool: Vec<GeneratedQuery>,
    losses: Vec<LossRecord>,
    history: Vec<EvalReport>,
}

fn floats(xs: &[f64]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn checkpoint_save(state: &TrainState, path: &Path) -> Result<()> {
    let meta = Meta {
        config: state.config.to_toml(),
        languages: state.generator.languages().to_vec(),
        vocab: state.encoder.vocab(),
        iteration: state.iteration,
        index_version: state.index_version,
        cursor: state.cursor.as_ref().map(|c| CursorMeta {
            phase: c.phase,
            step: c.step,
            optimizer: c.optimizer.config.clone(),
            optimizer_step: c.optimizer.step,
            optimizer_total: c.optimizer.total_steps,
        }),
        pool: state.pool.clone(),
        losses: state.losses.clone(),
        history: state.history.clone(),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
    let mut sections: Vec<(&str, Vec<u8>)> = vec![
        ("meta", meta),
        ("encoder", floats(&state.encoder.params)),
        ("generator", floats(&state.generator.params)),
        ("cross_scorer", floats(&state.cross_scorer.params)),
    ];
    if let Some(c) = &state.cursor {
        let mut optim = floats(&c.optimizer.m);
        optim.extend(floats(&c.optimizer.v));
        sections.push(("optim", optim));
        sections.push(("snapshot", floats(&c.start_encoder)));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, payload) in &sections {
        section(&mut out, name, payload);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Sections<'a> {
    items: Vec<(String, &'a [u8])>,
}

impl<'a> Sections<'a> {
    fn get(&self, name: &str, path: &Path) -> Result<&'a [u8]> {
        self.items
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("missing section {name}"),
            })
    }
}

fn parse<'a>(buf: &'a [u8], path: &Path) -> Result<Sections<'a>> {
    let corrupt = |message: String| Error::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    if buf.len() < 8 || &buf[..8] != MAGIC {
        return Err(Error::Incompatible {
            path: path.to_path_buf(),
            message: "not a checkpoint file".into(),
        });
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        if buf.len() - pos < n {
            return Err(corrupt(format!("truncated at byte {pos}")));
        }
        let s = &buf[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            path: path.to_path_buf(),
            message: format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        });
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut items = Vec::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt("bad section name".into()))?;
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        items.push((name, take(len)?));
    }
    if pos != buf.len() {
        return Err(corrupt(format!("{} trailing bytes", buf.len() - pos)));
    }
    Ok(Sections { items })
}

fn read_floats(bytes: &[u8], expected: usize, what: &str, path: &Path) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::Incompatible {
            path: path.to_path_buf(),
            message: format!("{what}: {} bytes for {expected} parameters", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn checkpoint_load(path: &Path) -> Result<TrainState> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sections = parse(&buf, path)?;
    let meta: Meta = serde_json::from_slice(sections.get("meta", path)?).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: format!("meta: {e}"),
    })?;
    let config = RunConfig::from_toml(&meta.config)?;
    let mut encoder = DualEncoder::new(meta.vocab, &config.encoder, 0)?;
    let mut generator = QueryGenerator::new(&meta.languages, &config.generator, 0)?;
    let mut cross_scorer = CrossScorer::new(meta.vocab, &config.cross_scorer, 0)?;
    encoder.params = read_floats(sections.get("encoder", path)?, encoder.num_params(), "encoder", path)?;
    generator.params = read_floats(sections.get("generator", path)?, generator.num_params(), "generator", path)?;
    cross_scorer.params = read_floats(
        sections.get("cross_scorer", path)?,
        cross_scorer.num_params(),
        "cross_scorer",
        path,
    )?;
    let cursor = match meta.cursor {
        None => None,
        Some(c) => {
            let raw = sections.get("optim", path)?;
            let n = raw.len() / 16;
            let mv = read_floats(raw, 2 * n, "optim", path)?;
            let start_encoder = read_floats(
                sections.get("snapshot", path)?,
                if c.phase == IterPhase::Retriever { encoder.num_params() } else { 0 },
                "snapshot",
                path,
            )?;
            Some(Cursor {
                phase: c.phase,
                step: c.step,
                start_encoder,
                optimizer: OptimizerState {
                    config: c.optimizer,
                    total_steps: c.optimizer_total,
                    step: c.optimizer_step,
                    m: mv[..n].to_vec(),
                    v: mv[n..].to_vec(),
                },
            })
        }
    };
    Ok(TrainState {
        config,
        encoder,
        generator,
        cross_scorer,
        iteration: meta.iteration,
        index_version: meta.index_version,
        pool: meta.pool,
        cursor,
        losses: meta.losses,
        history: meta.history,
    })
}
