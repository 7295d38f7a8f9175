//! Passage indices, top-k search, negative mining and the token-budget
//! recall metric.

mod io;
mod ivf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{contains_answer, Corpus, Passage, PassageId, Query, QueryId, TokenId};
use crate::encoder::DualEncoder;
use crate::error::{arg_err, config_err, Error, Result};
use crate::tensor::dot;

pub use io::{read_index, write_index, write_results_tsv, INDEX_FORMAT_VERSION};
pub use ivf::IvfIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndexKind {
    Flat,
    Ivf { n_clusters: usize, nprobe: usize },
}

impl Default for IndexKind {
    fn default() -> Self {
        IndexKind::Flat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    pub ids: Vec<PassageId>,
    pub dim: usize,
    /// Row-major `ids.len() x dim`.
    pub embeddings: Vec<f64>,
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Index {
    Flat(FlatIndex),
    Ivf(IvfIndex),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub query_id: QueryId,
    pub ids: Vec<PassageId>,
    pub scores: Vec<f64>,
    pub version: u64,
    /// Fewer than `k` passages were available.
    pub truncated: bool,
}

impl RetrievalResult {
    pub fn top(&self, n: usize) -> &[PassageId] {
        &self.ids[..n.min(self.ids.len())]
    }

    pub fn check_version(&self, current: u64) -> Result<()> {
        if self.version == current {
            Ok(())
        } else {
            Err(Error::StaleVersion {
                expected: current,
                found: self.version,
            })
        }
    }
}

/// Ranks `(id, score)` pairs by descending score, ascending id on ties, and
/// keeps the first `k`.
pub(crate) fn rank(mut scored: Vec<(PassageId, f64)>, k: usize) -> Vec<(PassageId, f64)> {
    let cmp = |a: &(PassageId, f64), b: &(PassageId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
}

impl FlatIndex {
    pub fn build(model: &DualEncoder, passages: &[Passage], version: u64) -> Result<Self> {
        if passages.is_empty() {
            return Err(config_err!("cannot index an empty corpus"));
        }
        let rows: Vec<Vec<f64>> = passages
            .par_iter()
            .map(|p| model.encode_passage(p).map(|e| e.0))
            .collect::<Result<_>>()?;
        Ok(Self {
            ids: passages.iter().map(|p| p.id).collect(),
            dim: model.d_out(),
            embeddings: rows.concat(),
            version,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn search_rows(
        &self,
        query_id: QueryId,
        qv: &[f64],
        rows: impl Iterator<Item = usize>,
        k: usize,
    ) -> RetrievalResult {
        let scored: Vec<(PassageId, f64)> = rows.map(|i| (self.ids[i], dot(qv, self.row(i)))).collect();
        let available = scored.len();
        let ranked = rank(scored, k);
        RetrievalResult {
            query_id,
            ids: ranked.iter().map(|r| r.0).collect(),
            scores: ranked.iter().map(|r| r.1).collect(),
            version: self.version,
            truncated: available < k,
        }
    }

    pub fn search_vector(&self, query_id: QueryId, qv: &[f64], k: usize) -> Result<RetrievalResult> {
        check_k(k)?;
        Ok(self.search_rows(query_id, qv, 0..self.len(), k))
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(arg_err!("k must be at least 1"))
    } else {
        Ok(())
    }
}

pub fn build_index(model: &DualEncoder, corpus: &Corpus, kind: IndexKind, seed: u64, version: u64) -> Result<Index> {
    let flat = FlatIndex::build(model, &corpus.passages, version)?;
    match kind {
        IndexKind::Flat => Ok(Index::Flat(flat)),
        IndexKind::Ivf { n_clusters, nprobe } => Ok(Index::Ivf(IvfIndex::train(flat, n_clusters, nprobe, seed)?)),
    }
}

pub fn search_exact(index: &FlatIndex, model: &DualEncoder, q: &Query, k: usize) -> Result<RetrievalResult> {
    let qv = model.encode_query(q)?;
    index.search_vector(q.id, &qv.0, k)
}

pub fn search_ann(index: &IvfIndex, model: &DualEncoder, q: &Query, k: usize) -> Result<RetrievalResult> {
    let qv = model.encode_query(q)?;
    index.search_vector(q.id, &qv.0, k)
}

impl Index {
    pub fn version(&self) -> u64 {
        self.flat().version
    }

    pub fn flat(&self) -> &FlatIndex {
        match self {
            Index::Flat(f) => f,
            Index::Ivf(i) => &i.flat,
        }
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            Index::Flat(_) => IndexKind::Flat,
            Index::Ivf(i) => IndexKind::Ivf {
                n_clusters: i.n_clusters(),
                nprobe: i.nprobe,
            },
        }
    }

    pub fn search_vector(&self, query_id: QueryId, qv: &[f64], k: usize) -> Result<RetrievalResult> {
        match self {
            Index::Flat(f) => f.search_vector(query_id, qv, k),
            Index::Ivf(i) => i.search_vector(query_id, qv, k),
        }
    }

    pub fn search(&self, model: &DualEncoder, q: &Query, k: usize) -> Result<RetrievalResult> {
        let qv = model.encode_query(q)?;
        self.search_vector(q.id, &qv.0, k)
    }

    /// Searches many queries in parallel; output order follows input order.
    pub fn search_many<'a>(
        &self,
        model: &DualEncoder,
        queries: impl IntoParallelIterator<Item = &'a Query>,
        k: usize,
    ) -> Result<Vec<RetrievalResult>> {
        queries
            .into_par_iter()
            .map(|q| self.search(model, q, k))
            .collect()
    }
}

/// Rebuilds `previous` with the current parameters under the next version.
/// The old index is untouched, so readers holding it keep working until the
/// caller swaps in the returned one.
pub fn refresh_index(previous: &Index, model: &DualEncoder, corpus: &Corpus, seed: u64) -> Result<Index> {
    build_index(model, corpus, previous.kind(), seed, previous.version() + 1)
}

/// The first `n` ranked passages that do not contain `answer`.
pub fn mine_negatives(result: &RetrievalResult, corpus: &Corpus, answer: &[TokenId], n: usize) -> Result<Vec<PassageId>> {
    let mut out = Vec::with_capacity(n);
    for &id in &result.ids {
        if out.len() >= n {
            break;
        }
        if !contains_answer(corpus.passage(id), answer)? {
            out.push(id);
        }
    }
    Ok(out)
}

/// Whether the whole-passage prefix of `ids` fitting in `k_tokens` holds the
/// answer.
pub fn budget_hit(ids: &[PassageId], corpus: &Corpus, answer: &[TokenId], k_tokens: usize) -> Result<bool> {
    let mut used = 0;
    for &id in ids {
        let p = corpus.passage(id);
        used += p.len();
        if used > k_tokens {
            break;
        }
        if contains_answer(p, answer)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Fraction of queries whose ranked passages, accumulated while the running
/// token count stays within `k_tokens`, include one containing the answer.
pub fn recall_at_k_tokens(
    results: &[RetrievalResult],
    corpus: &Corpus,
    answers: &[&[TokenId]],
    k_tokens: usize,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Metric("no retrieval results".into()));
    }
    if results.len() != answers.len() {
        return Err(Error::Metric(format!(
            "{} results but {} answers",
            results.len(),
            answers.len()
        )));
    }
    let mut hits = 0usize;
    for (r, a) in results.iter().zip(answers) {
        if budget_hit(&r.ids, corpus, a, k_tokens)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests;
