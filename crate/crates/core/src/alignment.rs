//! Overlap coefficients between source and generated queries, scheduled
//! sampling of one generated query per source, and the union candidate sets
//! the alignment loss is computed over.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{PassageId, QueryId, TrainingSample};
use crate::encoder::DualEncoder;
use crate::error::{arg_err, Error, Result};
use crate::generator::GeneratedQuery;
use crate::retrieval::{Index, RetrievalResult};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub threshold: f64,
    pub candidate_size: usize,
    pub retrieval_depth: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            candidate_size: 32,
            retrieval_depth: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentCandidate {
    pub generated_query: GeneratedQuery,
    pub retrieval: RetrievalResult,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentPair {
    pub source_id: QueryId,
    pub generated_id: QueryId,
    /// Distinct ids of both candidate sets, source order first.
    pub union_ids: Vec<PassageId>,
    pub coefficient: f64,
}

/// `|a ∩ b| / max(|a|, |b|)` over distinct ids, zeroed below `threshold`.
pub fn overlap_coefficient(a: &[PassageId], b: &[PassageId], threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(arg_err!("threshold {threshold} outside [0, 1]"));
    }
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    if a.is_empty() || b.is_empty() {
        return Err(arg_err!("overlap of an empty candidate set"));
    }
    let raw = a.intersection(&b).count() as f64 / a.len().max(b.len()) as f64;
    Ok(if raw >= threshold { raw } else { 0.0 })
}

/// Coefficients normalized to probabilities; `None` when all are zero.
pub fn sampling_probs(coefficients: &[f64]) -> Result<Option<Vec<f64>>> {
    if let Some(c) = coefficients.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
        return Err(arg_err!("invalid coefficient {c}"));
    }
    let total: f64 = coefficients.iter().sum();
    if total == 0.0 {
        return Ok(None);
    }
    Ok(Some(coefficients.iter().map(|c| c / total).collect()))
}

/// Index drawn from `probs` (which must sum to 1).
fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn union(a: &[PassageId], b: &[PassageId]) -> Vec<PassageId> {
    let mut seen = BTreeSet::new();
    a.iter().chain(b).copied().filter(|id| seen.insert(*id)).collect()
}

/// Draws one candidate with probability proportional to its coefficient.
pub fn sample_generated_query(
    source_id: QueryId,
    source_candidates: &[PassageId],
    candidates: &[AlignmentCandidate],
    candidate_size: usize,
    rng: &mut Rng,
) -> Result<Option<AlignmentPair>> {
    let coeffs: Vec<f64> = candidates.iter().map(|c| c.coefficient).collect();
    let Some(probs) = sampling_probs(&coeffs)? else {
        return Ok(None);
    };
    let chosen = &candidates[draw(&probs, rng)];
    Ok(Some(AlignmentPair {
        source_id,
        generated_id: chosen.generated_query.query.id,
        union_ids: union(source_candidates, chosen.retrieval.top(candidate_size)),
        coefficient: chosen.coefficient,
    }))
}

/// Coefficient table for one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleAlignment {
    pub source_id: QueryId,
    pub language: usize,
    pub source_candidates: Vec<PassageId>,
    pub candidates: Vec<AlignmentCandidate>,
}

impl SampleAlignment {
    pub fn has_pair(&self) -> bool {
        self.candidates.iter().any(|c| c.coefficient > 0.0)
    }
}

/// Per-iteration coefficient table, valid only for the index version it was
/// computed against.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentBatch {
    pub entries: Vec<SampleAlignment>,
    pub index_version: u64,
    pub candidate_size: usize,
}

impl AlignmentBatch {
    pub fn pairs_formable(&self) -> usize {
        self.entries.iter().filter(|e| e.has_pair()).count()
    }

    pub fn skip_rate(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        1.0 - self.pairs_formable() as f64 / self.entries.len() as f64
    }

    pub fn check_version(&self, current: u64) -> Result<()> {
        if self.index_version != current {
            return Err(Error::StaleVersion {
                expected: current,
                found: self.index_version,
            });
        }
        for e in &self.entries {
            for c in &e.candidates {
                c.retrieval.check_version(current)?;
            }
        }
        Ok(())
    }

    /// Fresh draw for entry `i`; `(seed, draw)` fixes the outcome.
    pub fn draw(&self, i: usize, seed: u64, draw: u64) -> Result<Option<AlignmentPair>> {
        let e = &self.entries[i];
        let mut rng = stream(seed, "alignment/draw", draw.wrapping_mul(1 << 32) ^ e.source_id);
        sample_generated_query(e.source_id, &e.source_candidates, &e.candidates, self.candidate_size, &mut rng)
    }

    pub fn entry_for(&self, source_id: QueryId) -> Option<usize> {
        self.entries.iter().position(|e| e.source_id == source_id)
    }
}

/// Retrieves for every sample and its accepted generated queries with the
/// current encoder and index, and computes thresholded coefficients.
pub fn build_alignment_batch(
    samples: &[TrainingSample],
    pool: &[GeneratedQuery],
    encoder: &DualEncoder,
    index: &Index,
    config: &AlignmentConfig,
) -> Result<AlignmentBatch> {
    let mut by_source: BTreeMap<QueryId, Vec<&GeneratedQuery>> = BTreeMap::new();
    for g in pool.iter().filter(|g| g.accepted) {
        by_source.entry(g.source_id).or_default().push(g);
    }
    let depth = config.retrieval_depth.max(config.candidate_size);
    let entries = samples
        .par_iter()
        .map(|s| {
            let src = index.search(encoder, &s.query, depth)?;
            let source_candidates = src.top(config.candidate_size).to_vec();
            let gens = by_source.get(&s.query.id).map(Vec::as_slice).unwrap_or(&[]);
            let candidates = gens
                .iter()
                .map(|g| {
                    let retrieval = index.search(encoder, &g.query, depth)?;
                    let coefficient = overlap_coefficient(
                        &source_candidates,
                        retrieval.top(config.candidate_size),
                        config.threshold,
                    )?;
                    Ok(AlignmentCandidate {
                        generated_query: (*g).clone(),
                        retrieval,
                        coefficient,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SampleAlignment {
                source_id: s.query.id,
                language: s.query.language,
                source_candidates,
                candidates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentBatch {
        entries,
        index_version: index.version(),
        candidate_size: config.candidate_size,
    })
}

/// One row per entry: `sample_id,language,generated_id,coefficient,skipped`,
/// using one seeded draw per entry.
pub fn write_alignment_diagnostics(batch: &AlignmentBatch, seed: u64, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut rows = Vec::with_capacity(batch.entries.len());
    for i in 0..batch.entries.len() {
        rows.push((batch.entries[i].source_id, batch.entries[i].language, batch.draw(i, seed, 0)?));
    }
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "sample_id,language,generated_id,coefficient,skipped")?;
        for (id, lang, pair) in &rows {
            match pair {
                Some(p) => writeln!(w, "{id},{lang},{},{},0", p.generated_id, p.coefficient)?,
                None => writeln!(w, "{id},{lang},,0,1")?,
            }
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;
    use crate::corpus::{Origin, Query};

    fn candidate(id: QueryId, coefficient: f64, ids: Vec<PassageId>) -> AlignmentCandidate {
        AlignmentCandidate {
            generated_query: GeneratedQuery {
                query: Query {
                    id,
                    language: 1,
                    tokens: vec![1],
                    origin: Origin::Generated,
                },
                confidence: -1.0,
                accepted: true,
                source_id: 0,
            },
            retrieval: RetrievalResult {
                query_id: id,
                scores: vec![0.0; ids.len()],
                ids,
                version: 0,
                truncated: false,
            },
            coefficient,
        }
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_coefficient(&[1, 2, 3], &[3, 2, 1], 0.3).unwrap(), 1.0);
        assert_eq!(overlap_coefficient(&[1, 2], &[3, 4], 0.0).unwrap(), 0.0);
        assert_eq!(overlap_coefficient(&[1, 2, 3, 4], &[3, 4, 5, 6], 0.3).unwrap(), 0.5);
        assert_eq!(overlap_coefficient(&[1, 2, 3, 4], &[3, 4, 5, 6], 0.6).unwrap(), 0.0);
        assert!(overlap_coefficient(&[], &[1], 0.3).is_err());
        assert!(overlap_coefficient(&[1], &[1], 1.5).is_err());
    }

    #[test]
    fn probability_examples() {
        assert_eq!(sampling_probs(&[0.5, 0.5]).unwrap().unwrap(), vec![0.5, 0.5]);
        assert_eq!(sampling_probs(&[0.4, 0.0, 0.4]).unwrap().unwrap(), vec![0.5, 0.0, 0.5]);
        assert_eq!(sampling_probs(&[0.0, 0.0, 0.0]).unwrap(), None);
        assert!(sampling_probs(&[-0.1, 0.5]).is_err());
    }

    #[test]
    fn single_positive_candidate_always_chosen() {
        let cands = vec![candidate(1, 0.0, vec![9]), candidate(2, 0.4, vec![3, 7])];
        for s in 0..50 {
            let mut rng = stream(s, "t", 0);
            let pair = sample_generated_query(5, &[7, 8], &cands, 32, &mut rng).unwrap().unwrap();
            assert_eq!(pair.generated_id, 2);
            assert_eq!(pair.union_ids, vec![7, 8, 3]);
        }
        let zeros = vec![candidate(1, 0.0, vec![9]), candidate(2, 0.0, vec![3])];
        let mut rng = stream(0, "t", 0);
        assert!(sample_generated_query(5, &[7], &zeros, 32, &mut rng).unwrap().is_none());
        assert!(sample_generated_query(5, &[7], &[], 32, &mut rng).unwrap().is_none());
    }

    #[test]
    fn seeded_frequencies_pass_chi_square() {
        let cands = vec![candidate(1, 0.75, vec![1]), candidate(2, 0.25, vec![2])];
        let mut rng = stream(2024, "chi", 0);
        let n = 10_000;
        let mut counts = [0f64; 2];
        for _ in 0..n {
            let p = sample_generated_query(0, &[1], &cands, 32, &mut rng).unwrap().unwrap();
            counts[(p.generated_id - 1) as usize] += 1.0;
        }
        let expected = [0.75 * n as f64, 0.25 * n as f64];
        let stat: f64 = counts.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 {stat}, p {p}");
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_threshold_idempotent(
            a in proptest::collection::btree_set(0u32..40, 1..20),
            b in proptest::collection::btree_set(0u32..40, 1..20),
            t in 0.0f64..1.0,
        ) {
            let a: Vec<_> = a.into_iter().collect();
            let b: Vec<_> = b.into_iter().collect();
            let ab = overlap_coefficient(&a, &b, t).unwrap();
            prop_assert_eq!(ab, overlap_coefficient(&b, &a, t).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            let again = if ab >= t { ab } else { 0.0 };
            prop_assert_eq!(again, ab);
        }

        #[test]
        fn probabilities_sum_to_one(c in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            if let Some(p) = sampling_probs(&c).unwrap() {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
