use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{objective, warmup_dual_encoder, warmup_generator_on, subsample, RunConfig, Teacher, TrainState};
use crate::corpus::{Corpus, PassageId, Split, TrainingSample};
use crate::error::{arg_err, Error, Result};
use crate::generator::TableSet;
use crate::retrieval::{budget_hit, FlatIndex, RetrievalResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageRecall {
    pub language: usize,
    pub name: String,
    pub queries: usize,
    /// One entry per budget.
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    pub iteration: usize,
    pub split: Split,
    pub budgets: Vec<usize>,
    pub per_language: Vec<LanguageRecall>,
    /// Unweighted mean over languages, per budget.
    pub average: Vec<f64>,
}

impl EvalReport {
    /// Average recall at the first budget.
    pub fn headline(&self) -> f64 {
        self.average.first().copied().unwrap_or(0.0)
    }

    pub fn average_at(&self, budget: usize) -> Option<f64> {
        self.budgets.iter().position(|&b| b == budget).map(|i| self.average[i])
    }
}

/// Ranked depth that always covers `budget` tokens.
fn depth_for(corpus: &Corpus, budget: usize) -> usize {
    let min_len = corpus.min_passage_len().max(1);
    (budget / min_len + 1).clamp(1, corpus.passages.len())
}

fn report(
    tag: String,
    iteration: usize,
    split: Split,
    corpus: &Corpus,
    samples: &[TrainingSample],
    ranked: &[Vec<PassageId>],
    budgets: &[usize],
) -> Result<EvalReport> {
    let mut by_lang: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_lang.entry(s.query.language).or_default().push(i);
    }
    let mut per_language = Vec::new();
    for (lang, idx) in by_lang {
        let recall = budgets
            .iter()
            .map(|&b| {
                let mut hits = 0usize;
                for &i in &idx {
                    if budget_hit(&ranked[i], corpus, &samples[i].answer_tokens, b)? {
                        hits += 1;
                    }
                }
                Ok(hits as f64 / idx.len() as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        per_language.push(LanguageRecall {
            language: lang,
            name: corpus.languages[lang].name.clone(),
            queries: idx.len(),
            recall,
        });
    }
    let average = (0..budgets.len())
        .map(|b| per_language.iter().map(|l| l.recall[b]).sum::<f64>() / per_language.len() as f64)
        .collect();
    Ok(EvalReport {
        tag,
        iteration,
        split,
        budgets: budgets.to_vec(),
        per_language,
        average,
    })
}

fn exact_results(state: &TrainState, corpus: &Corpus, samples: &[TrainingSample], depth: usize) -> Result<Vec<RetrievalResult>> {
    let index = FlatIndex::build(&state.encoder, &corpus.passages, state.index_version)?;
    samples
        .par_iter()
        .map(|s| {
            let qv = state.encoder.encode_query(&s.query)?;
            index.search_vector(s.query.id, &qv.0, depth)
        })
        .collect()
}

/// Token-budget recall of the current encoder with exact search, per query
/// language and averaged.
pub fn evaluate(state: &TrainState, corpus: &Corpus, split: Split, budgets: &[usize]) -> Result<EvalReport> {
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::Metric(format!("split {} is empty", split.name())));
    }
    let depth = depth_for(corpus, budgets.iter().copied().max().unwrap_or(0));
    let results = exact_results(state, corpus, samples, depth)?;
    let ranked: Vec<Vec<PassageId>> = results.into_iter().map(|r| r.ids).collect();
    report(state.config.ablation.tag(), state.iteration, split, corpus, samples, &ranked, budgets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankRow {
    pub fraction: f64,
    pub depth: usize,
    pub teacher: Teacher,
    pub budget: usize,
    pub recall: f64,
    /// Recall of the un-reranked retriever at the same budget.
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankReport {
    pub rows: Vec<RerankRow>,
}

impl RerankReport {
    pub fn get(&self, fraction: f64, depth: usize, teacher: Teacher) -> Option<&RerankRow> {
        self.rows
            .iter()
            .find(|r| r.fraction == fraction && r.depth == depth && r.teacher == teacher)
    }
}

/// Reorders the top `depth` ids by descending score; equal scores keep the
/// retriever order.
fn rerank(ids: &[PassageId], scores: &[f64]) -> Vec<PassageId> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().map(|i| ids[i]).collect()
}

/// Trains both teachers on each fraction of the training split and re-ranks
/// the warm-up retriever's dev results at each depth.
pub fn rerank_compare(
    config: &RunConfig,
    corpus: &Corpus,
    fractions: &[f64],
    depths: &[usize],
    budget: usize,
) -> Result<RerankReport> {
    if fractions.is_empty() || depths.is_empty() || depths.contains(&0) {
        return Err(arg_err!("need at least one fraction and positive depths"));
    }
    let base = warmup_dual_encoder(config, corpus)?;
    let dev = &corpus.dev;
    if dev.is_empty() {
        return Err(Error::Metric("dev split is empty".into()));
    }
    let max_depth = depths.iter().copied().max().unwrap().min(corpus.passages.len());
    let results = exact_results(&base, corpus, dev, max_depth)?;
    let baseline_hits = |ranked: &[Vec<PassageId>]| -> Result<f64> {
        Ok(report(String::new(), 0, Split::Dev, corpus, dev, ranked, &[budget])?.average[0])
    };
    let mut rows = Vec::new();
    for &fraction in fractions {
        let subset = subsample(&corpus.train, fraction, config.seed)?;
        let mut cfg = config.clone();
        cfg.ablation.teacher = Teacher::CrossScorer;
        let mut state = base.clone();
        state.config = cfg;
        warmup_generator_on(&mut state, corpus, &subset)?;
        let langs: Vec<usize> = corpus.query_languages().map(|l| l.id).collect();
        let tables = TableSet::full(&state.generator, &langs);
        for &depth in depths {
            let depth = depth.min(corpus.passages.len());
            let top: Vec<Vec<PassageId>> = results.iter().map(|r| r.top(depth).to_vec()).collect();
            let baseline = baseline_hits(&top)?;
            for teacher in [Teacher::Generator, Teacher::CrossScorer] {
                let ranked = dev
                    .par_iter()
                    .zip(&top)
                    .map(|(s, ids)| {
                        let scores = match teacher {
                            Teacher::Generator => objective::generator_scores(&state.generator, &tables, corpus, &s.query, ids)?,
                            Teacher::CrossScorer => objective::cross_scores(&state.cross_scorer, corpus, &s.query, ids)?,
                        };
                        Ok(rerank(ids, &scores))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push(RerankRow {
                    fraction,
                    depth,
                    teacher,
                    budget,
                    recall: baseline_hits(&ranked)?,
                    baseline,
                });
            }
        }
    }
    Ok(RerankReport { rows })
}
