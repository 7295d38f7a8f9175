//! Batch objectives with exact gradients. Each returns the batch-mean loss
//! and the gradient over the model's flat parameter vector.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{Corpus, PassageId, Query, TokenId};
use crate::encoder::{DualEncoder, EncodeTape, Tower};
use crate::error::{arg_err, Result};
use crate::generator::{scored_steps, ConditioningInput, CrossScorer, GenTape, QueryGenerator, TableSet};
use crate::tensor::dot;
use crate::training::{align_loss_grad, combined_loss, distill_loss_grad, info_nce_grad, LossBreakdown};

/// Encoded queries and passages of one batch with per-item output
/// gradients, backpropagated once per item at the end.
struct EncoderBatch<'a> {
    enc: &'a DualEncoder,
    queries: Vec<EncodeTape>,
    dq: Vec<Vec<f64>>,
    slots: BTreeMap<PassageId, usize>,
    passages: Vec<EncodeTape>,
    dp: Vec<Vec<f64>>,
}

impl<'a> EncoderBatch<'a> {
    fn new(
        enc: &'a DualEncoder,
        corpus: &Corpus,
        queries: &[&Query],
        ids: impl IntoIterator<Item = PassageId>,
    ) -> Result<Self> {
        let q_tapes = queries
            .par_iter()
            .map(|q| enc.encode_with_tape(Tower::Query, &q.tokens))
            .collect::<Result<Vec<_>>>()?;
        let mut slots = BTreeMap::new();
        for id in ids {
            let n = slots.len();
            slots.entry(id).or_insert(n);
        }
        let mut order: Vec<(PassageId, usize)> = slots.iter().map(|(&k, &v)| (k, v)).collect();
        order.sort_by_key(|x| x.1);
        let p_tapes = order
            .par_iter()
            .map(|&(id, _)| enc.encode_with_tape(Tower::Passage, &corpus.passage(id).tokens))
            .collect::<Result<Vec<_>>>()?;
        let d = enc.d_out();
        Ok(Self {
            enc,
            dq: vec![vec![0.0; d]; q_tapes.len()],
            queries: q_tapes,
            dp: vec![vec![0.0; d]; p_tapes.len()],
            passages: p_tapes,
            slots,
        })
    }

    fn scores(&self, q: usize, ids: &[PassageId]) -> Vec<f64> {
        ids.iter()
            .map(|id| dot(&self.queries[q].output.0, &self.passages[self.slots[id]].output.0))
            .collect()
    }

    /// Adds `g[j] = d loss / d score(q, ids[j])`.
    fn add_grad(&mut self, q: usize, ids: &[PassageId], g: &[f64]) {
        for (id, &gj) in ids.iter().zip(g) {
            let s = self.slots[id];
            for k in 0..self.dq[q].len() {
                self.dq[q][k] += gj * self.passages[s].output.0[k];
                self.dp[s][k] += gj * self.queries[q].output.0[k];
            }
        }
    }

    fn backward(self) -> Vec<f64> {
        let mut grads = vec![0.0; self.enc.num_params()];
        for (tape, d) in self.queries.iter().zip(&self.dq) {
            self.enc.backward(tape, d, &mut grads);
        }
        for (tape, d) in self.passages.iter().zip(&self.dp) {
            self.enc.backward(tape, d, &mut grads);
        }
        grads
    }
}

/// A query with its positive and negative passages.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastItem {
    pub query: Query,
    pub positive: PassageId,
    pub negatives: Vec<PassageId>,
}

impl ContrastItem {
    fn ids(&self) -> Vec<PassageId> {
        std::iter::once(self.positive).chain(self.negatives.iter().copied()).collect()
    }
}

/// Mean contrastive loss of the dual encoder.
pub fn encoder_contrastive(enc: &DualEncoder, corpus: &Corpus, items: &[ContrastItem]) -> Result<(f64, Vec<f64>)> {
    if items.is_empty() {
        return Err(arg_err!("empty batch"));
    }
    let queries: Vec<&Query> = items.iter().map(|i| &i.query).collect();
    let mut batch = EncoderBatch::new(enc, corpus, &queries, items.iter().flat_map(ContrastItem::ids))?;
    let inv = 1.0 / items.len() as f64;
    let mut total = 0.0;
    for (qi, item) in items.iter().enumerate() {
        let ids = item.ids();
        let s = batch.scores(qi, &ids);
        let (loss, g) = info_nce_grad(s[0], &s[1..])?;
        total += loss;
        let g: Vec<f64> = g.iter().map(|x| x * inv).collect();
        batch.add_grad(qi, &ids, &g);
    }
    Ok((total * inv, batch.backward()))
}

/// Candidates and teacher scores for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Distilled {
    pub query: Query,
    pub ids: Vec<PassageId>,
    pub teacher: Vec<f64>,
}

/// One training sample of the combined retriever objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveItem {
    pub source: Distilled,
    pub generated: Vec<Distilled>,
    /// Index into `generated`, the union candidate ids and the coefficient.
    pub align: Option<(usize, Vec<PassageId>, f64)>,
}

/// Mean over items of `L_D + L_D' + alpha * L_A`, where `L_D'` averages the
/// distillation losses of the item's generated queries and the alignment
/// term treats the source distribution as a constant.
pub fn retriever_objective(
    enc: &DualEncoder,
    corpus: &Corpus,
    items: &[ObjectiveItem],
    alpha: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if items.is_empty() {
        return Err(arg_err!("empty batch"));
    }
    let mut queries: Vec<&Query> = Vec::new();
    let mut slots: Vec<(usize, Vec<usize>)> = Vec::new();
    for item in items {
        let s = queries.len();
        queries.push(&item.source.query);
        let g: Vec<usize> = item
            .generated
            .iter()
            .map(|d| {
                queries.push(&d.query);
                queries.len() - 1
            })
            .collect();
        slots.push((s, g));
    }
    let ids = items.iter().flat_map(|i| {
        i.source
            .ids
            .iter()
            .chain(i.generated.iter().flat_map(|d| d.ids.iter()))
            .chain(i.align.iter().flat_map(|a| a.1.iter()))
            .copied()
    });
    let mut batch = EncoderBatch::new(enc, corpus, &queries, ids)?;
    let inv = 1.0 / items.len() as f64;
    let (mut ld, mut ldp, mut la) = (0.0, 0.0, 0.0);
    for (item, (sq, gq)) in items.iter().zip(&slots) {
        let s = batch.scores(*sq, &item.source.ids);
        let (loss, g) = distill_loss_grad(&item.source.teacher, &s)?;
        ld += loss;
        batch.add_grad(*sq, &item.source.ids, &scale(&g, inv));

        if !item.generated.is_empty() {
            let w = inv / item.generated.len() as f64;
            for (d, &q) in item.generated.iter().zip(gq) {
                let s = batch.scores(q, &d.ids);
                let (loss, g) = distill_loss_grad(&d.teacher, &s)?;
                ldp += loss / item.generated.len() as f64;
                batch.add_grad(q, &d.ids, &scale(&g, w));
            }
        }

        if let Some((gi, union, c)) = &item.align {
            let src = batch.scores(*sq, union);
            let gen = batch.scores(gq[*gi], union);
            let (loss, g) = align_loss_grad(union, &src, &gen, *c)?;
            la += loss;
            batch.add_grad(gq[*gi], union, &scale(&g, alpha * inv));
        }
    }
    let breakdown = combined_loss(ld * inv, ldp * inv, la * inv, alpha)?;
    Ok((breakdown, batch.backward()))
}

fn scale(g: &[f64], w: f64) -> Vec<f64> {
    g.iter().map(|x| x * w).collect()
}

/// Gold query for a (language, answer, passage) conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationItem {
    pub language: usize,
    pub answer: Vec<TokenId>,
    pub passage: PassageId,
    pub gold: Vec<TokenId>,
}

/// Mean per-step cross-entropy of the generator on gold queries.
pub fn generator_generation(gen: &QueryGenerator, corpus: &Corpus, items: &[GenerationItem]) -> Result<(f64, Vec<f64>)> {
    if items.is_empty() {
        return Err(arg_err!("empty batch"));
    }
    let tables = gen.tables_for(
        items
            .iter()
            .map(|i| (i.language, corpus.passage(i.passage).tokens.as_slice())),
    );
    let tapes = items
        .par_iter()
        .map(|i| {
            if i.gold.is_empty() {
                return Err(arg_err!("empty gold query"));
            }
            let cond = ConditioningInput::new(i.language, &i.answer, &corpus.passage(i.passage).tokens);
            gen.forward(&tables, &cond, &i.gold)
        })
        .collect::<Result<Vec<GenTape>>>()?;
    let inv = 1.0 / items.len() as f64;
    let mut grads = gen.zero_grads();
    let mut total = 0.0;
    for (item, tape) in items.iter().zip(&tapes) {
        let steps = scored_steps(item.gold.len()) as f64;
        total += -tape.loglik / steps;
        gen.backward(tape, -inv / steps, &mut grads);
    }
    Ok((total * inv, grads.finish(gen, &tables)))
}

/// Re-ranking score of the generator: query log-likelihood given the
/// passage, without an answer. `tables` must cover the query language.
pub fn generator_scores(
    gen: &QueryGenerator,
    tables: &TableSet,
    corpus: &Corpus,
    query: &Query,
    ids: &[PassageId],
) -> Result<Vec<f64>> {
    ids.iter()
        .map(|&id| {
            let cond = ConditioningInput::new(query.language, &[], &corpus.passage(id).tokens);
            gen.loglik(tables, &cond, query)
        })
        .collect()
}

/// Mean contrastive loss of the generator's re-ranking scores.
pub fn generator_contrastive(gen: &QueryGenerator, corpus: &Corpus, items: &[ContrastItem]) -> Result<(f64, Vec<f64>)> {
    if items.is_empty() {
        return Err(arg_err!("empty batch"));
    }
    let tables = gen.tables_for(items.iter().flat_map(|i| {
        i.ids()
            .into_iter()
            .map(move |id| (i.query.language, corpus.passage(id).tokens.as_slice()))
    }));
    let tapes = items
        .par_iter()
        .map(|item| {
            item.ids()
                .iter()
                .map(|&id| {
                    let cond = ConditioningInput::new(item.query.language, &[], &corpus.passage(id).tokens);
                    gen.forward(&tables, &cond, &item.query.tokens)
                })
                .collect::<Result<Vec<GenTape>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / items.len() as f64;
    let mut grads = gen.zero_grads();
    let mut total = 0.0;
    for row in &tapes {
        let (loss, g) = info_nce_grad(row[0].loglik, &row[1..].iter().map(|t| t.loglik).collect::<Vec<_>>())?;
        total += loss;
        for (tape, gj) in row.iter().zip(g) {
            gen.backward(tape, gj * inv, &mut grads);
        }
    }
    Ok((total * inv, grads.finish(gen, &tables)))
}

/// Mean contrastive loss of the cross scorer.
pub fn cross_contrastive(cross: &CrossScorer, corpus: &Corpus, items: &[ContrastItem]) -> Result<(f64, Vec<f64>)> {
    if items.is_empty() {
        return Err(arg_err!("empty batch"));
    }
    let rows = items
        .par_iter()
        .map(|item| {
            item.ids()
                .iter()
                .map(|&id| cross.forward_tokens(&item.query.tokens, &corpus.passage(id).tokens))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / items.len() as f64;
    let mut grads = vec![0.0; cross.num_params()];
    let mut total = 0.0;
    for row in &rows {
        let scores: Vec<f64> = row.iter().map(|r| r.0).collect();
        let (loss, g) = info_nce_grad(scores[0], &scores[1..])?;
        total += loss;
        for ((_, tape), gj) in row.iter().zip(g) {
            cross.backward(tape, gj * inv, &mut grads);
        }
    }
    Ok((total * inv, grads))
}

pub fn cross_scores(cross: &CrossScorer, corpus: &Corpus, query: &Query, ids: &[PassageId]) -> Result<Vec<f64>> {
    ids.iter()
        .map(|&id| Ok(cross.forward_tokens(&query.tokens, &corpus.passage(id).tokens)?.0))
        .collect()
}
