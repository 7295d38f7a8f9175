//! The conditional query generator and the cross-scorer baseline.
//!
//! The generator is a small autoregressive model over one target-language
//! block plus an end-of-sequence symbol. Each step mixes per-word translation
//! distributions of the passage tokens:
//!
//! ```text
//! T_l[x]   = softmax_{y in block l}( out[y] . cond[x] )
//! a_{t,j}  = pool . cond[p_j] - coverage * sum_{s<t} T_l[p_j][q_s]
//! P_t(y)   = (1 - e_t) * sum_j softmax(a_t)_j * T_l[p_j][y]
//! P_t(eos) = e_t = sigmoid(w_eos . h_t + b_eos)
//! h_0      = tanh(W_in lang_l + W_ans mean(cond[answer]) + b)
//! h_{t+1}  = tanh(W_in out[q_t] + W_state h_t + b)
//! ```
//!
//! The coverage term steers attention away from passage words whose
//! translation was already emitted; the recurrent state decides when to stop.
//! Query log-likelihood (including the closing end-of-sequence step) is the
//! generator's relevance score.

mod cross;
mod filter;
mod table;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Language, Origin, Query, QueryId, TokenId, PIVOT};
use crate::error::{arg_err, config_err, Result};
use crate::rng::{stream, Rng};
use crate::tensor::{axpy, dot, matvec, matvec_t_acc, outer_acc, softmax_in_place, Layout, Seg};

pub use cross::{CrossScorer, CrossScorerConfig, CrossTape};
pub use filter::{confidence_filter, FilterScope};
pub use table::{TableSet, TranslationTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub hidden: usize,
    pub coverage_init: f64,
    /// Expected query length used to set the initial stop probability.
    pub expected_len: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            hidden: 16,
            coverage_init: 1.0,
            expected_len: 6.0,
        }
    }
}

/// The three ordered conditioning fields: target language, answer, content.
#[derive(Clone, Copy, Debug)]
pub struct ConditioningInput<'a> {
    pub target_language: usize,
    pub answer_tokens: &'a [TokenId],
    pub passage_tokens: &'a [TokenId],
}

impl<'a> ConditioningInput<'a> {
    pub fn new(target_language: usize, answer: &'a [TokenId], passage: &'a [TokenId]) -> Self {
        Self {
            target_language,
            answer_tokens: answer,
            passage_tokens: passage,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decode {
    Greedy,
    Sample(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuery {
    pub query: Query,
    /// Mean per-step log-likelihood, end-of-sequence step included.
    pub confidence: f64,
    pub accepted: bool,
    /// Sample the query was generated for.
    pub source_id: QueryId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryGenerator {
    languages: Vec<Language>,
    d: usize,
    h: usize,
    layout: Layout,
    pub params: Vec<f64>,
    cond: Seg,
    out: Seg,
    lang: Seg,
    w_in: Seg,
    w_state: Seg,
    b_state: Seg,
    w_ans: Seg,
    w_eos: Seg,
    b_eos: Seg,
    pool: Seg,
    coverage: Seg,
}

/// Per-step cache for the backward pass.
struct Step {
    alpha: Vec<f64>,
    tau: Vec<f64>,
    cov: Vec<f64>,
    mix: f64,
    eos: f64,
}

/// Cached forward pass of one (conditioning, query) pair.
pub struct GenTape {
    lang: usize,
    passage: Vec<TokenId>,
    answer: Vec<TokenId>,
    query: Vec<TokenId>,
    answer_mean: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    steps: Vec<Step>,
    pub loglik: f64,
}

/// Gradient accumulator: dense parameter gradients plus sparse gradients on
/// translation-table entries, flushed through the table softmax by
/// [`GenGrads::finish`].
pub struct GenGrads {
    pub params: Vec<f64>,
    table: Vec<Option<TableGrad>>,
}

struct TableGrad {
    dense: Vec<f64>,
    touched: Vec<bool>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Sum of per-step log-probabilities.
pub fn sequence_loglik(step_probs: &[f64]) -> f64 {
    step_probs.iter().map(|p| p.ln()).sum()
}

impl QueryGenerator {
    pub fn new(languages: &[Language], config: &GeneratorConfig, seed: u64) -> Result<Self> {
        crate::corpus::validate_languages(languages)?;
        if config.d_model == 0 || config.hidden == 0 {
            return Err(config_err!("generator dimensions must be positive"));
        }
        if !(config.expected_len > 0.0) {
            return Err(config_err!("expected query length must be positive"));
        }
        let vocab = languages.iter().map(|l| l.end()).max().unwrap() as usize;
        let pivot = languages[PIVOT].vocab_size as usize;
        let (d, h) = (config.d_model, config.hidden);
        let mut layout = Layout::default();
        let cond = layout.push("condition_embed", pivot, d);
        let out = layout.push("output_embed", vocab, d);
        let lang = layout.push("language_embed", languages.len(), d);
        let w_in = layout.push("w_input", h, d);
        let w_state = layout.push("w_state", h, h);
        let b_state = layout.push("b_state", 1, h);
        let w_ans = layout.push("w_answer", h, d);
        let w_eos = layout.push("w_eos", 1, h);
        let b_eos = layout.push("b_eos", 1, 1);
        let pool = layout.push("pool", 1, d);
        let coverage = layout.push("coverage", 1, 1);

        let mut params = vec![0.0; layout.total()];
        let mut rng = stream(seed, "generator/init", 0);
        let mut fill = |seg: Seg, scale: f64, params: &mut [f64]| {
            for x in seg.of_mut(params) {
                *x = rng.gen_range(-scale..scale);
            }
        };
        let emb = 1.0 / (d as f64).sqrt();
        fill(cond, emb, &mut params);
        fill(out, emb, &mut params);
        fill(lang, 1.0, &mut params);
        fill(w_in, 1.0 / (d as f64).sqrt(), &mut params);
        fill(w_state, 1.0 / (h as f64).sqrt(), &mut params);
        fill(w_ans, 1.0 / (d as f64).sqrt(), &mut params);
        fill(w_eos, 0.1, &mut params);
        params[b_eos.offset] = -(config.expected_len).ln();
        params[coverage.offset] = config.coverage_init;
        Ok(Self {
            languages: languages.to_vec(),
            d,
            h,
            layout,
            params,
            cond,
            out,
            lang,
            w_in,
            w_state,
            b_state,
            w_ans,
            w_eos,
            b_eos,
            pool,
            coverage,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn languages(&self) -> &[Language] {
        &self.languages
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn d_model(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn zero_grads(&self) -> GenGrads {
        GenGrads {
            params: vec![0.0; self.params.len()],
            table: (0..self.languages.len()).map(|_| None).collect(),
        }
    }

    fn block(&self, lang: usize) -> Result<&Language> {
        self.languages
            .get(lang)
            .ok_or_else(|| arg_err!("unknown target language {lang}"))
    }

    fn pivot_index(&self, x: TokenId) -> Result<usize> {
        let p = &self.languages[PIVOT];
        if p.contains(x) {
            Ok((x - p.vocab_offset) as usize)
        } else {
            Err(arg_err!("conditioning token {x} outside the pivot block"))
        }
    }

    /// Translation distribution of pivot token `x` over block `lang`.
    pub(crate) fn translation_row(&self, lang: usize, x: usize) -> Vec<f64> {
        let block = &self.languages[lang];
        let c = self.cond.row(&self.params, x);
        let mut row: Vec<f64> = (block.vocab_offset..block.end())
            .map(|y| dot(self.out.row(&self.params, y as usize), c))
            .collect();
        softmax_in_place(&mut row);
        row
    }

    fn validate(&self, cond: &ConditioningInput, query: &[TokenId]) -> Result<()> {
        let block = self.block(cond.target_language)?;
        if cond.passage_tokens.is_empty() {
            return Err(arg_err!("empty passage in conditioning"));
        }
        for &x in cond.passage_tokens.iter().chain(cond.answer_tokens) {
            self.pivot_index(x)?;
        }
        if let Some(t) = query.iter().find(|&&t| !block.contains(t)) {
            return Err(arg_err!(
                "query token {t} outside target block [{}, {})",
                block.vocab_offset,
                block.end()
            ));
        }
        Ok(())
    }

    fn initial_state(&self, lang: usize, answer_mean: &[f64]) -> Vec<f64> {
        let mut pre = self.b_state.of(&self.params).to_vec();
        let mut tmp = vec![0.0; self.h];
        matvec(self.w_in.of(&self.params), self.lang.row(&self.params, lang), &mut tmp);
        axpy(1.0, &tmp, &mut pre);
        matvec(self.w_ans.of(&self.params), answer_mean, &mut tmp);
        axpy(1.0, &tmp, &mut pre);
        pre.iter_mut().for_each(|x| *x = x.tanh());
        pre
    }

    fn next_state(&self, token: TokenId, prev: &[f64]) -> Vec<f64> {
        let mut pre = self.b_state.of(&self.params).to_vec();
        let mut tmp = vec![0.0; self.h];
        matvec(self.w_in.of(&self.params), self.out.row(&self.params, token as usize), &mut tmp);
        axpy(1.0, &tmp, &mut pre);
        matvec(self.w_state.of(&self.params), prev, &mut tmp);
        axpy(1.0, &tmp, &mut pre);
        pre.iter_mut().for_each(|x| *x = x.tanh());
        pre
    }

    fn eos_prob(&self, h: &[f64]) -> f64 {
        sigmoid(self.eos_logit(h))
    }

    fn eos_logit(&self, h: &[f64]) -> f64 {
        dot(self.w_eos.of(&self.params), h) + self.b_eos.scalar(&self.params)
    }

    fn answer_mean(&self, answer: &[TokenId]) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        if answer.is_empty() {
            return m;
        }
        for &a in answer {
            let i = self.pivot_index(a).expect("validated");
            axpy(1.0, self.cond.row(&self.params, i), &mut m);
        }
        let inv = 1.0 / answer.len() as f64;
        m.iter_mut().for_each(|x| *x *= inv);
        m
    }

    fn base_attention(&self, passage: &[TokenId]) -> Vec<f64> {
        let pool = self.pool.of(&self.params);
        passage
            .iter()
            .map(|&x| dot(pool, self.cond.row(&self.params, self.pivot_index(x).unwrap())))
            .collect()
    }

    /// Tables for every (language, passage) the caller is about to score.
    pub fn tables_for<'a>(
        &self,
        items: impl IntoIterator<Item = (usize, &'a [TokenId])>,
    ) -> TableSet {
        TableSet::build(self, items)
    }

    /// Forward pass with cached intermediates; `tables` must cover the
    /// passage words for the target language.
    pub fn forward(
        &self,
        tables: &TableSet,
        cond: &ConditioningInput,
        query: &[TokenId],
    ) -> Result<GenTape> {
        self.validate(cond, query)?;
        let lang = cond.target_language;
        let table = tables.get(lang)?;
        let offset = self.languages[lang].vocab_offset;
        let n = cond.passage_tokens.len();
        let xs: Vec<usize> = cond
            .passage_tokens
            .iter()
            .map(|&x| self.pivot_index(x).unwrap())
            .collect();
        let base = self.base_attention(cond.passage_tokens);
        let answer_mean = self.answer_mean(cond.answer_tokens);
        let gamma = self.coverage.scalar(&self.params);

        let mut hidden = vec![self.initial_state(lang, &answer_mean)];
        let mut steps = Vec::with_capacity(query.len() + 1);
        let mut cov = vec![0.0; n];
        let mut loglik = 0.0;
        for (t, &y) in query.iter().enumerate() {
            let z = self.eos_logit(&hidden[t]);
            let eos = sigmoid(z);
            let mut alpha: Vec<f64> = (0..n).map(|j| base[j] - gamma * cov[j]).collect();
            softmax_in_place(&mut alpha);
            let yl = (y - offset) as usize;
            let tau: Vec<f64> = xs.iter().map(|&x| table.row(x)?.get(yl).copied().ok_or_else(|| arg_err!("bad row"))).collect::<Result<_>>()?;
            let mix = dot(&alpha, &tau).max(f64::MIN_POSITIVE);
            loglik += -softplus(z) + mix.ln();
            steps.push(Step {
                alpha,
                tau: tau.clone(),
                cov: cov.clone(),
                mix,
                eos,
            });
            axpy(1.0, &tau, &mut cov);
            let next = self.next_state(y, &hidden[t]);
            hidden.push(next);
        }
        let z = self.eos_logit(&hidden[query.len()]);
        loglik += -softplus(-z);
        steps.push(Step {
            alpha: Vec::new(),
            tau: Vec::new(),
            cov: Vec::new(),
            mix: 1.0,
            eos: sigmoid(z),
        });
        Ok(GenTape {
            lang,
            passage: cond.passage_tokens.to_vec(),
            answer: cond.answer_tokens.to_vec(),
            query: query.to_vec(),
            answer_mean,
            hidden,
            steps,
            loglik,
        })
    }

    /// `sum_t log P(q_t | q_<t, cond)` over the query tokens and the closing
    /// end-of-sequence step.
    pub fn loglik(&self, tables: &TableSet, cond: &ConditioningInput, q: &Query) -> Result<f64> {
        if q.language != cond.target_language {
            return Err(arg_err!(
                "query language {} differs from conditioning language {}",
                q.language,
                cond.target_language
            ));
        }
        Ok(self.forward(tables, cond, &q.tokens)?.loglik)
    }

    /// Convenience wrapper that builds its own tables.
    pub fn qg_loglik(&self, cond: &ConditioningInput, q: &Query) -> Result<f64> {
        let tables = self.tables_for([(cond.target_language, cond.passage_tokens)]);
        self.loglik(&tables, cond, q)
    }

    /// Mean negative log-likelihood per scored step.
    pub fn generation_loss(&self, tables: &TableSet, cond: &ConditioningInput, gold: &Query) -> Result<f64> {
        if gold.tokens.is_empty() {
            return Err(arg_err!("empty gold query"));
        }
        Ok(-self.loglik(tables, cond, gold)? / scored_steps(gold.tokens.len()) as f64)
    }

    pub fn qg_generation_loss(&self, cond: &ConditioningInput, gold: &Query) -> Result<f64> {
        let tables = self.tables_for([(cond.target_language, cond.passage_tokens)]);
        self.generation_loss(&tables, cond, gold)
    }

    /// Next-step distribution over `[block tokens..., eos]` after `prefix`.
    pub fn step_distribution(
        &self,
        tables: &TableSet,
        cond: &ConditioningInput,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>> {
        self.validate(cond, prefix)?;
        let mut state = DecodeState::start(self, tables, cond)?;
        for &y in prefix {
            state.advance(self, y);
        }
        Ok(state.distribution(self))
    }

    pub fn generate(
        &self,
        tables: &TableSet,
        cond: &ConditioningInput,
        decode: Decode,
        max_len: usize,
        id: QueryId,
    ) -> Result<GeneratedQuery> {
        self.validate(cond, &[])?;
        let mut rng: Option<Rng> = match decode {
            Decode::Greedy => None,
            Decode::Sample(seed) => Some(stream(seed, "generator/sample", id)),
        };
        let mut state = DecodeState::start(self, tables, cond)?;
        let mut tokens = Vec::new();
        while tokens.len() < max_len {
            let dist = state.distribution(self);
            let pick = match rng.as_mut() {
                None => argmax(&dist),
                Some(r) => sample_index(&dist, r),
            };
            if pick == dist.len() - 1 {
                break;
            }
            let y = state.offset + pick as TokenId;
            tokens.push(y);
            state.advance(self, y);
        }
        if tokens.is_empty() {
            // never emit an empty query; take the best non-stop token instead
            let dist = state.distribution(self);
            let pick = argmax(&dist[..dist.len() - 1]);
            tokens.push(state.offset + pick as TokenId);
        }
        let query = Query {
            id,
            language: cond.target_language,
            tokens,
            origin: Origin::Generated,
        };
        let loglik = self.loglik(tables, cond, &query)?;
        Ok(GeneratedQuery {
            confidence: loglik / scored_steps(query.tokens.len()) as f64,
            query,
            accepted: false,
            source_id: 0,
        })
    }

    /// Accumulates `weight * d loglik / d params` into `grads`.
    pub fn backward(&self, tape: &GenTape, weight: f64, grads: &mut GenGrads) {
        let p = &self.params;
        let g = &mut grads.params;
        let n = tape.passage.len();
        let xs: Vec<usize> = tape
            .passage
            .iter()
            .map(|&x| self.pivot_index(x).unwrap())
            .collect();
        let offset = self.languages[tape.lang].vocab_offset;
        let block = self.languages[tape.lang].vocab_size as usize;
        let pivot = self.languages[PIVOT].vocab_size as usize;
        let tg = grads.table[tape.lang].get_or_insert_with(|| TableGrad {
            dense: vec![0.0; pivot * block],
            touched: vec![false; pivot],
        });
        let gamma = self.coverage.scalar(p);
        let tlen = tape.query.len();

        let mut d_hidden: Vec<Vec<f64>> = vec![vec![0.0; self.h]; tlen + 1];
        let mut d_cov_later = vec![0.0; n];
        let mut d_base = vec![0.0; n];
        let mut d_gamma = 0.0;

        for t in (0..=tlen).rev() {
            let step = &tape.steps[t];
            let h = &tape.hidden[t];
            // stop gate
            let dz = if t == tlen { 1.0 - step.eos } else { -step.eos } * weight;
            axpy(dz, h, self.w_eos.of_mut(g));
            g[self.b_eos.offset] += dz;
            axpy(dz, self.w_eos.of(p), &mut d_hidden[t]);
            if t == tlen {
                continue;
            }
            // mixture
            let yl = (tape.query[t] - offset) as usize;
            for j in 0..n {
                let a = step.alpha[j];
                let r = a * step.tau[j] / step.mix;
                let da = weight * (r - a);
                d_base[j] += da;
                d_gamma -= da * step.cov[j];
                let d_tau = weight * a / step.mix + d_cov_later[j];
                tg.dense[xs[j] * block + yl] += d_tau;
                tg.touched[xs[j]] = true;
                d_cov_later[j] -= gamma * da;
            }
        }
        g[self.coverage.offset] += d_gamma;
        for j in 0..n {
            axpy(d_base[j], self.cond.row(p, xs[j]), self.pool.of_mut(g));
            let pool = self.pool.of(p).to_vec();
            axpy(d_base[j], &pool, self.cond.row_mut(g, xs[j]));
        }

        // recurrence, newest state first
        let mut carry = vec![0.0; self.h];
        for t in (0..=tlen).rev() {
            let mut dh = d_hidden[t].clone();
            axpy(1.0, &carry, &mut dh);
            let h = &tape.hidden[t];
            let dpre: Vec<f64> = dh.iter().zip(h).map(|(d, h)| d * (1.0 - h * h)).collect();
            axpy(1.0, &dpre, self.b_state.of_mut(g));
            if t == 0 {
                let lang_row = self.lang.row(p, tape.lang).to_vec();
                outer_acc(&dpre, &lang_row, self.w_in.of_mut(g));
                matvec_t_acc(self.w_in.of(p), &dpre, self.lang.row_mut(g, tape.lang));
                outer_acc(&dpre, &tape.answer_mean, self.w_ans.of_mut(g));
                if !tape.answer.is_empty() {
                    let mut d_mean = vec![0.0; self.d];
                    matvec_t_acc(self.w_ans.of(p), &dpre, &mut d_mean);
                    let inv = 1.0 / tape.answer.len() as f64;
                    for &a in &tape.answer {
                        let i = self.pivot_index(a).unwrap();
                        axpy(inv, &d_mean, self.cond.row_mut(g, i));
                    }
                }
            } else {
                let y = tape.query[t - 1] as usize;
                let x_row = self.out.row(p, y).to_vec();
                outer_acc(&dpre, &x_row, self.w_in.of_mut(g));
                matvec_t_acc(self.w_in.of(p), &dpre, self.out.row_mut(g, y));
                outer_acc(&dpre, &tape.hidden[t - 1], self.w_state.of_mut(g));
                let mut next = vec![0.0; self.h];
                matvec_t_acc(self.w_state.of(p), &dpre, &mut next);
                carry = next;
            }
        }
    }
}

impl GenGrads {
    /// Pushes the accumulated table gradients through the translation
    /// softmax into the output and condition embeddings.
    pub fn finish(mut self, model: &QueryGenerator, tables: &TableSet) -> Vec<f64> {
        let pivot = model.languages[PIVOT].vocab_size as usize;
        for (lang, tg) in self.table.iter().enumerate() {
            let Some(tg) = tg else { continue };
            let block = &model.languages[lang];
            let bsize = block.vocab_size as usize;
            let table = tables.get(lang).expect("tables used in forward");
            for x in 0..pivot {
                if !tg.touched[x] {
                    continue;
                }
                let row = table.row(x).expect("row used in forward");
                let gx = &tg.dense[x * bsize..(x + 1) * bsize];
                let s: f64 = row.iter().zip(gx).map(|(t, g)| t * g).sum();
                let c_row = model.cond.row(&model.params, x).to_vec();
                let mut d_c = vec![0.0; model.d];
                for yl in 0..bsize {
                    let dl = row[yl] * (gx[yl] - s);
                    if dl == 0.0 {
                        continue;
                    }
                    let y = block.vocab_offset as usize + yl;
                    axpy(dl, &c_row, model.out.row_mut(&mut self.params, y));
                    axpy(dl, model.out.row(&model.params, y), &mut d_c);
                }
                axpy(1.0, &d_c, model.cond.row_mut(&mut self.params, x));
            }
        }
        self.params
    }
}

/// Scored steps for a query of `len` tokens: the tokens plus the stop step.
pub fn scored_steps(len: usize) -> usize {
    len + 1
}

struct DecodeState<'a> {
    table: &'a TranslationTable,
    xs: Vec<usize>,
    base: Vec<f64>,
    cov: Vec<f64>,
    hidden: Vec<f64>,
    offset: TokenId,
    block: usize,
    gamma: f64,
}

impl<'a> DecodeState<'a> {
    fn start(model: &QueryGenerator, tables: &'a TableSet, cond: &ConditioningInput) -> Result<Self> {
        let lang = cond.target_language;
        let table = tables.get(lang)?;
        let xs: Vec<usize> = cond
            .passage_tokens
            .iter()
            .map(|&x| model.pivot_index(x))
            .collect::<Result<_>>()?;
        for &x in &xs {
            table.row(x)?;
        }
        let answer_mean = model.answer_mean(cond.answer_tokens);
        Ok(Self {
            table,
            base: model.base_attention(cond.passage_tokens),
            cov: vec![0.0; xs.len()],
            xs,
            hidden: model.initial_state(lang, &answer_mean),
            offset: model.languages[lang].vocab_offset,
            block: model.languages[lang].vocab_size as usize,
            gamma: model.coverage.scalar(&model.params),
        })
    }

    fn distribution(&self, model: &QueryGenerator) -> Vec<f64> {
        let eos = model.eos_prob(&self.hidden);
        let mut alpha: Vec<f64> = self
            .base
            .iter()
            .zip(&self.cov)
            .map(|(b, c)| b - self.gamma * c)
            .collect();
        softmax_in_place(&mut alpha);
        let mut dist = vec![0.0; self.block + 1];
        for (a, &x) in alpha.iter().zip(&self.xs) {
            axpy(a * (1.0 - eos), self.table.row(x).unwrap(), &mut dist[..self.block]);
        }
        dist[self.block] = eos;
        dist
    }

    fn advance(&mut self, model: &QueryGenerator, y: TokenId) {
        let yl = (y - self.offset) as usize;
        for (c, &x) in self.cov.iter_mut().zip(&self.xs) {
            *c += self.table.row(x).unwrap()[yl];
        }
        self.hidden = model.next_state(y, &self.hidden);
    }
}

/// Lowest index among maxima.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &x) in p.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    p.len() - 1
}
