//! The iterative training procedure: warm-ups, query generation, alternating
//! retriever and teacher training, evaluation and persistence.

mod checkpoint;
mod config;
mod eval;
mod metrics;
pub mod objective;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{build_alignment_batch, AlignmentBatch};
use crate::corpus::{
    contains_answer, read_corpus, generate_corpus, Corpus, PassageId, Query, TrainingSample, GENERATED_ID_BASE,
};
use crate::encoder::DualEncoder;
use crate::error::{arg_err, Error, Result};
use crate::generator::{
    confidence_filter, ConditioningInput, CrossScorer, Decode, GeneratedQuery, QueryGenerator, TableSet,
};
use crate::retrieval::{build_index, mine_negatives, Index, RetrievalResult};
use crate::rng::{derive_seed, stream};
use crate::training::{LossBreakdown, OptimizerState};

pub use checkpoint::{checkpoint_load, checkpoint_save, CHECKPOINT_VERSION};
pub use config::{Ablation, DecodeMode, PhaseConfig, RunConfig, Teacher};
pub use eval::{evaluate, rerank_compare, EvalReport, LanguageRecall, RerankReport, RerankRow};
pub use metrics::{write_eval_csv, write_losses_csv, write_rerank_csv};
use objective::{ContrastItem, Distilled, GenerationItem, ObjectiveItem};

/// One logged optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: String,
    pub iteration: usize,
    pub step: u64,
    pub distill_source: f64,
    pub distill_generated: f64,
    pub alignment: f64,
    pub total: f64,
}

impl LossRecord {
    fn plain(phase: &str, iteration: usize, step: u64, loss: f64) -> Self {
        Self {
            phase: phase.to_string(),
            iteration,
            step,
            distill_source: 0.0,
            distill_generated: 0.0,
            alignment: 0.0,
            total: loss,
        }
    }

    fn breakdown(iteration: usize, step: u64, b: &LossBreakdown) -> Self {
        Self {
            phase: "iter_retriever".to_string(),
            iteration,
            step,
            distill_source: b.distill_source,
            distill_generated: b.distill_generated,
            alignment: b.alignment,
            total: b.total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterPhase {
    Retriever,
    Teacher,
}

/// Position inside an unfinished iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Cursor {
    pub phase: IterPhase,
    pub step: u64,
    /// Encoder parameters at the start of the iteration; candidate sets,
    /// teacher scores and coefficients are recomputed from them on resume.
    pub start_encoder: Vec<f64>,
    pub optimizer: OptimizerState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: RunConfig,
    pub encoder: DualEncoder,
    pub generator: QueryGenerator,
    pub cross_scorer: CrossScorer,
    /// Completed iterations.
    pub iteration: usize,
    pub index_version: u64,
    pub pool: Vec<GeneratedQuery>,
    pub cursor: Option<Cursor>,
    pub losses: Vec<LossRecord>,
    pub history: Vec<EvalReport>,
}

/// Loads the corpus file named in the config or synthesizes one.
pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    match &config.corpus_path {
        Some(p) => read_corpus(p),
        None => generate_corpus(&config.corpus, config.corpus_seed),
    }
}

/// Sample indices for `step`, walking a fresh permutation every epoch.
fn batch_indices(n: usize, batch: usize, seed: u64, tag: &str, step: u64) -> Vec<usize> {
    let start = step as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for pos in start..start + batch.min(n) {
        let epoch = pos / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream(seed, tag, epoch as u64));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[pos % n]);
    }
    out
}

/// Puts the positive into a candidate list, replacing the last entry when
/// retrieval missed it.
fn with_positive(mut ids: Vec<PassageId>, positive: PassageId, size: usize) -> Vec<PassageId> {
    ids.truncate(size);
    if !ids.contains(&positive) {
        if ids.len() == size {
            ids.pop();
        }
        ids.push(positive);
    }
    ids
}

fn check_finite(phase: &str, step: u64, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::training(phase, step as usize, format!("non-finite loss {loss}")))
    }
}

/// Scores candidate passages with whichever teacher the config selects.
pub struct TeacherScorer<'a> {
    state: &'a TrainState,
    corpus: &'a Corpus,
    tables: Option<TableSet>,
}

impl<'a> TeacherScorer<'a> {
    pub fn new(state: &'a TrainState, corpus: &'a Corpus) -> Self {
        let tables = match state.config.ablation.teacher {
            Teacher::Generator => {
                let langs: Vec<usize> = corpus.query_languages().map(|l| l.id).collect();
                Some(TableSet::full(&state.generator, &langs))
            }
            Teacher::CrossScorer => None,
        };
        Self { state, corpus, tables }
    }

    pub fn scores(&self, query: &Query, ids: &[PassageId]) -> Result<Vec<f64>> {
        match &self.tables {
            Some(t) => objective::generator_scores(&self.state.generator, t, self.corpus, query, ids),
            None => objective::cross_scores(&self.state.cross_scorer, self.corpus, query, ids),
        }
    }
}

impl TrainState {
    /// Fresh models sized for `corpus`.
    pub fn new(config: RunConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        corpus.validate()?;
        let seed = config.seed;
        let encoder = DualEncoder::new(corpus.vocab_size(), &config.encoder, derive_seed(seed, "init/encoder", 0))?;
        let generator = QueryGenerator::new(&corpus.languages, &config.generator, derive_seed(seed, "init/generator", 0))?;
        let cross_scorer =
            CrossScorer::new(corpus.vocab_size(), &config.cross_scorer, derive_seed(seed, "init/cross", 0))?;
        Ok(Self {
            config,
            encoder,
            generator,
            cross_scorer,
            iteration: 0,
            index_version: 0,
            pool: Vec::new(),
            cursor: None,
            losses: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn build_index(&self, corpus: &Corpus) -> Result<Index> {
        build_index(&self.encoder, corpus, self.config.index, self.config.seed, self.index_version)
    }

    fn search_all(&self, index: &Index, samples: &[TrainingSample], depth: usize) -> Result<Vec<RetrievalResult>> {
        index.search_many(&self.encoder, samples.iter().map(|s| &s.query).collect::<Vec<_>>(), depth)
    }

    fn mine(&self, corpus: &Corpus, samples: &[TrainingSample], n: usize) -> Result<Vec<Vec<PassageId>>> {
        let index = self.build_index(corpus)?;
        let depth = self.config.retrieval_depth.max(n);
        let results = self.search_all(&index, samples, depth)?;
        results
            .par_iter()
            .zip(samples)
            .map(|(r, s)| mine_negatives(r, corpus, &s.answer_tokens, n))
            .collect()
    }

    /// In-batch positives plus mined negatives, shared across the batch and
    /// capped at `warmup_negatives`.
    fn contrast_batch(
        &self,
        corpus: &Corpus,
        samples: &[TrainingSample],
        mined: &[Vec<PassageId>],
        idx: &[usize],
    ) -> Result<Vec<ContrastItem>> {
        let mut shared: Vec<PassageId> = Vec::new();
        for &i in idx {
            shared.push(samples[i].positive_passage_id);
        }
        for &i in idx {
            shared.extend_from_slice(&mined[i]);
        }
        let mut seen = std::collections::BTreeSet::new();
        shared.retain(|id| seen.insert(*id));
        idx.iter()
            .map(|&i| {
                let s = &samples[i];
                let mut negatives = Vec::new();
                for &id in &shared {
                    if negatives.len() >= self.config.warmup_negatives {
                        break;
                    }
                    if id != s.positive_passage_id && !contains_answer(corpus.passage(id), &s.answer_tokens)? {
                        negatives.push(id);
                    }
                }
                Ok(ContrastItem {
                    query: s.query.clone(),
                    positive: s.positive_passage_id,
                    negatives,
                })
            })
            .collect()
    }

    fn train_encoder_contrastive(&mut self, corpus: &Corpus, samples: &[TrainingSample], phase: &PhaseConfig, name: &str) -> Result<()> {
        if samples.is_empty() || phase.steps == 0 {
            return Ok(());
        }
        let mut opt = OptimizerState::new(phase.optimizer(), self.encoder.num_params(), phase.steps)?;
        let mut mined = vec![Vec::new(); samples.len()];
        for step in 0..phase.steps {
            if self.config.mined_per_sample > 0 && step % self.config.mine_refresh_steps == 0 {
                mined = self.mine(corpus, samples, self.config.mined_per_sample)?;
            }
            let idx = batch_indices(samples.len(), phase.batch_size, self.config.seed, name, step);
            let items = self.contrast_batch(corpus, samples, &mined, &idx)?;
            let (loss, grads) = objective::encoder_contrastive(&self.encoder, corpus, &items)?;
            check_finite(name, step, loss)?;
            opt.apply(name, &mut self.encoder.params, &grads)?;
            self.losses.push(LossRecord::plain(name, self.iteration, step, loss));
        }
        Ok(())
    }

    fn generation_items(&self, samples: &[TrainingSample]) -> Vec<GenerationItem> {
        samples
            .iter()
            .map(|s| GenerationItem {
                language: s.query.language,
                answer: if self.config.ablation.with_answer {
                    s.answer_tokens.clone()
                } else {
                    Vec::new()
                },
                passage: s.positive_passage_id,
                gold: s.query.tokens.clone(),
            })
            .collect()
    }

    fn train_generator_qg(&mut self, corpus: &Corpus, samples: &[TrainingSample], phase: &PhaseConfig, name: &str) -> Result<()> {
        if samples.is_empty() || phase.steps == 0 {
            return Ok(());
        }
        let items = self.generation_items(samples);
        let mut opt = OptimizerState::new(phase.optimizer(), self.generator.num_params(), phase.steps)?;
        for step in 0..phase.steps {
            let idx = batch_indices(items.len(), phase.batch_size, self.config.seed, name, step);
            let batch: Vec<GenerationItem> = idx.iter().map(|&i| items[i].clone()).collect();
            let (loss, grads) = objective::generator_generation(&self.generator, corpus, &batch)?;
            check_finite(name, step, loss)?;
            opt.apply(name, &mut self.generator.params, &grads)?;
            self.losses.push(LossRecord::plain(name, self.iteration, step, loss));
        }
        Ok(())
    }

    fn rerank_items(samples: &[TrainingSample], mined: &[Vec<PassageId>]) -> Vec<ContrastItem> {
        samples
            .iter()
            .zip(mined)
            .map(|(s, m)| ContrastItem {
                query: s.query.clone(),
                positive: s.positive_passage_id,
                negatives: m.clone(),
            })
            .collect()
    }

    /// Contrastive re-ranking training of one teacher; returns the optimizer
    /// so an interrupted phase can carry on.
    fn teacher_steps(
        &mut self,
        corpus: &Corpus,
        items: &[ContrastItem],
        teacher: Teacher,
        phase: &PhaseConfig,
        name: &str,
        opt: &mut OptimizerState,
        from: u64,
        until: u64,
    ) -> Result<()> {
        let usable: Vec<&ContrastItem> = items.iter().filter(|i| !i.negatives.is_empty()).collect();
        if usable.is_empty() {
            return Ok(());
        }
        for step in from..until {
            let idx = batch_indices(usable.len(), phase.batch_size, self.config.seed, name, step);
            let batch: Vec<ContrastItem> = idx.iter().map(|&i| usable[i].clone()).collect();
            let (loss, grads, params) = match teacher {
                Teacher::Generator => {
                    let (l, g) = objective::generator_contrastive(&self.generator, corpus, &batch)?;
                    (l, g, &mut self.generator.params)
                }
                Teacher::CrossScorer => {
                    let (l, g) = objective::cross_contrastive(&self.cross_scorer, corpus, &batch)?;
                    (l, g, &mut self.cross_scorer.params)
                }
            };
            check_finite(name, step, loss)?;
            opt.apply(name, params, &grads)?;
            self.losses.push(LossRecord::plain(name, self.iteration, step, loss));
        }
        Ok(())
    }

    fn train_teacher(&mut self, corpus: &Corpus, items: &[ContrastItem], teacher: Teacher, phase: &PhaseConfig, name: &str) -> Result<()> {
        if phase.steps == 0 {
            return Ok(());
        }
        let n = match teacher {
            Teacher::Generator => self.generator.num_params(),
            Teacher::CrossScorer => self.cross_scorer.num_params(),
        };
        let mut opt = OptimizerState::new(phase.optimizer(), n, phase.steps)?;
        self.teacher_steps(corpus, items, teacher, phase, name, &mut opt, 0, phase.steps)
    }
}

/// Trains the retriever contrastively on the pretrain split, then on the
/// target split.
pub fn warmup_dual_encoder(config: &RunConfig, corpus: &Corpus) -> Result<TrainState> {
    let mut state = TrainState::new(config.clone(), corpus)?;
    let (pre, target) = (config.warmup_pretrain.clone(), config.warmup_target.clone());
    state.train_encoder_contrastive(corpus, &corpus.pretrain, &pre, "warmup_pretrain")?;
    state.train_encoder_contrastive(corpus, &corpus.train, &target, "warmup_target")?;
    Ok(state)
}

/// Generator stage 1 (query likelihood) and stage 2 (re-ranking against
/// negatives mined with the current retriever) on `samples`; the cross
/// scorer is trained on the same negatives when it is the teacher.
pub fn warmup_generator_on(state: &mut TrainState, corpus: &Corpus, samples: &[TrainingSample]) -> Result<()> {
    let cfg = state.config.clone();
    state.train_generator_qg(corpus, samples, &cfg.generator_qg, "generator_qg")?;
    let mined = state.mine(corpus, samples, cfg.generator_negatives)?;
    let items = TrainState::rerank_items(samples, &mined);
    state.train_teacher(corpus, &items, Teacher::Generator, &cfg.generator_rerank, "generator_rerank")?;
    if cfg.ablation.teacher == Teacher::CrossScorer {
        state.train_teacher(corpus, &items, Teacher::CrossScorer, &cfg.cross_scorer_train, "cross_scorer")?;
    }
    Ok(())
}

pub fn warmup_generator(state: &mut TrainState, corpus: &Corpus) -> Result<()> {
    warmup_generator_on(state, corpus, &corpus.train)
}

/// One generated query per training sample and query language, filtered to
/// the most confident half. Stored in the state and returned.
pub fn generate_query_pool(state: &mut TrainState, corpus: &Corpus) -> Result<Vec<GeneratedQuery>> {
    let langs: Vec<usize> = corpus.query_languages().map(|l| l.id).collect();
    let n_lang = corpus.languages.len() as u64;
    let tables = TableSet::full(&state.generator, &langs);
    let with_answer = state.config.ablation.with_answer;
    let decode = match state.config.decode {
        DecodeMode::Greedy => Decode::Greedy,
        DecodeMode::Sample => Decode::Sample(derive_seed(state.config.seed, "pool/decode", 0)),
    };
    let max_len = state.config.max_query_len;
    let gen = &state.generator;
    let jobs: Vec<(usize, usize)> = (0..corpus.train.len())
        .flat_map(|i| langs.iter().map(move |&l| (i, l)))
        .collect();
    let raw = jobs
        .par_iter()
        .map(|&(i, l)| {
            let s = &corpus.train[i];
            let answer: &[u32] = if with_answer { &s.answer_tokens } else { &[] };
            let cond = ConditioningInput::new(l, answer, &corpus.passage(s.positive_passage_id).tokens);
            let id = GENERATED_ID_BASE + i as u64 * n_lang + l as u64;
            let mut g = gen.generate(&tables, &cond, decode, max_len, id)?;
            g.source_id = s.query.id;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = confidence_filter(raw, state.config.filter_scope);
    state.pool = pool.clone();
    Ok(pool)
}

/// Both warm-ups followed by query generation.
pub fn warmup(config: &RunConfig, corpus: &Corpus) -> Result<TrainState> {
    let mut state = warmup_dual_encoder(config, corpus)?;
    warmup_generator(&mut state, corpus)?;
    generate_query_pool(&mut state, corpus)?;
    Ok(state)
}

/// Everything the retriever phase of an iteration needs, derived from the
/// encoder parameters at the iteration start.
struct RetrieverPlan {
    source: Vec<Distilled>,
    generated: Vec<Vec<Distilled>>,
    batch: Option<AlignmentBatch>,
}

impl TrainState {
    fn retriever_plan(&self, corpus: &Corpus, start: &DualEncoder) -> Result<RetrieverPlan> {
        let cfg = &self.config;
        let samples = &corpus.train;
        let index = build_index(start, corpus, cfg.index, cfg.seed, self.index_version)?;
        let queries: Vec<&Query> = samples.iter().map(|s| &s.query).collect();
        let results = index.search_many(start, queries, cfg.retrieval_depth)?;
        let teacher = TeacherScorer::new(self, corpus);
        let source = results
            .par_iter()
            .zip(samples)
            .map(|(r, s)| {
                let ids = with_positive(r.top(cfg.candidate_size).to_vec(), s.positive_passage_id, cfg.candidate_size);
                Ok(Distilled {
                    teacher: teacher.scores(&s.query, &ids)?,
                    query: s.query.clone(),
                    ids,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !cfg.ablation.use_generation {
            return Ok(RetrieverPlan {
                source,
                generated: vec![Vec::new(); samples.len()],
                batch: None,
            });
        }
        let batch = build_alignment_batch(samples, &self.pool, start, &index, &cfg.alignment())?;
        batch.check_version(self.index_version)?;
        let generated = batch
            .entries
            .par_iter()
            .zip(samples)
            .map(|(e, s)| {
                e.candidates
                    .iter()
                    .map(|c| {
                        let ids = with_positive(
                            c.retrieval.top(cfg.candidate_size).to_vec(),
                            s.positive_passage_id,
                            cfg.candidate_size,
                        );
                        Ok(Distilled {
                            teacher: teacher.scores(&c.generated_query.query, &ids)?,
                            query: c.generated_query.query.clone(),
                            ids,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RetrieverPlan {
            source,
            generated,
            batch: Some(batch),
        })
    }

    fn alignment_choice(&self, plan: &RetrieverPlan, i: usize, step: u64) -> Result<Option<(usize, Vec<PassageId>, f64)>> {
        let ab = &self.config.ablation;
        let Some(batch) = &plan.batch else {
            return Ok(None);
        };
        if !ab.use_alignment {
            return Ok(None);
        }
        let entry = &batch.entries[i];
        if entry.candidates.is_empty() {
            return Ok(None);
        }
        let draw_key = ((self.iteration as u64) << 32)
            | if self.config.per_step_sampling { step } else { 0 };
        if ab.use_scheduled_sampling {
            let Some(pair) = batch.draw(i, self.config.seed, draw_key)? else {
                return Ok(None);
            };
            let gi = entry
                .candidates
                .iter()
                .position(|c| c.generated_query.query.id == pair.generated_id)
                .expect("drawn from this entry");
            Ok(Some((gi, pair.union_ids, pair.coefficient)))
        } else {
            // thresholded coefficients become 1, so the draw is uniform over
            // the candidates that pass
            let passing: Vec<usize> = (0..entry.candidates.len())
                .filter(|&k| entry.candidates[k].coefficient > 0.0)
                .collect();
            if passing.is_empty() {
                return Ok(None);
            }
            let mut rng = stream(self.config.seed, "iter/uniform_pair", draw_key ^ entry.source_id);
            let gi = passing[rng.gen_range(0..passing.len())];
            let mut union = entry.source_candidates.clone();
            for &id in entry.candidates[gi].retrieval.top(batch.candidate_size) {
                if !union.contains(&id) {
                    union.push(id);
                }
            }
            Ok(Some((gi, union, 1.0)))
        }
    }

    fn start_iteration(&mut self) -> Result<()> {
        let phase = &self.config.iter_retriever;
        self.cursor = Some(Cursor {
            phase: IterPhase::Retriever,
            step: 0,
            start_encoder: self.encoder.params.clone(),
            optimizer: OptimizerState::new(phase.optimizer(), self.encoder.num_params(), phase.steps)?,
        });
        Ok(())
    }

    fn retriever_steps(&mut self, corpus: &Corpus, budget: &mut u64) -> Result<()> {
        let mut cursor = self.cursor.take().expect("cursor set");
        let mut start = self.encoder.clone();
        start.params.clone_from(&cursor.start_encoder);
        let plan = self.retriever_plan(corpus, &start)?;
        let phase = self.config.iter_retriever.clone();
        let name = format!("iter{}/retriever", self.iteration);
        let n = corpus.train.len();
        while cursor.step < phase.steps && *budget > 0 {
            let step = cursor.step;
            let idx = batch_indices(n, phase.batch_size, self.config.seed, &name, step);
            let items = idx
                .iter()
                .map(|&i| {
                    Ok(ObjectiveItem {
                        source: plan.source[i].clone(),
                        generated: plan.generated[i].clone(),
                        align: self.alignment_choice(&plan, i, step)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (breakdown, grads) = objective::retriever_objective(&self.encoder, corpus, &items, self.config.alpha)?;
            check_finite("iter_retriever", step, breakdown.total)?;
            cursor.optimizer.apply("iter_retriever", &mut self.encoder.params, &grads)?;
            self.losses.push(LossRecord::breakdown(self.iteration, step, &breakdown));
            cursor.step += 1;
            *budget -= 1;
        }
        if cursor.step >= phase.steps {
            // refresh: later retrieval uses the updated encoder
            self.index_version += 1;
            let tp = &self.config.iter_teacher;
            let n_params = match self.config.ablation.teacher {
                Teacher::Generator => self.generator.num_params(),
                Teacher::CrossScorer => self.cross_scorer.num_params(),
            };
            cursor = Cursor {
                phase: IterPhase::Teacher,
                step: 0,
                start_encoder: Vec::new(),
                optimizer: OptimizerState::new(tp.optimizer(), n_params, tp.steps)?,
            };
        }
        self.cursor = Some(cursor);
        Ok(())
    }

    fn teacher_phase_steps(&mut self, corpus: &Corpus, budget: &mut u64) -> Result<()> {
        let mut cursor = self.cursor.take().expect("cursor set");
        let phase = self.config.iter_teacher.clone();
        let mined = self.mine(corpus, &corpus.train, self.config.generator_negatives)?;
        let items = TrainState::rerank_items(&corpus.train, &mined);
        let until = phase.steps.min(cursor.step.saturating_add(*budget));
        let name = format!("iter{}/teacher", self.iteration);
        let teacher = self.config.ablation.teacher;
        let from = cursor.step;
        self.teacher_steps(corpus, &items, teacher, &phase, &name, &mut cursor.optimizer, from, until)?;
        *budget -= until - from;
        cursor.step = until;
        if cursor.step >= phase.steps {
            self.iteration += 1;
            self.cursor = None;
        } else {
            self.cursor = Some(cursor);
        }
        Ok(())
    }

    /// Runs at most `max_steps` optimizer steps of the current iteration,
    /// starting one if none is in progress. Returns true once the iteration
    /// completes.
    pub fn advance(&mut self, corpus: &Corpus, max_steps: u64) -> Result<bool> {
        let mut budget = max_steps;
        if self.cursor.is_none() {
            self.start_iteration()?;
        }
        loop {
            match self.cursor.as_ref().map(|c| c.phase) {
                None => return Ok(true),
                Some(_) if budget == 0 => return Ok(false),
                Some(IterPhase::Retriever) => self.retriever_steps(corpus, &mut budget)?,
                Some(IterPhase::Teacher) => self.teacher_phase_steps(corpus, &mut budget)?,
            }
        }
    }
}

/// One full iteration: retriever training on the combined objective, index
/// refresh, re-retrieval and teacher fine-tuning.
pub fn run_iteration(state: &mut TrainState, corpus: &Corpus) -> Result<()> {
    state.advance(corpus, u64::MAX)?;
    Ok(())
}

/// Runs `n` iterations, evaluating on the dev split after each and
/// recording the reports; stops early when configured and the first budget
/// has not improved for `early_stop_patience` iterations.
pub fn train_iterations(state: &mut TrainState, corpus: &Corpus, n: usize) -> Result<()> {
    if state.history.is_empty() {
        let report = evaluate(state, corpus, crate::corpus::Split::Dev, &state.config.budgets.clone())?;
        state.history.push(report);
    }
    let mut best = state.history.iter().map(|r| r.headline()).fold(f64::NEG_INFINITY, f64::max);
    let mut stale = 0;
    for _ in 0..n {
        run_iteration(state, corpus)?;
        let report = evaluate(state, corpus, crate::corpus::Split::Dev, &state.config.budgets.clone())?;
        let value = report.headline();
        state.history.push(report);
        if value > best {
            best = value;
            stale = 0;
        } else {
            stale += 1;
        }
        if state.config.early_stop_patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    Ok(())
}

/// The first `ceil(fraction * n)` samples of a seeded shuffle.
pub fn subsample(samples: &[TrainingSample], fraction: f64, seed: u64) -> Result<Vec<TrainingSample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(arg_err!("fraction {fraction} outside (0, 1]"));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut stream(seed, "subsample", 0));
    let keep = ((fraction * samples.len() as f64).ceil() as usize).max(1).min(samples.len());
    let mut keep_idx = idx[..keep].to_vec();
    keep_idx.sort_unstable();
    Ok(keep_idx.into_iter().map(|i| samples[i].clone()).collect())
}
