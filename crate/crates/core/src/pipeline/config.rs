use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::corpus::CorpusConfig;
use crate::encoder::EncoderConfig;
use crate::error::{config_err, Error, Result};
use crate::generator::{CrossScorerConfig, FilterScope, GeneratorConfig};
use crate::retrieval::IndexKind;
use crate::training::AdamWConfig;

/// One optimization phase: AdamW with linear warmup and decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub warmup_proportion: f64,
    pub weight_decay: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 32,
            steps: 100,
            warmup_proportion: 0.1,
            weight_decay: 0.01,
        }
    }
}

impl PhaseConfig {
    pub fn new(learning_rate: f64, batch_size: usize, steps: u64) -> Self {
        Self {
            learning_rate,
            batch_size,
            steps,
            ..Self::default()
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            warmup_proportion: self.warmup_proportion,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("{name}: batch_size must be positive"));
        }
        self.optimizer()
            .validate()
            .map_err(|e| config_err!("{name}: {e}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Teacher {
    #[default]
    Generator,
    CrossScorer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub use_generation: bool,
    pub use_alignment: bool,
    pub use_scheduled_sampling: bool,
    pub with_answer: bool,
    pub teacher: Teacher,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_generation: true,
            use_alignment: true,
            use_scheduled_sampling: true,
            with_answer: true,
            teacher: Teacher::Generator,
        }
    }
}

impl Ablation {
    /// Short label used in reports.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if !self.use_generation {
            parts.push("no_generation");
        } else {
            if !self.use_alignment {
                parts.push("no_alignment");
            }
            if !self.use_scheduled_sampling {
                parts.push("no_sampling");
            }
        }
        if !self.with_answer {
            parts.push("no_answer");
        }
        if self.teacher == Teacher::CrossScorer {
            parts.push("cross_teacher");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, batching and sampling.
    pub seed: u64,
    /// Seeds the synthetic corpus, so training seeds can vary over one benchmark.
    pub corpus_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    pub iterations: usize,
    /// Stop iterating after this many iterations without dev improvement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_patience: Option<usize>,
    pub candidate_size: usize,
    pub retrieval_depth: usize,
    pub threshold: f64,
    pub alpha: f64,
    pub warmup_negatives: usize,
    pub generator_negatives: usize,
    /// Hard negatives mined per sample for the warm-up retriever.
    pub mined_per_sample: usize,
    pub mine_refresh_steps: u64,
    pub max_query_len: usize,
    pub budgets: Vec<usize>,
    pub filter_scope: FilterScope,
    pub decode: DecodeMode,
    /// Redraw alignment pairs every step rather than once per iteration.
    pub per_step_sampling: bool,
    pub index: IndexKind,
    pub ablation: Ablation,
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub generator: GeneratorConfig,
    pub cross_scorer: CrossScorerConfig,
    pub warmup_pretrain: PhaseConfig,
    pub warmup_target: PhaseConfig,
    pub generator_qg: PhaseConfig,
    pub generator_rerank: PhaseConfig,
    pub cross_scorer_train: PhaseConfig,
    pub iter_retriever: PhaseConfig,
    pub iter_teacher: PhaseConfig,
}

impl Default for RunConfig {
    /// Desk-scale preset.
    fn default() -> Self {
        Self {
            seed: 7,
            corpus_seed: 7,
            corpus_path: None,
            iterations: 5,
            early_stop_patience: None,
            candidate_size: 32,
            retrieval_depth: 100,
            threshold: 0.3,
            alpha: 0.5,
            warmup_negatives: 255,
            generator_negatives: 15,
            mined_per_sample: 2,
            mine_refresh_steps: 50,
            max_query_len: 32,
            budgets: vec![500, 1250],
            filter_scope: FilterScope::PerLanguage,
            decode: DecodeMode::Greedy,
            per_step_sampling: true,
            index: IndexKind::Flat,
            ablation: Ablation::default(),
            corpus: CorpusConfig::default(),
            encoder: EncoderConfig {
                d_model: 128,
                d_out: 128,
                shared: true,
                ..EncoderConfig::default()
            },
            generator: GeneratorConfig::default(),
            cross_scorer: CrossScorerConfig { d_model: 128, hidden: 64 },
            warmup_pretrain: PhaseConfig::new(1e-2, 32, 300),
            warmup_target: PhaseConfig::new(1e-2, 32, 100),
            generator_qg: PhaseConfig::new(1e-2, 16, 300),
            generator_rerank: PhaseConfig::new(3e-3, 8, 60),
            cross_scorer_train: PhaseConfig::new(1e-2, 16, 1500),
            iter_retriever: PhaseConfig::new(5e-4, 32, 50),
            iter_teacher: PhaseConfig::new(1e-3, 8, 30),
        }
    }
}

impl RunConfig {
    /// Hyperparameters as published for the full-scale system.
    pub fn paper() -> Self {
        Self {
            warmup_pretrain: PhaseConfig::new(1e-5, 128, 18_400),
            warmup_target: PhaseConfig::new(1e-5, 128, 2_000),
            generator_qg: PhaseConfig::new(1e-4, 64, 5_000),
            generator_rerank: PhaseConfig::new(1e-5, 32, 1_000),
            cross_scorer_train: PhaseConfig::new(1e-5, 32, 6_000),
            iter_retriever: PhaseConfig::new(1e-5, 64, 3_000),
            iter_teacher: PhaseConfig::new(1e-5, 32, 500),
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "paper" => Ok(Self::paper()),
            other => Err(config_err!("unknown preset {other:?} (expected desk or paper)")),
        }
    }

    /// Fields whose value differs from the published preset, as
    /// `name: published -> used` lines.
    pub fn overrides(&self) -> Vec<String> {
        let paper = toml::Value::try_from(Self::paper()).expect("config serializes");
        let mine = toml::Value::try_from(self).expect("config serializes");
        let mut out = Vec::new();
        diff("", &paper, &mine, &mut out);
        out
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            threshold: self.threshold,
            candidate_size: self.candidate_size,
            retrieval_depth: self.retrieval_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidate_size == 0 || self.retrieval_depth < self.candidate_size {
            return Err(config_err!(
                "candidate_size {} must be positive and at most retrieval_depth {}",
                self.candidate_size,
                self.retrieval_depth
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(config_err!("threshold {} outside [0, 1]", self.threshold));
        }
        if !(self.alpha >= 0.0) {
            return Err(config_err!("alpha must be nonnegative"));
        }
        if self.generator_negatives == 0 || self.max_query_len == 0 {
            return Err(config_err!("generator_negatives and max_query_len must be positive"));
        }
        if self.mine_refresh_steps == 0 {
            return Err(config_err!("mine_refresh_steps must be positive"));
        }
        for (name, p) in [
            ("warmup_pretrain", &self.warmup_pretrain),
            ("warmup_target", &self.warmup_target),
            ("generator_qg", &self.generator_qg),
            ("generator_rerank", &self.generator_rerank),
            ("cross_scorer_train", &self.cross_scorer_train),
            ("iter_retriever", &self.iter_retriever),
            ("iter_teacher", &self.iter_teacher),
        ] {
            p.validate(name)?;
        }
        if self.corpus_path.is_none() {
            self.corpus.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| config_err!("{}: {e}", path.display()))
    }
}

fn diff(prefix: &str, a: &toml::Value, b: &toml::Value, out: &mut Vec<String>) {
    match (a, b) {
        (toml::Value::Table(ta), toml::Value::Table(tb)) => {
            for (k, va) in ta {
                let name = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match tb.get(k) {
                    Some(vb) => diff(&name, va, vb, out),
                    None => out.push(format!("{name}: {va} -> (unset)")),
                }
            }
            for (k, vb) in tb {
                if !ta.contains_key(k) {
                    let name = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    out.push(format!("{name}: (unset) -> {vb}"));
                }
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} -> {b}")),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_values() {
        let p = RunConfig::paper();
        assert_eq!(p.candidate_size, 32);
        assert_eq!(p.retrieval_depth, 100);
        assert_eq!(p.iterations, 5);
        assert_eq!(p.threshold, 0.3);
        assert_eq!(p.alpha, 0.5);
        assert_eq!(p.generator_negatives, 15);
        assert_eq!(p.warmup_negatives, 255);
        assert_eq!(p.max_query_len, 32);
        assert_eq!(p.corpus.max_passage_len, 128);
        assert_eq!(p.warmup_pretrain.batch_size, 128);
        assert_eq!(p.iter_retriever.steps, 3_000);
        assert!(p.overrides().is_empty());
    }

    #[test]
    fn desk_overrides_are_listed() {
        let o = RunConfig::default().overrides();
        assert!(o.iter().any(|l| l.starts_with("warmup_pretrain.learning_rate")));
        assert!(!o.iter().any(|l| l.starts_with("threshold")));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let err = RunConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RunConfig::from_toml("[ablation]\nuse_magic = true\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let c = RunConfig::from_toml("alpha = 0.25\n[ablation]\nteacher = \"cross_scorer\"\n").unwrap();
        assert_eq!(c.alpha, 0.25);
        assert_eq!(c.ablation.teacher, Teacher::CrossScorer);
        let c = RunConfig::from_toml("index = { type = \"ivf\", n_clusters = 16, nprobe = 4 }\n").unwrap();
        assert_eq!(c.index, IndexKind::Ivf { n_clusters: 16, nprobe: 4 });
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("threshold = 1.5\n").is_err());
        assert!(RunConfig::from_toml("candidate_size = 200\n").is_err());
        assert!(RunConfig::from_toml("[iter_retriever]\nbatch_size = 0\n").is_err());
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn ablation_tags() {
        let mut a = Ablation::default();
        assert_eq!(a.tag(), "full");
        a.use_alignment = false;
        assert_eq!(a.tag(), "no_alignment");
        a.use_generation = false;
        assert_eq!(a.tag(), "no_generation");
    }
}
