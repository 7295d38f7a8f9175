#![allow(dead_code)]

use xlr_core::corpus::CorpusConfig;
use xlr_core::encoder::EncoderConfig;
use xlr_core::generator::{CrossScorerConfig, GeneratorConfig};
use xlr_core::pipeline::{PhaseConfig, RunConfig};

/// A run small enough to finish in a second or two.
pub fn tiny_config() -> RunConfig {
    RunConfig {
        iterations: 2,
        candidate_size: 8,
        retrieval_depth: 16,
        budgets: vec![40, 100],
        corpus: CorpusConfig {
            languages: 2,
            passages: 80,
            concepts: 8,
            words_per_language: 64,
            entity_words: 12,
            filler_words: 4,
            topic_words_per_concept: 3,
            detail_words_per_passage: 3,
            min_passage_len: 12,
            max_passage_len: 20,
            max_query_len: 8,
            query_topic_words: 1,
            min_query_detail_words: 1,
            max_query_detail_words: 2,
            pretrain_samples: 40,
            train_samples: 24,
            dev_samples: 12,
            language_weights: Vec::new(),
            ..CorpusConfig::default()
        },
        encoder: EncoderConfig {
            d_model: 16,
            d_out: 16,
            shared: true,
            ..EncoderConfig::default()
        },
        generator: GeneratorConfig {
            d_model: 8,
            hidden: 8,
            ..GeneratorConfig::default()
        },
        cross_scorer: CrossScorerConfig { d_model: 8, hidden: 8 },
        warmup_pretrain: PhaseConfig::new(1e-2, 8, 20),
        warmup_target: PhaseConfig::new(1e-2, 8, 10),
        generator_qg: PhaseConfig::new(1e-2, 8, 20),
        generator_rerank: PhaseConfig::new(3e-3, 4, 5),
        cross_scorer_train: PhaseConfig::new(1e-2, 8, 20),
        iter_retriever: PhaseConfig::new(1e-3, 8, 6),
        iter_teacher: PhaseConfig::new(1e-3, 4, 4),
        ..RunConfig::default()
    }
}
