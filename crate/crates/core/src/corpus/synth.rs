//! Deterministic toy corpus synthesis.
//!
//! Every language shares one word inventory. Language `l` renders word `w`
//! as token `offset_l + perm_l[w]`, with `perm_0` the identity, so the exact
//! translation between any two languages is known.
//!
//! Word ids are laid out as `[entities | fillers | content]`. Entity words
//! only ever appear inside answer spans, and every passage receives a
//! distinct ordered entity pair, so an answer is contained in exactly one
//! passage. Passages mix topic words of their latent concept, a handful of
//! passage-specific detail words, and fillers. A query picks topic and detail
//! words that occur in its passage and renders them in the query language.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, Language, Origin, Passage, Query, TrainingSample, PIVOT};
use crate::error::{config_err, Result};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Number of query (non-pivot) languages.
    pub languages: usize,
    pub passages: usize,
    pub concepts: usize,
    /// Size of each language's vocab block.
    pub words_per_language: usize,
    pub entity_words: usize,
    pub filler_words: usize,
    pub topic_words_per_concept: usize,
    pub detail_words_per_passage: usize,
    pub min_passage_len: usize,
    pub max_passage_len: usize,
    pub max_query_len: usize,
    pub query_topic_words: usize,
    pub min_query_detail_words: usize,
    pub max_query_detail_words: usize,
    /// Probability that a query word is replaced by a random content word.
    pub query_noise: f64,
    pub topic_fraction: f64,
    pub detail_fraction: f64,
    pub pretrain_samples: usize,
    pub train_samples: usize,
    pub dev_samples: usize,
    /// Relative sample share per query language; empty means uniform.
    pub language_weights: Vec<f64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            languages: 3,
            passages: 2000,
            concepts: 100,
            words_per_language: 192,
            entity_words: 48,
            filler_words: 16,
            topic_words_per_concept: 4,
            detail_words_per_passage: 4,
            min_passage_len: 64,
            max_passage_len: 128,
            max_query_len: 32,
            query_topic_words: 2,
            min_query_detail_words: 2,
            max_query_detail_words: 4,
            query_noise: 0.1,
            topic_fraction: 0.35,
            detail_fraction: 0.55,
            pretrain_samples: 2000,
            train_samples: 600,
            dev_samples: 200,
            language_weights: vec![0.5, 0.3, 0.2],
        }
    }
}

impl CorpusConfig {
    fn content_words(&self) -> usize {
        self.words_per_language
            .saturating_sub(self.entity_words + self.filler_words)
    }

    pub fn validate(&self) -> Result<()> {
        if self.passages == 0 {
            return Err(config_err!("zero passages"));
        }
        if self.languages == 0 {
            return Err(config_err!("zero query languages"));
        }
        if self.concepts == 0 {
            return Err(config_err!("zero concepts"));
        }
        if self.entity_words + self.filler_words >= self.words_per_language {
            return Err(config_err!(
                "entity and filler words leave no content words in a {}-word block",
                self.words_per_language
            ));
        }
        let pairs = self.entity_words * self.entity_words.saturating_sub(1);
        if pairs < self.passages {
            return Err(config_err!(
                "{} entity words give {pairs} unique answer spans for {} passages",
                self.entity_words,
                self.passages
            ));
        }
        let content = self.content_words();
        if self.topic_words_per_concept > content || self.detail_words_per_passage > content {
            return Err(config_err!("topic/detail sets exceed {content} content words"));
        }
        if self.min_passage_len < 3 || self.min_passage_len > self.max_passage_len {
            return Err(config_err!(
                "bad passage length bounds [{}, {}]",
                self.min_passage_len,
                self.max_passage_len
            ));
        }
        let max_q = self.query_topic_words + self.max_query_detail_words;
        if max_q == 0 || max_q > self.max_query_len {
            return Err(config_err!("query of {max_q} words exceeds max {}", self.max_query_len));
        }
        if self.min_query_detail_words > self.max_query_detail_words
            || self.max_query_detail_words > self.detail_words_per_passage
            || self.query_topic_words > self.topic_words_per_concept
        {
            return Err(config_err!("inconsistent query word counts"));
        }
        if self.train_samples + self.dev_samples > self.passages {
            return Err(config_err!(
                "{} train + {} dev samples need distinct passages but only {} exist",
                self.train_samples,
                self.dev_samples,
                self.passages
            ));
        }
        if !(0.0..=1.0).contains(&self.query_noise)
            || self.topic_fraction < 0.0
            || self.detail_fraction < 0.0
            || self.topic_fraction + self.detail_fraction > 1.0
        {
            return Err(config_err!("mixing fractions out of range"));
        }
        if !self.language_weights.is_empty() {
            if self.language_weights.len() != self.languages {
                return Err(config_err!(
                    "{} language weights for {} languages",
                    self.language_weights.len(),
                    self.languages
                ));
            }
            if self.language_weights.iter().any(|w| !(*w >= 0.0))
                || self.language_weights.iter().sum::<f64>() <= 0.0
            {
                return Err(config_err!("language weights must be nonnegative, not all zero"));
            }
        }
        Ok(())
    }
}

struct Passageplan {
    concept: usize,
    details: Vec<u32>,
}

pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let n_words = config.words_per_language;
    let content_start = (config.entity_words + config.filler_words) as u32;
    let content: Vec<u32> = (content_start..n_words as u32).collect();

    let languages: Vec<Language> = (0..=config.languages)
        .map(|id| Language {
            id,
            name: if id == PIVOT {
                "pivot".to_string()
            } else {
                format!("l{id}")
            },
            vocab_offset: (id * n_words) as u32,
            vocab_size: n_words as u32,
        })
        .collect();
    super::validate_languages(&languages)?;

    let word_maps: Vec<Vec<u32>> = (0..=config.languages)
        .map(|id| {
            let mut perm: Vec<u32> = (0..n_words as u32).collect();
            if id != PIVOT {
                perm.shuffle(&mut stream(seed, "corpus/perm", id as u64));
            }
            perm
        })
        .collect();

    let mut rng = stream(seed, "corpus/concepts", 0);
    let topics: Vec<Vec<u32>> = (0..config.concepts)
        .map(|_| {
            content
                .choose_multiple(&mut rng, config.topic_words_per_concept)
                .copied()
                .collect()
        })
        .collect();

    // distinct ordered entity pairs, shuffled
    let e = config.entity_words as u32;
    let mut spans: Vec<[u32; 2]> = (0..e)
        .flat_map(|a| (0..e).filter(move |&b| b != a).map(move |b| [a, b]))
        .collect();
    spans.shuffle(&mut stream(seed, "corpus/spans", 0));

    let mut plans = Vec::with_capacity(config.passages);
    let mut passages = Vec::with_capacity(config.passages);
    for pid in 0..config.passages {
        let mut rng = stream(seed, "corpus/passage", pid as u64);
        let concept = pid % config.concepts;
        let details: Vec<u32> = content
            .choose_multiple(&mut rng, config.detail_words_per_passage)
            .copied()
            .collect();
        let len = rng.gen_range(config.min_passage_len..=config.max_passage_len);
        let span_start = rng.gen_range(0..=len - 2);
        let mut tokens = Vec::with_capacity(len);
        let mut pos = 0;
        while tokens.len() < len {
            if pos == span_start {
                tokens.extend_from_slice(&spans[pid]);
                pos += 2;
                continue;
            }
            let u: f64 = rng.gen();
            let word = if u < config.topic_fraction {
                *topics[concept].choose(&mut rng).unwrap()
            } else if u < config.topic_fraction + config.detail_fraction {
                *details.choose(&mut rng).unwrap()
            } else {
                rng.gen_range(config.entity_words as u32..content_start)
            };
            tokens.push(word);
            pos += 1;
        }
        passages.push(Passage {
            id: pid as u32,
            tokens,
            answer_span: Some((span_start as u32, 2)),
        });
        plans.push(Passageplan { concept, details });
    }

    let mut order: Vec<u32> = (0..config.passages as u32).collect();
    order.shuffle(&mut stream(seed, "corpus/order", 0));
    let train_passages = &order[..config.train_samples];
    let dev_passages = &order[config.train_samples..config.train_samples + config.dev_samples];
    // pivot pretraining questions cover the whole collection
    let pretrain_pool = order.clone();

    let weights = if config.language_weights.is_empty() {
        vec![1.0; config.languages]
    } else {
        config.language_weights.clone()
    };
    let total_w: f64 = weights.iter().sum();

    let synth = QuerySynth {
        config,
        passages: &passages,
        plans: &plans,
        topics: &topics,
        languages: &languages,
        word_maps: &word_maps,
        content: &content,
    };

    let mut next_id = 0u64;
    let mut make_split = |tag: &str, pids: &mut dyn Iterator<Item = u32>, pivot_only: bool| {
        let mut out = Vec::new();
        for (k, pid) in pids.enumerate() {
            let mut rng = stream(seed, tag, k as u64);
            let lang = if pivot_only {
                PIVOT
            } else {
                let mut u = rng.gen::<f64>() * total_w;
                let mut chosen = config.languages;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        chosen = i + 1;
                        break;
                    }
                    u -= w;
                }
                chosen
            };
            out.push(synth.sample(pid, lang, next_id, &mut rng));
            next_id += 1;
        }
        out
    };

    let pretrain = make_split(
        "corpus/pretrain",
        &mut pretrain_pool.iter().copied().cycle().take(config.pretrain_samples),
        true,
    );
    let train = make_split("corpus/train", &mut train_passages.iter().copied(), false);
    let dev = make_split("corpus/dev", &mut dev_passages.iter().copied(), false);

    let corpus = Corpus {
        seed,
        languages,
        passages,
        pretrain,
        train,
        dev,
        max_query_len: config.max_query_len,
        max_passage_len: config.max_passage_len,
        word_maps: Some(word_maps),
    };
    Ok(corpus)
}

struct QuerySynth<'a> {
    config: &'a CorpusConfig,
    passages: &'a [Passage],
    plans: &'a [Passageplan],
    topics: &'a [Vec<u32>],
    languages: &'a [Language],
    word_maps: &'a [Vec<u32>],
    content: &'a [u32],
}

impl QuerySynth<'_> {
    fn sample(&self, pid: u32, lang: usize, id: u64, rng: &mut Rng) -> TrainingSample {
        let passage = &self.passages[pid as usize];
        let plan = &self.plans[pid as usize];
        let present = |w: &u32| passage.tokens.contains(w);

        let topic_here: Vec<u32> = self.topics[plan.concept]
            .iter()
            .copied()
            .filter(present)
            .collect();
        let detail_here: Vec<u32> = plan.details.iter().copied().filter(present).collect();

        let n_detail = rng
            .gen_range(self.config.min_query_detail_words..=self.config.max_query_detail_words)
            .min(detail_here.len());
        let mut words: Vec<u32> = topic_here
            .choose_multiple(rng, self.config.query_topic_words.min(topic_here.len()))
            .copied()
            .collect();
        words.extend(detail_here.choose_multiple(rng, n_detail).copied());
        if words.is_empty() {
            // degenerate tiny passages: fall back to any non-entity word
            let fallback = passage
                .tokens
                .iter()
                .copied()
                .find(|&w| w >= self.config.entity_words as u32)
                .unwrap_or(self.content[0]);
            words.push(fallback);
        }
        for w in words.iter_mut() {
            if rng.gen::<f64>() < self.config.query_noise {
                *w = *self.content.choose(rng).unwrap();
            }
        }
        words.shuffle(rng);

        let block = &self.languages[lang];
        let tokens = words
            .iter()
            .map(|&w| block.vocab_offset + self.word_maps[lang][w as usize])
            .collect();
        let (s, l) = passage.answer_span.expect("synthetic passages carry spans");
        TrainingSample {
            query: Query {
                id,
                language: lang,
                tokens,
                origin: Origin::Source,
            },
            positive_passage_id: pid,
            answer_tokens: passage.tokens[s as usize..(s + l) as usize].to_vec(),
            mined_negative_ids: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::contains_answer;

    fn small() -> CorpusConfig {
        CorpusConfig {
            passages: 200,
            concepts: 20,
            pretrain_samples: 50,
            train_samples: 60,
            dev_samples: 20,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_corpus(&small(), 3).unwrap();
        let b = generate_corpus(&small(), 3).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(), 4).unwrap();
        assert_ne!(a.passages, c.passages);
    }

    #[test]
    fn zero_passages_is_config_error() {
        let cfg = CorpusConfig {
            passages: 0,
            ..small()
        };
        assert!(matches!(
            generate_corpus(&cfg, 1),
            Err(crate::Error::Config(_))
        ));
        let cfg = CorpusConfig {
            languages: 0,
            language_weights: vec![],
            ..small()
        };
        assert!(matches!(
            generate_corpus(&cfg, 1),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn too_few_entities_is_config_error() {
        let cfg = CorpusConfig {
            entity_words: 10,
            ..small()
        };
        assert!(generate_corpus(&cfg, 1).is_err());
    }

    #[test]
    fn every_positive_is_the_unique_carrier_of_its_answer() {
        let cfg = CorpusConfig {
            languages: 3,
            passages: 500,
            concepts: 100,
            train_samples: 300,
            dev_samples: 100,
            pretrain_samples: 100,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg, 11).unwrap();
        c.validate().unwrap();
        for s in c.pretrain.iter().chain(&c.train).chain(&c.dev) {
            let carriers: Vec<u32> = c
                .passages
                .iter()
                .filter(|p| contains_answer(p, &s.answer_tokens).unwrap())
                .map(|p| p.id)
                .collect();
            assert_eq!(carriers, vec![s.positive_passage_id]);
        }
    }

    #[test]
    fn translation_preserves_the_positive() {
        let c = generate_corpus(&small(), 5).unwrap();
        let s = &c.train[0];
        let other = if s.query.language == 1 { 2 } else { 1 };
        let t = c.translate_query(&s.query, other).unwrap();
        assert_eq!(t.language, other);
        assert!(t.tokens.iter().all(|&tok| c.languages[other].contains(tok)));
        let back = c.translate_query(&t, s.query.language).unwrap();
        assert_eq!(back.tokens, s.query.tokens);
    }

    #[test]
    fn train_and_dev_passages_are_disjoint() {
        let c = generate_corpus(&small(), 9).unwrap();
        for d in &c.dev {
            assert!(c.train.iter().all(|t| t.positive_passage_id != d.positive_passage_id));
            assert!(c
                .pretrain
                .iter()
                .all(|t| t.positive_passage_id != d.positive_passage_id));
        }
        assert!(c.pretrain.iter().all(|s| s.query.language == PIVOT));
        assert!(c.train.iter().all(|s| s.query.language != PIVOT));
    }
}
