//! The dual-encoder retriever.
//!
//! Each tower mean-pools token embeddings and applies a linear projection;
//! relevance is the dot product of the two tower outputs. Gradients are
//! computed by hand from a [`EncodeTape`] that caches the pooled mean and the
//! projected output of one forward pass.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, Query, TokenId};
use crate::error::{arg_err, config_err, Result};
use crate::rng::stream;
use crate::tensor::{dot, matvec, matvec_t_acc, outer_acc, Layout, Seg};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_out: usize,
    /// Query and passage towers share one embedding table and projection.
    pub shared: bool,
    pub projection_noise: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_out: 32,
            shared: false,
            projection_noise: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tower {
    Query,
    Passage,
}

/// A tower output.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder {
    vocab: usize,
    d_model: usize,
    d_out: usize,
    shared: bool,
    layout: Layout,
    pub params: Vec<f64>,
    q_embed: Seg,
    q_proj: Seg,
    p_embed: Seg,
    p_proj: Seg,
}

/// Cached intermediates of one tower forward pass.
#[derive(Clone, Debug)]
pub struct EncodeTape {
    pub tower: Tower,
    pub tokens: Vec<TokenId>,
    pub pooled: Vec<f64>,
    pub output: Embedding,
}

#[derive(Clone, Debug)]
pub struct PairTape {
    pub query: EncodeTape,
    pub passage: EncodeTape,
}

impl DualEncoder {
    pub fn new(vocab: usize, config: &EncoderConfig, seed: u64) -> Result<Self> {
        if vocab == 0 || config.d_model == 0 || config.d_out == 0 {
            return Err(config_err!("encoder dimensions must be positive"));
        }
        let mut layout = Layout::default();
        let q_embed = layout.push("query_embed", vocab, config.d_model);
        let q_proj = layout.push("query_proj", config.d_out, config.d_model);
        let (p_embed, p_proj) = if config.shared {
            (q_embed, q_proj)
        } else {
            (
                layout.push("passage_embed", vocab, config.d_model),
                layout.push("passage_proj", config.d_out, config.d_model),
            )
        };
        let mut params = vec![0.0; layout.total()];
        let mut rng = stream(seed, "encoder/init", 0);
        let a = 1.0 / (config.d_model as f64).sqrt();
        let mut init_embed = |seg: Seg, params: &mut [f64]| {
            for x in seg.of_mut(params) {
                *x = rng.gen_range(-a..a);
            }
        };
        init_embed(q_embed, &mut params);
        if !config.shared {
            init_embed(p_embed, &mut params);
        }
        let mut rng = stream(seed, "encoder/proj", 0);
        for proj in [q_proj, p_proj] {
            for r in 0..config.d_out {
                for c in 0..config.d_model {
                    let eye = if r == c { 1.0 } else { 0.0 };
                    params[proj.row_range(r).start + c] =
                        eye + config.projection_noise * rng.gen_range(-1.0..1.0);
                }
            }
            if config.shared {
                break;
            }
        }
        Ok(Self {
            vocab,
            d_model: config.d_model,
            d_out: config.d_out,
            shared: config.shared,
            layout,
            params,
            q_embed,
            q_proj,
            p_embed,
            p_proj,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn segs(&self, tower: Tower) -> (Seg, Seg) {
        match tower {
            Tower::Query => (self.q_embed, self.q_proj),
            Tower::Passage => (self.p_embed, self.p_proj),
        }
    }

    /// Segments for a tower, for tests that hand-set parameters.
    pub fn tower_segments(&self, tower: Tower) -> (Seg, Seg) {
        self.segs(tower)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(arg_err!("cannot encode an empty token sequence"));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(arg_err!("token {t} outside vocab of {}", self.vocab));
        }
        Ok(())
    }

    pub fn encode_tokens(&self, tower: Tower, tokens: &[TokenId]) -> Result<Embedding> {
        Ok(self.encode_with_tape(tower, tokens)?.output)
    }

    pub fn encode_with_tape(&self, tower: Tower, tokens: &[TokenId]) -> Result<EncodeTape> {
        self.check_tokens(tokens)?;
        let (embed, proj) = self.segs(tower);
        let mut pooled = vec![0.0; self.d_model];
        for &t in tokens {
            for (acc, x) in pooled.iter_mut().zip(embed.row(&self.params, t as usize)) {
                *acc += x;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        pooled.iter_mut().for_each(|x| *x *= inv);
        let mut out = vec![0.0; self.d_out];
        matvec(proj.of(&self.params), &pooled, &mut out);
        Ok(EncodeTape {
            tower,
            tokens: tokens.to_vec(),
            pooled,
            output: Embedding(out),
        })
    }

    pub fn encode_query(&self, q: &Query) -> Result<Embedding> {
        self.encode_tokens(Tower::Query, &q.tokens)
    }

    pub fn encode_passage(&self, p: &Passage) -> Result<Embedding> {
        self.encode_tokens(Tower::Passage, &p.tokens)
    }

    pub fn score(&self, q: &Query, p: &Passage) -> Result<f64> {
        Ok(self.encode_query(q)?.dot(&self.encode_passage(p)?))
    }

    pub fn forward_with_tape(&self, q: &Query, p: &Passage) -> Result<(f64, PairTape)> {
        let query = self.encode_with_tape(Tower::Query, &q.tokens)?;
        let passage = self.encode_with_tape(Tower::Passage, &p.tokens)?;
        let score = query.output.dot(&passage.output);
        Ok((score, PairTape { query, passage }))
    }

    /// Accumulates into `grads` the parameter gradient of a scalar whose
    /// derivative with respect to the tape's output is `d_output`.
    pub fn backward(&self, tape: &EncodeTape, d_output: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let (embed, proj) = self.segs(tape.tower);
        outer_acc(d_output, &tape.pooled, proj.of_mut(grads));
        let mut d_pooled = vec![0.0; self.d_model];
        matvec_t_acc(proj.of(&self.params), d_output, &mut d_pooled);
        let inv = 1.0 / tape.tokens.len() as f64;
        for &t in &tape.tokens {
            for (g, d) in embed.row_mut(grads, t as usize).iter_mut().zip(&d_pooled) {
                *g += d * inv;
            }
        }
    }

    /// Backpropagates `d_score` (the derivative of a loss with respect to the
    /// pair score) through both towers.
    pub fn backward_pair(&self, tape: &PairTape, d_score: f64, grads: &mut [f64]) {
        let dq: Vec<f64> = tape.passage.output.0.iter().map(|x| d_score * x).collect();
        let dp: Vec<f64> = tape.query.output.0.iter().map(|x| d_score * x).collect();
        self.backward(&tape.query, &dq, grads);
        self.backward(&tape.passage, &dp, grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn tiny(shared: bool) -> DualEncoder {
        let cfg = EncoderConfig {
            d_model: 2,
            d_out: 2,
            shared,
            projection_noise: 0.0,
        };
        DualEncoder::new(4, &cfg, 1).unwrap()
    }

    fn query(tokens: &[u32]) -> Query {
        Query {
            id: 0,
            language: 1,
            tokens: tokens.to_vec(),
            origin: Origin::Source,
        }
    }

    fn passage(tokens: &[u32]) -> Passage {
        Passage {
            id: 0,
            tokens: tokens.to_vec(),
            answer_span: None,
        }
    }

    fn set(m: &mut DualEncoder, seg: Seg, values: &[f64]) {
        seg.of_mut(&mut m.params).copy_from_slice(values);
    }

    #[test]
    fn single_token_is_projected_row() {
        let m = tiny(false);
        let (embed, _) = m.segs(Tower::Query);
        let e = m.encode_query(&query(&[2])).unwrap();
        // identity projection with zero noise
        assert_eq!(e.0, embed.row(&m.params, 2));
        let rep = m.encode_query(&query(&[2, 2])).unwrap();
        assert_eq!(rep, e);
    }

    #[test]
    fn hand_computed_two_token_query() {
        let mut m = tiny(false);
        let (embed, proj) = m.segs(Tower::Query);
        set(&mut m, embed, &[1.0, 0.0, 0.0, 2.0, 3.0, 1.0, 0.0, 0.0]);
        set(&mut m, proj, &[1.0, 1.0, 0.0, 2.0]);
        // mean of rows 0 and 2 = (2, 0.5); W = [[1,1],[0,2]] -> (2.5, 1.0)
        let e = m.encode_query(&query(&[0, 2])).unwrap();
        assert_eq!(e.0, vec![2.5, 1.0]);

        let (pe, pp) = m.segs(Tower::Passage);
        set(&mut m, pe, &[1.0, 0.0, 0.0, 2.0, 3.0, 1.0, 0.0, 0.0]);
        set(&mut m, pp, &[0.0, 1.0, 1.0, 0.0]);
        // mean of rows 1 and 2 = (1.5, 1.5); W swaps -> (1.5, 1.5)
        let ep = m.encode_passage(&passage(&[1, 2])).unwrap();
        assert_eq!(ep.0, vec![1.5, 1.5]);
        assert_eq!(m.score(&query(&[0, 2]), &passage(&[1, 2])).unwrap(), 2.5 * 1.5 + 1.5);
    }

    #[test]
    fn dot_of_hand_vectors() {
        let a = Embedding(vec![1.0, 2.0]);
        let b = Embedding(vec![3.0, -1.0]);
        assert_eq!(a.dot(&b), 1.0);
    }

    #[test]
    fn zero_query_scores_zero() {
        let mut m = tiny(false);
        let (_, proj) = m.segs(Tower::Query);
        set(&mut m, proj, &[0.0; 4]);
        for p in [&[0u32][..], &[1, 2], &[3, 3, 1]] {
            assert_eq!(m.score(&query(&[1, 3]), &passage(p)).unwrap(), 0.0);
        }
        // and the passage projection receives no gradient
        let (s, tape) = m.forward_with_tape(&query(&[1, 3]), &passage(&[2])).unwrap();
        assert_eq!(s, 0.0);
        let mut g = vec![0.0; m.num_params()];
        m.backward_pair(&tape, 1.0, &mut g);
        let (_, pp) = m.segs(Tower::Passage);
        assert!(pp.of(&g).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn errors_on_empty_and_oov() {
        let m = tiny(false);
        assert!(m.encode_query(&query(&[])).is_err());
        assert!(m.encode_query(&query(&[4])).is_err());
    }

    #[test]
    fn tape_replays_score() {
        let m = DualEncoder::new(10, &EncoderConfig::default(), 3).unwrap();
        let q = query(&[1, 5, 7]);
        let p = passage(&[2, 2, 9, 0]);
        let (s, tape) = m.forward_with_tape(&q, &p).unwrap();
        assert_eq!(s, m.score(&q, &p).unwrap());
        assert_eq!(s, tape.query.output.dot(&tape.passage.output));
    }

    #[test]
    fn shared_towers_alias() {
        let m = tiny(true);
        assert_eq!(m.segs(Tower::Query), m.segs(Tower::Passage));
        assert_eq!(m.num_params(), 4 * 2 + 4);
    }

    fn fd_check(shared: bool) {
        let mut m = DualEncoder::new(
            5,
            &EncoderConfig {
                d_model: 2,
                d_out: 2,
                shared,
                projection_noise: 0.3,
            },
            9,
        )
        .unwrap();
        let q = query(&[0, 3, 3]);
        let p = passage(&[1, 3, 4]);
        let (_, tape) = m.forward_with_tape(&q, &p).unwrap();
        let mut g = vec![0.0; m.num_params()];
        m.backward_pair(&tape, 1.0, &mut g);
        let h = 1e-4;
        for i in 0..m.num_params() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up = m.score(&q, &p).unwrap();
            m.params[i] = orig - h;
            let down = m.score(&q, &p).unwrap();
            m.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let tol = 1e-6 * fd.abs().max(1.0);
            assert!((fd - g[i]).abs() < tol, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        fd_check(false);
        fd_check(true);
    }
}
