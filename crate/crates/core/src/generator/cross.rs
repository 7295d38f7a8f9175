use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, Query, TokenId};
use crate::error::{arg_err, config_err, Result};
use crate::rng::stream;
use crate::tensor::{axpy, dot, matvec, matvec_t_acc, outer_acc, Layout, Seg};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossScorerConfig {
    pub d_model: usize,
    pub hidden: usize,
}

impl Default for CrossScorerConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            hidden: 32,
        }
    }
}

/// Pair scorer over the concatenated query and passage:
/// `W . tanh(A (mean E[q] * mean E[p]) + a) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossScorer {
    vocab: usize,
    d: usize,
    k: usize,
    layout: Layout,
    pub params: Vec<f64>,
    embed: Seg,
    interact: Seg,
    interact_bias: Seg,
    readout: Seg,
    readout_bias: Seg,
}

pub struct CrossTape {
    query: Vec<TokenId>,
    passage: Vec<TokenId>,
    u: Vec<f64>,
    v: Vec<f64>,
    hidden: Vec<f64>,
}

fn mean_rows(seg: Seg, params: &[f64], tokens: &[TokenId], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for &t in tokens {
        axpy(1.0, seg.row(params, t as usize), &mut m);
    }
    let inv = 1.0 / tokens.len() as f64;
    m.iter_mut().for_each(|x| *x *= inv);
    m
}

impl CrossScorer {
    pub fn new(vocab: usize, config: &CrossScorerConfig, seed: u64) -> Result<Self> {
        if vocab == 0 || config.d_model == 0 || config.hidden == 0 {
            return Err(config_err!("cross scorer dimensions must be positive"));
        }
        let (d, k) = (config.d_model, config.hidden);
        let mut layout = Layout::default();
        let embed = layout.push("joint_embed", vocab, d);
        let interact = layout.push("interact", k, d);
        let interact_bias = layout.push("interact_bias", 1, k);
        let readout = layout.push("readout", 1, k);
        let readout_bias = layout.push("readout_bias", 1, 1);
        let mut params = vec![0.0; layout.total()];
        let mut rng = stream(seed, "cross/init", 0);
        for x in embed.of_mut(&mut params) {
            *x = rng.gen_range(-1.0..1.0);
        }
        let s = 1.0 / (d as f64).sqrt();
        for x in interact.of_mut(&mut params) {
            *x = rng.gen_range(-s..s);
        }
        let s = 1.0 / (k as f64).sqrt();
        for x in readout.of_mut(&mut params) {
            *x = rng.gen_range(-s..s);
        }
        Ok(Self {
            vocab,
            d,
            k,
            layout,
            params,
            embed,
            interact,
            interact_bias,
            readout,
            readout_bias,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self, tokens: &[TokenId], what: &str) -> Result<()> {
        if tokens.is_empty() {
            return Err(arg_err!("empty {what}"));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(arg_err!("{what} token {t} outside vocabulary of {}", self.vocab));
        }
        Ok(())
    }

    pub fn forward_tokens(&self, q: &[TokenId], p: &[TokenId]) -> Result<(f64, CrossTape)> {
        self.check(q, "query")?;
        self.check(p, "passage")?;
        let u = mean_rows(self.embed, &self.params, q, self.d);
        let v = mean_rows(self.embed, &self.params, p, self.d);
        let z: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
        let mut hidden = vec![0.0; self.k];
        matvec(self.interact.of(&self.params), &z, &mut hidden);
        for (h, b) in hidden.iter_mut().zip(self.interact_bias.of(&self.params)) {
            *h = (*h + b).tanh();
        }
        let score = dot(self.readout.of(&self.params), &hidden) + self.readout_bias.scalar(&self.params);
        Ok((
            score,
            CrossTape {
                query: q.to_vec(),
                passage: p.to_vec(),
                u,
                v,
                hidden,
            },
        ))
    }

    pub fn cross_score(&self, q: &Query, p: &Passage) -> Result<f64> {
        Ok(self.forward_tokens(&q.tokens, &p.tokens)?.0)
    }

    /// Accumulates `d_score * d score / d params` into `grads`.
    pub fn backward(&self, tape: &CrossTape, d_score: f64, grads: &mut [f64]) {
        let p = &self.params;
        axpy(d_score, &tape.hidden, self.readout.of_mut(grads));
        grads[self.readout_bias.offset] += d_score;
        let d_pre: Vec<f64> = self
            .readout
            .of(p)
            .iter()
            .zip(&tape.hidden)
            .map(|(w, h)| d_score * w * (1.0 - h * h))
            .collect();
        axpy(1.0, &d_pre, self.interact_bias.of_mut(grads));
        let z: Vec<f64> = tape.u.iter().zip(&tape.v).map(|(a, b)| a * b).collect();
        outer_acc(&d_pre, &z, self.interact.of_mut(grads));
        let mut dz = vec![0.0; self.d];
        matvec_t_acc(self.interact.of(p), &d_pre, &mut dz);
        let du: Vec<f64> = dz.iter().zip(&tape.v).map(|(g, v)| g * v).collect();
        let dv: Vec<f64> = dz.iter().zip(&tape.u).map(|(g, u)| g * u).collect();
        let inv_q = 1.0 / tape.query.len() as f64;
        for &t in &tape.query {
            axpy(inv_q, &du, self.embed.row_mut(grads, t as usize));
        }
        let inv_p = 1.0 / tape.passage.len() as f64;
        for &t in &tape.passage {
            axpy(inv_p, &dv, self.embed.row_mut(grads, t as usize));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;
    use crate::training::grad_check;

    fn tiny() -> CrossScorer {
        CrossScorer::new(
            3,
            &CrossScorerConfig {
                d_model: 2,
                hidden: 2,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn zero_readout_gives_bias() {
        let mut m = tiny();
        m.readout.of_mut(&mut m.params).fill(0.0);
        m.params[m.readout_bias.offset] = 0.7;
        for (q, p) in [(vec![0], vec![1, 2]), (vec![2, 2], vec![0])] {
            assert_eq!(m.forward_tokens(&q, &p).unwrap().0, 0.7);
        }
    }

    #[test]
    fn hand_set_two_dim_model() {
        let mut m = tiny();
        // E = [[1,0],[0,1],[1,1]], A = I, a = 0, W = (1, 2), b = 0.5
        m.embed.of_mut(&mut m.params).copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        m.interact.of_mut(&mut m.params).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        m.interact_bias.of_mut(&mut m.params).fill(0.0);
        m.readout.of_mut(&mut m.params).copy_from_slice(&[1.0, 2.0]);
        m.params[m.readout_bias.offset] = 0.5;
        // u = E[0] = (1,0); v = mean(E[1], E[2]) = (0.5, 1); z = (0.5, 0)
        let s = m.forward_tokens(&[0], &[1, 2]).unwrap().0;
        assert!((s - (0.5f64.tanh() + 0.5)).abs() < 1e-15);
        assert!((s - 0.962_117_157_1).abs() < 1e-9);
    }

    #[test]
    fn pure_and_validated() {
        let m = tiny();
        let q = Query {
            id: 0,
            language: 1,
            tokens: vec![2],
            origin: Origin::Source,
        };
        let p = Passage {
            id: 0,
            tokens: vec![0, 1],
            answer_span: None,
        };
        assert_eq!(m.cross_score(&q, &p).unwrap(), m.cross_score(&q, &p).unwrap());
        assert!(m.forward_tokens(&[], &[0]).is_err());
        assert!(m.forward_tokens(&[0], &[]).is_err());
        assert!(m.forward_tokens(&[3], &[0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = tiny();
        let mut params = m.params.clone();
        let report = grad_check(
            &mut params,
            |x| {
                let mut mm = m.clone();
                mm.params.copy_from_slice(x);
                let (s, tape) = mm.forward_tokens(&[0, 2], &[1, 2, 2]).unwrap();
                let mut g = vec![0.0; x.len()];
                mm.backward(&tape, 1.0, &mut g);
                (s, g)
            },
            1e-5,
        );
        assert!(report.passed, "{report:?}");
    }
}
