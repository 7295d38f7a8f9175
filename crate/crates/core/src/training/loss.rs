use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::corpus::PassageId;
use crate::error::{arg_err, config_err, Error, Result};
use crate::tensor::log_sum_exp;

/// A softmax-normalized score vector over an ordered candidate list.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreDistribution {
    ids: Vec<PassageId>,
    probs: Vec<f64>,
}

static AUDIT: AtomicBool = AtomicBool::new(false);
static AUDIT_COUNT: AtomicU64 = AtomicU64::new(0);
static AUDIT_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Counters of the normalization audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub checked: u64,
    pub violations: u64,
}

/// Turns on the sweep that checks every constructed distribution sums to 1.
pub fn enable_distribution_audit() {
    AUDIT_COUNT.store(0, Ordering::SeqCst);
    AUDIT_VIOLATIONS.store(0, Ordering::SeqCst);
    AUDIT.store(true, Ordering::SeqCst);
}

pub fn distribution_audit() -> AuditReport {
    AuditReport {
        checked: AUDIT_COUNT.load(Ordering::SeqCst),
        violations: AUDIT_VIOLATIONS.load(Ordering::SeqCst),
    }
}

impl ScoreDistribution {
    /// Max-subtracted softmax of `scores`, labelled by `ids`.
    pub fn from_scores(ids: Vec<PassageId>, scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(arg_err!("softmax of an empty score vector"));
        }
        if ids.len() != scores.len() {
            return Err(arg_err!("{} ids for {} scores", ids.len(), scores.len()));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(arg_err!("non-finite score {s}"));
        }
        let lse = log_sum_exp(scores);
        let probs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
        let dist = Self { ids, probs };
        if AUDIT.load(Ordering::Relaxed) {
            AUDIT_COUNT.fetch_add(1, Ordering::Relaxed);
            if (dist.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                AUDIT_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(dist)
    }

    pub fn ids(&self) -> &[PassageId] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Softmax over positional candidates `0..n`.
pub fn softmax_normalize(scores: &[f64]) -> Result<ScoreDistribution> {
    ScoreDistribution::from_scores((0..scores.len() as PassageId).collect(), scores)
}

/// Contrastive loss of a positive against negatives, with the gradient with
/// respect to `[pos, negs...]`.
pub fn info_nce_grad(pos_score: f64, neg_scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !pos_score.is_finite() || neg_scores.iter().any(|s| !s.is_finite()) {
        return Err(arg_err!("non-finite score in contrastive loss"));
    }
    let mut all = Vec::with_capacity(neg_scores.len() + 1);
    all.push(pos_score);
    all.extend_from_slice(neg_scores);
    let lse = log_sum_exp(&all);
    let loss = (lse - pos_score).max(0.0);
    let mut grad: Vec<f64> = all.iter().map(|s| (s - lse).exp()).collect();
    grad[0] -= 1.0;
    Ok((loss, grad))
}

pub fn info_nce(pos_score: f64, neg_scores: &[f64]) -> Result<f64> {
    Ok(info_nce_grad(pos_score, neg_scores)?.0)
}

/// `sum_i t_i ln(t_i / s_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(target: &ScoreDistribution, student: &ScoreDistribution) -> Result<f64> {
    if target.ids != student.ids {
        return Err(arg_err!("candidate lists differ between distributions"));
    }
    let mut kl = 0.0;
    for (i, (&t, &s)) in target.probs.iter().zip(&student.probs).enumerate() {
        if t == 0.0 {
            continue;
        }
        if s == 0.0 {
            return Err(Error::Divergence(format!(
                "target mass {t} on candidate {} where the student has none",
                target.ids[i]
            )));
        }
        kl += t * (t / s).ln();
    }
    Ok(kl.max(0.0))
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(arg_err!("score vectors of length {} and {}", a.len(), b.len()));
    }
    Ok(())
}

/// `KL(softmax(teacher) || softmax(student))` and its gradient with respect
/// to the student scores. The teacher side is a constant.
pub fn distill_loss_grad(teacher_scores: &[f64], student_scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_same_len(teacher_scores, student_scores)?;
    let t = softmax_normalize(teacher_scores)?;
    let s = softmax_normalize(student_scores)?;
    let loss = kl_divergence(&t, &s)?;
    let grad = s.probs.iter().zip(&t.probs).map(|(s, t)| s - t).collect();
    Ok((loss, grad))
}

pub fn distill_loss(teacher_scores: &[f64], student_scores: &[f64]) -> Result<f64> {
    Ok(distill_loss_grad(teacher_scores, student_scores)?.0)
}

/// `c' * KL(source || generated)` over a shared candidate union.
pub fn align_loss(
    source: &ScoreDistribution,
    generated: &ScoreDistribution,
    c_prime: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&c_prime) {
        return Err(arg_err!("coefficient {c_prime} outside [0, 1]"));
    }
    if c_prime == 0.0 {
        return Ok(0.0);
    }
    Ok(c_prime * kl_divergence(source, generated)?)
}

/// Alignment loss from raw scores over the union, with the gradient with
/// respect to the generated-query scores (the source side is detached).
pub fn align_loss_grad(
    ids: &[PassageId],
    source_scores: &[f64],
    generated_scores: &[f64],
    c_prime: f64,
) -> Result<(f64, Vec<f64>)> {
    check_same_len(source_scores, generated_scores)?;
    let src = ScoreDistribution::from_scores(ids.to_vec(), source_scores)?;
    let gen = ScoreDistribution::from_scores(ids.to_vec(), generated_scores)?;
    let loss = align_loss(&src, &gen, c_prime)?;
    let grad = gen
        .probs
        .iter()
        .zip(&src.probs)
        .map(|(g, s)| c_prime * (g - s))
        .collect();
    Ok((loss, grad))
}

/// The three components of the retriever objective and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub distill_source: f64,
    pub distill_generated: f64,
    pub alignment: f64,
    pub alpha: f64,
    pub total: f64,
}

pub fn combined_loss(
    distill_source: f64,
    distill_generated: f64,
    alignment: f64,
    alpha: f64,
) -> Result<LossBreakdown> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(config_err!("alignment weight must be a finite nonnegative number, got {alpha}"));
    }
    Ok(LossBreakdown {
        distill_source,
        distill_generated,
        alignment,
        alpha,
        total: distill_source + distill_generated + alpha * alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn softmax_hand_values() {
        let d = softmax_normalize(&[3.0; 4]).unwrap();
        assert!(d.probs().iter().all(|p| (p - 0.25).abs() < 1e-12));
        let d = softmax_normalize(&[0.0, 2f64.ln(), 4f64.ln()]).unwrap();
        for (p, want) in d.probs().iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((p - want).abs() < 1e-12);
        }
        assert!(softmax_normalize(&[]).is_err());
        assert!(softmax_normalize(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn info_nce_hand_values() {
        assert!((info_nce(0.5, &[0.5; 3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let want = (1.0 + 2.0 / E).ln();
        assert!((info_nce(1.0, &[0.0, 0.0]).unwrap() - want).abs() < 1e-12);
        assert!(info_nce(200.0, &[0.0, 0.0]).unwrap() < 1e-80);
        assert_eq!(info_nce(1.0, &[]).unwrap(), 0.0);
        assert!(info_nce(f64::INFINITY, &[0.0]).is_err());
    }

    #[test]
    fn kl_hand_values() {
        let t = ScoreDistribution::from_scores(vec![1, 2], &[0.0, 0.0]).unwrap();
        let s = ScoreDistribution::from_scores(vec![1, 2], &[0.0, 3f64.ln()]).unwrap();
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&t, &s).unwrap() - want).abs() < 1e-12);
        assert_eq!(kl_divergence(&t, &t).unwrap(), 0.0);
        let other = ScoreDistribution::from_scores(vec![1, 3], &[0.0, 0.0]).unwrap();
        assert!(matches!(kl_divergence(&t, &other), Err(Error::Argument(_))));
    }

    #[test]
    fn kl_reports_divergence_on_zero_student_mass() {
        let t = ScoreDistribution::from_scores(vec![0, 1], &[0.0, 0.0]).unwrap();
        let s = ScoreDistribution::from_scores(vec![0, 1], &[0.0, -1e6]).unwrap();
        assert!(matches!(kl_divergence(&t, &s), Err(Error::Divergence(_))));
    }

    #[test]
    fn distill_hand_values() {
        assert_eq!(distill_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let a = E / (E + 1.0);
        let b = 1.0 / (E + 1.0);
        let want = a * (a / b).ln() + b * (b / a).ln();
        let got = distill_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((got - want).abs() < 1e-12);
        // one-directional KL: (a - b) * ln(a / b) with ln(a / b) = 1
        assert!((got - (a - b)).abs() < 1e-12);
        assert!((got - 0.462_117_157_3).abs() < 1e-9);
    }

    #[test]
    fn align_hand_values() {
        let src = ScoreDistribution::from_scores(vec![0, 1], &[1.0, 0.0]).unwrap();
        let gen = ScoreDistribution::from_scores(vec![0, 1], &[0.0, 1.0]).unwrap();
        assert_eq!(align_loss(&src, &gen, 0.0).unwrap(), 0.0);
        assert_eq!(align_loss(&src, &src, 0.7).unwrap(), 0.0);
        let full = distill_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((align_loss(&src, &gen, 0.5).unwrap() - 0.5 * full).abs() < 1e-12);
        assert!((align_loss(&src, &gen, 0.5).unwrap() - 0.231_058_578_6).abs() < 1e-9);
        assert!(align_loss(&src, &gen, 1.5).is_err());
    }

    #[test]
    fn combined_hand_values() {
        assert_eq!(combined_loss(1.0, 2.0, 4.0, 0.5).unwrap().total, 5.0);
        assert_eq!(combined_loss(1.0, 2.0, 4.0, 0.0).unwrap().total, 3.0);
        assert_eq!(combined_loss(0.0, 0.0, 0.0, 0.5).unwrap().total, 0.0);
        assert!(matches!(
            combined_loss(1.0, 1.0, 1.0, -0.1),
            Err(Error::Config(_))
        ));
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..20.0, n)
    }

    proptest! {
        #[test]
        fn distributions_sum_to_one(s in prop::collection::vec(-500.0f64..500.0, 1..64)) {
            let d = softmax_normalize(&s).unwrap();
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(s in dist(8), c in -100.0f64..100.0) {
            let a = softmax_normalize(&s).unwrap();
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            let b = softmax_normalize(&shifted).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_nonnegative((t, s) in (dist(6), dist(6))) {
            let t = softmax_normalize(&t).unwrap();
            let s = softmax_normalize(&s).unwrap();
            prop_assert!(kl_divergence(&t, &s).unwrap() >= 0.0);
        }

        #[test]
        fn distill_shift_invariant((t, s) in (dist(6), dist(6)), c in -50.0f64..50.0) {
            let base = distill_loss(&t, &s).unwrap();
            let s2: Vec<f64> = s.iter().map(|x| x + c).collect();
            let t2: Vec<f64> = t.iter().map(|x| x - c).collect();
            prop_assert!((distill_loss(&t, &s2).unwrap() - base).abs() < 1e-12 * base.max(1.0) * 100.0);
            prop_assert!((distill_loss(&t2, &s).unwrap() - base).abs() < 1e-12 * base.max(1.0) * 100.0);
        }

        #[test]
        fn distill_decreases_toward_teacher((t, s) in (dist(5), dist(5)), lam in 0.05f64..0.95) {
            // moving the student part of the way toward the teacher lowers the loss
            let base = distill_loss(&t, &s).unwrap();
            prop_assume!(base > 1e-6);
            let moved: Vec<f64> = s.iter().zip(&t).map(|(s, t)| s + lam * (t - s)).collect();
            prop_assert!(distill_loss(&t, &moved).unwrap() < base);
        }
    }
}
