//! Losses with exact gradients, the optimizer, and the gradient checker.

mod gradcheck;
mod loss;
mod optim;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use loss::{
    align_loss, align_loss_grad, combined_loss, distill_loss, distill_loss_grad,
    distribution_audit, enable_distribution_audit, info_nce, info_nce_grad, kl_divergence,
    softmax_normalize, AuditReport, LossBreakdown, ScoreDistribution,
};
pub use optim::{AdamWConfig, OptimizerState};
