//! Central finite-difference verification of analytic gradients.

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub const FD_STEP: f64 = 1e-4;

/// Checks `loss_and_grad` at `params` against central differences with step
/// [`FD_STEP`]. `loss_and_grad` must be a pure function of the slice it gets.
pub fn grad_check<F>(params: &mut [f64], mut loss_and_grad: F, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_and_grad(params);
    assert_eq!(analytic.len(), params.len(), "gradient shape mismatch");
    let mut max_abs_error = 0.0f64;
    let mut worst_index = None;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        let up = loss_and_grad(params).0;
        params[i] = orig - FD_STEP;
        let down = loss_and_grad(params).0;
        params[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let err = (fd - analytic[i]).abs();
        if err > max_abs_error || err.is_nan() {
            max_abs_error = if err.is_nan() { f64::INFINITY } else { err };
            worst_index = Some(i);
        }
    }
    GradCheckReport {
        max_abs_error,
        worst_index,
        checked: params.len(),
        tolerance,
        passed: max_abs_error < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_passes_at_machine_scale() {
        let mut p = vec![0.5, -1.0, 2.0];
        let r = grad_check(&mut p, |_| (3.0, vec![0.0; 3]), 1e-12);
        assert!(r.passed);
        assert_eq!(r.max_abs_error, 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut p = vec![1.0, 2.0];
        let r = grad_check(
            &mut p,
            |x| (x[0] * x[0] + x[1], vec![2.0 * x[0], 2.0]),
            1e-5,
        );
        assert!(!r.passed);
        assert_eq!(r.worst_index, Some(1));
    }
}
