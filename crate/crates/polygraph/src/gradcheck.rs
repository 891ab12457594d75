//! Central finite-difference gradient verification.
//!
//! The checker evaluates the loss as a plain function of parameter values and
//! never touches the reverse-mode path it is checking.

use crate::tensor::Tensor;

/// |a - b| scaled by the larger magnitude, floored to avoid blowing up
/// noise-level disagreements between near-zero gradients.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Result of sweeping every parameter entry.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, entry index) of the worst disagreement.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `eval` must return the loss for the given parameter values; it is called
/// twice per entry with a single entry shifted by ±`step`.
pub fn check_gradients(
    mut eval: impl FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    grads: &[Tensor],
    step: f64,
    floor: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    for p in 0..params.len() {
        assert_eq!(params[p].shape(), grads[p].shape(), "gradient shape");
        for e in 0..params[p].data().len() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + step;
            let up = eval(&work);
            work[p].data_mut()[e] = orig - step;
            let down = eval(&work);
            work[p].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * step);
            let err = relative_error(grads[p].data()[e], fd, floor);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, e);
            }
        }
    }
    report
}
