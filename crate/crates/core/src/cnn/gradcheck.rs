use super::Model;
use crate::error::Result;

/// Smallest step tried when a perturbation crosses a ReLU or pooling kink.
const MIN_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Parameters whose every step changed the activation pattern; the loss
    /// is not differentiable there, so no comparison is made.
    pub skipped: usize,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn perturbed<M: Model>(model: &M, idx: usize, delta: f64) -> M {
    let mut m = model.clone();
    let mut k = idx;
    for s in m.param_slices_mut() {
        if k < s.len() {
            s[k] += delta;
            break;
        }
        k -= s.len();
    }
    m
}

/// Max relative error between the analytic gradient and central differences
/// over every parameter.
pub fn grad_check<M: Model>(model: &M, sample: &M::Sample, eps: f64) -> Result<f64> {
    Ok(grad_check_report(model, sample, eps)?.max_rel_error)
}

pub fn grad_check_report<M: Model>(
    model: &M,
    sample: &M::Sample,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut g = model.zeros_like();
    model.accumulate_grad(sample, &mut g)?;
    let analytic = g.flat_params();
    let base_pattern = model.activation_pattern(sample)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (idx, &ga) in analytic.iter().enumerate() {
        let mut h = eps;
        let numeric = loop {
            let plus = perturbed(model, idx, h);
            let minus = perturbed(model, idx, -h);
            let smooth = plus.activation_pattern(sample)? == base_pattern
                && minus.activation_pattern(sample)? == base_pattern;
            if smooth {
                break Some((plus.loss(sample)? - minus.loss(sample)?) / (2.0 * h));
            }
            h /= 10.0;
            if h < MIN_EPS {
                break None;
            }
        };
        let Some(gn) = numeric else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let e = rel_error(ga, gn);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_param = idx;
            report.analytic = ga;
            report.numeric = gn;
        }
    }
    Ok(report)
}
