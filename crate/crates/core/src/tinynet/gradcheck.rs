//! Central finite-difference gradient checks. Only forward passes are used
//! to form the numeric side.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;

use super::{Activation, Mlp};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes whose two sides straddle a ReLU kink; the difference quotient
    /// is not a derivative there, so they are left out.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `sum(upstream * net(input))` and the on/off pattern of every hidden
/// ReLU unit.
fn weighted_output(net: &Mlp, input: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<(f64, Vec<bool>)> {
    let trace = net.forward_trace(input)?;
    let hidden = &trace.activations[1..trace.activations.len() - 1];
    let pattern = if net.hidden_activation() == Activation::Relu {
        hidden.iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect()
    } else {
        Vec::new()
    };
    Ok(((trace.output() * &upstream).sum(), pattern))
}

fn record(report: &mut GradCheckReport, analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>), eps: f64) {
    if plus.1 != minus.1 {
        report.skipped += 1;
        return;
    }
    let numeric = (plus.0 - minus.0) / (2.0 * eps);
    report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
    report.checked += 1;
}

/// Compares parameter gradients of `sum(upstream * net(input))`. With
/// `per_layer = Some(k)`, at most `k` weights and `k` biases are sampled from
/// every layer; `None` checks all parameters.
pub fn check_parameters<R: Rng + ?Sized>(
    net: &Mlp,
    input: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
    eps: f64,
    per_layer: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let trace = net.forward_trace(input)?;
    let (grads, _) = net.backward(&trace, upstream)?;
    let mut probe = net.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };

    for li in 0..net.layers().len() {
        for is_bias in [false, true] {
            let len = if is_bias { net.layers()[li].bias.len() } else { net.layers()[li].weights.len() };
            let picks: Vec<usize> = match per_layer {
                Some(k) if k < len => sample(rng, len, k).into_vec(),
                _ => (0..len).collect(),
            };
            for idx in picks {
                let analytic = if is_bias {
                    grads.layers[li].bias[idx]
                } else {
                    grads.layers[li].weights.as_slice().expect("standard layout")[idx]
                };
                let original = param(&probe, li, is_bias, idx);
                set_param(&mut probe, li, is_bias, idx, original + eps);
                let plus = weighted_output(&probe, input, upstream)?;
                set_param(&mut probe, li, is_bias, idx, original - eps);
                let minus = weighted_output(&probe, input, upstream)?;
                set_param(&mut probe, li, is_bias, idx, original);
                record(&mut report, analytic, plus, minus, eps);
            }
        }
    }
    Ok(report)
}

/// Compares the input gradient of `sum(upstream * net(input))` component
/// by component.
pub fn check_input(net: &Mlp, input: ArrayView2<f64>, upstream: ArrayView2<f64>, eps: f64) -> Result<GradCheckReport> {
    let trace = net.forward_trace(input)?;
    let analytic = net.input_gradient(&trace, upstream)?;
    let mut x: Array2<f64> = input.to_owned();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for idx in 0..x.len() {
        let original = x.as_slice().expect("owned")[idx];
        x.as_slice_mut().expect("owned")[idx] = original + eps;
        let plus = weighted_output(net, x.view(), upstream)?;
        x.as_slice_mut().expect("owned")[idx] = original - eps;
        let minus = weighted_output(net, x.view(), upstream)?;
        x.as_slice_mut().expect("owned")[idx] = original;
        let a = analytic.as_standard_layout().as_slice().expect("standard")[idx];
        record(&mut report, a, plus, minus, eps);
    }
    Ok(report)
}

fn param(net: &Mlp, layer: usize, bias: bool, idx: usize) -> f64 {
    let l = &net.layers()[layer];
    if bias {
        l.bias[idx]
    } else {
        l.weights.as_slice().expect("standard layout")[idx]
    }
}

fn set_param(net: &mut Mlp, layer: usize, bias: bool, idx: usize, v: f64) {
    let l = &mut net.layers_mut()[layer];
    if bias {
        l.bias[idx] = v;
    } else {
        l.weights.as_slice_mut().expect("standard layout")[idx] = v;
    }
}
