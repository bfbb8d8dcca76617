//! Savitzky-Golay smoothing and downsampling of training curves.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 21;
pub const DEFAULT_POLYORDER: usize = 3;
pub const DEFAULT_DOWNSAMPLE: usize = 100;

/// Pseudo-inverse of the Vandermonde matrix over window offsets
/// `0..window`, with abscissae scaled to `[-1, 1]`. Row `k` maps window
/// samples to the `k`-th polynomial coefficient.
fn fit_operator(window: usize, polyorder: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let half = (window - 1) as f64 / 2.0;
    let scale = half.max(1.0);
    let xs: Vec<f64> = (0..window).map(|j| (j as f64 - half) / scale).collect();
    let a = DMatrix::from_fn(window, polyorder + 1, |i, k| xs[i].powi(k as i32));
    let pinv = a
        .svd(true, true)
        .pseudo_inverse(1e-13)
        .map_err(|e| Error::Domain(format!("least-squares fit failed: {e}")))?;
    Ok((pinv, xs))
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Least-squares local polynomial smoothing. Interior points use the window
/// centred on them; the first and last `window / 2` points are read off
/// polynomials fitted to the first and last full windows. A series shorter
/// than the window is returned unchanged.
pub fn smooth(series: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 || window <= polyorder {
        return Err(Error::Config(format!(
            "smoothing needs an odd window above the polynomial order (got {window}, {polyorder})"
        )));
    }
    if series.len() < window {
        warn!("series of {} points is shorter than the smoothing window {window}; left as is", series.len());
        return Ok(series.to_vec());
    }
    let (pinv, xs) = fit_operator(window, polyorder)?;
    let coeffs_at = |start: usize| -> Vec<f64> {
        (0..=polyorder)
            .map(|k| (0..window).map(|j| pinv[(k, j)] * series[start + j]).sum())
            .collect()
    };
    let half = window / 2;
    let n = series.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate().take(n - half).skip(half) {
        *o = (0..window).map(|j| pinv[(0, j)] * series[i - half + j]).sum();
    }
    let head = coeffs_at(0);
    let tail = coeffs_at(n - window);
    for j in 0..half {
        out[j] = eval_poly(&head, xs[j]);
        out[n - window + half + 1 + j] = eval_poly(&tail, xs[half + 1 + j]);
    }
    Ok(out)
}

/// Keeps points `0, every, 2 * every, ...`.
pub fn downsample(series: &[f64], every: usize) -> Vec<f64> {
    series.iter().step_by(every.max(1)).copied().collect()
}
