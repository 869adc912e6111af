//! Attenuation coefficient estimation by robust linear regression of the
//! log-magnitude response against frequency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRecord;

/// Bisquare tuning constant, the conventional 95%-efficiency value.
const BISQUARE_C: f64 = 4.685;
/// Maximum IRLS iterations.
const MAX_ITERATIONS: usize = 50;
/// Relative coefficient-change convergence threshold.
const CONVERGENCE_TOL: f64 = 1e-8;

/// Errors from robust regression and attenuation extraction.
#[derive(Debug, Error, PartialEq)]
pub enum AttenuationError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { got: usize, needed: usize },
    #[error("abscissa must be strictly increasing")]
    NonIncreasingAbscissa,
    #[error("sample {index} has zero magnitude")]
    ZeroMagnitudeSample { index: usize },
    #[error("weighted design became singular")]
    SingularDesign,
    #[error("no convergence after {MAX_ITERATIONS} iterations; last iterate {coefficients:?}")]
    NonConvergence { coefficients: Vec<f64> },
}

/// Attenuation coefficients together with the regression line they came from.
///
/// The conversions `a0 = -alpha0 / (20 L log10 e)` and
/// `a1 = -alpha1 / (20 L log10 e)` hold exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationCoefficients {
    /// Frequency-independent attenuation, 1/m.
    pub a0: f64,
    /// Frequency-proportional attenuation, s/m (so that `a1*f` is 1/m).
    pub a1: f64,
    /// Regression intercept, dB.
    pub alpha0: f64,
    /// Regression slope, dB/Hz.
    pub alpha1: f64,
}

impl AttenuationCoefficients {
    /// No attenuation.
    pub fn zero() -> Self {
        Self { a0: 0.0, a1: 0.0, alpha0: 0.0, alpha1: 0.0 }
    }

    /// Directly from physical coefficients, with the regression view filled
    /// in for the given maximum length.
    pub fn from_physical(a0: f64, a1: f64, max_length: f64) -> Self {
        let scale = -20.0 * max_length * std::f64::consts::LOG10_E;
        Self { a0, a1, alpha0: a0 * scale, alpha1: a1 * scale }
    }
}

/// Converts a fitted log-magnitude line into attenuation coefficients for a
/// longest path of `max_length` meters.
pub fn attenuation_from_line(alpha0: f64, alpha1: f64, max_length: f64) -> AttenuationCoefficients {
    let denom = 20.0 * max_length * std::f64::consts::LOG10_E;
    AttenuationCoefficients { a0: -alpha0 / denom, a1: -alpha1 / denom, alpha0, alpha1 }
}

/// Robust affine fit of `y` on one or more predictor columns with an implied
/// intercept. Returns `[intercept, slope_1, ..., slope_p]`.
///
/// Iteratively reweighted least squares with Tukey bisquare weights and a
/// MAD-based residual scale. On outlier-free affine data this reduces to the
/// ordinary least-squares solution.
pub fn robust_affine_fit(predictors: &[&[f64]], y: &[f64]) -> Result<Vec<f64>, AttenuationError> {
    let n = y.len();
    let p = predictors.len();
    if predictors.iter().any(|c| c.len() != n) || n < p + 1 {
        return Err(AttenuationError::TooFewSamples { got: n, needed: p + 1 });
    }

    // Standardize predictors so the normal equations stay well conditioned
    // for Hz-scale abscissas.
    let mut centers = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut z = vec![vec![0.0; n]; p];
    for j in 0..p {
        let mean = predictors[j].iter().sum::<f64>() / n as f64;
        let var = predictors[j].iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        centers[j] = mean;
        scales[j] = if sd > 0.0 { sd } else { 1.0 };
        for i in 0..n {
            z[j][i] = (predictors[j][i] - mean) / scales[j];
        }
    }

    let mut weights = vec![1.0; n];
    let mut beta = weighted_ls(&z, y, &weights)?;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let residuals: Vec<f64> = (0..n)
            .map(|i| {
                let mut fit = beta[0];
                for j in 0..p {
                    fit += beta[j + 1] * z[j][i];
                }
                y[i] - fit
            })
            .collect();
        let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if max_abs == 0.0 {
            converged = true;
            break;
        }
        // MAD scale about zero (the intercept centers the fit), with the
        // p smallest magnitudes excluded and a small floor so exact fits
        // with gross outliers still reject them instead of stalling.
        let scale = (mad_sigma(&residuals, p + 1) / 0.6745).max(1e-6 * max_abs);
        for i in 0..n {
            let u = residuals[i] / (BISQUARE_C * scale);
            weights[i] = if u.abs() < 1.0 { (1.0 - u * u) * (1.0 - u * u) } else { 0.0 };
        }
        let next = weighted_ls(&z, y, &weights)?;
        let scale_ref = next.iter().chain(&beta).fold(0.0f64, |m, b| m.max(b.abs()));
        let delta = next.iter().zip(&beta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        beta = next;
        if delta <= CONVERGENCE_TOL * scale_ref.max(1e-300) {
            converged = true;
            break;
        }
    }

    // Map back to the raw predictor scale.
    let mut out = vec![0.0; p + 1];
    out[0] = beta[0];
    for j in 0..p {
        out[j + 1] = beta[j + 1] / scales[j];
        out[0] -= beta[j + 1] * centers[j] / scales[j];
    }
    if converged {
        Ok(out)
    } else {
        Err(AttenuationError::NonConvergence { coefficients: out })
    }
}

/// Robust line fit of `y` (dB) against `x` (Hz). Returns `(alpha0, alpha1)`.
pub fn robust_line_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64), AttenuationError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AttenuationError::TooFewSamples { got: x.len().min(y.len()), needed: 2 });
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AttenuationError::NonIncreasingAbscissa);
    }
    let beta = robust_affine_fit(&[x], y)?;
    Ok((beta[0], beta[1]))
}

/// Estimates the attenuation coefficients of a channel through the robust
/// regression of `20 log10 |H(f_m)|`, interpreted via the longest path.
pub fn fit_attenuation(
    channel: &ChannelRecord,
    max_length: f64,
) -> Result<AttenuationCoefficients, AttenuationError> {
    if let Some(index) = channel.first_zero_sample() {
        return Err(AttenuationError::ZeroMagnitudeSample { index });
    }
    let x: Vec<f64> = channel.grid().frequencies().collect();
    let y: Vec<f64> = channel.samples().iter().map(|s| 20.0 * s.norm().log10()).collect();
    let (alpha0, alpha1) = robust_line_fit(&x, &y)?;
    Ok(attenuation_from_line(alpha0, alpha1, max_length))
}

/// Weighted least squares with an intercept column; standard normal
/// equations, solved by Gaussian elimination on the small system.
fn weighted_ls(z: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<Vec<f64>, AttenuationError> {
    let n = y.len();
    let p = z.len();
    let dim = p + 1;
    let mut ata = vec![vec![0.0; dim]; dim];
    let mut atb = vec![0.0; dim];
    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let mut row = Vec::with_capacity(dim);
        row.push(1.0);
        for col in z {
            row.push(col[i]);
        }
        for a in 0..dim {
            for b in a..dim {
                ata[a][b] += wi * row[a] * row[b];
            }
            atb[a] += wi * row[a] * y[i];
        }
    }
    for a in 0..dim {
        for b in 0..a {
            ata[a][b] = ata[b][a];
        }
    }
    solve_small(&mut ata, &mut atb).ok_or(AttenuationError::SingularDesign)
}

/// Gaussian elimination with partial pivoting for tiny systems.
fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Median absolute residual with the `skip` smallest magnitudes excluded.
fn mad_sigma(residuals: &[f64], skip: usize) -> f64 {
    let mut sorted: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let rest = &sorted[skip.min(sorted.len().saturating_sub(1))..];
    let n = rest.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        rest[n / 2]
    } else {
        0.5 * (rest[n / 2 - 1] + rest[n / 2])
    }
}
