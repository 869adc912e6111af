//! Weighted least-squares estimation of real path gains from the
//! conjugate-stacked matrix form of the multipath model, plus the RMSE and
//! NRMSE error metrics.
//!
//! Stacking each complex frequency sample together with its conjugate makes
//! the normal equations real, so the solved gain vector is exactly real by
//! construction. Internally this is expressed as a real system with one
//! row block for the real parts and one for the imaginary parts; the two
//! formulations are algebraically identical.

use ndarray::{s, Array2};
use num_complex::Complex64;
use thiserror::Error;

use crate::attenuation::AttenuationCoefficients;
use crate::channel::ChannelRecord;
use crate::grid::{FrequencyGrid, PathLattice};
use crate::linalg;

/// Largest dimension for which a singular system falls back to the exact
/// eigen-truncated pseudo-inverse; beyond it an escalating ridge is used.
const PINV_LIMIT: usize = 600;
/// Relative eigenvalue cutoff for the pseudo-inverse fallback.
const PINV_TOL: f64 = 1e-10;

/// Errors from system assembly and gain solving.
#[derive(Debug, Error, PartialEq)]
pub enum WlsError {
    #[error("sample {index} has zero magnitude; its weight would overflow")]
    WeightOverflow { index: usize },
    #[error("system and channel grids differ")]
    GridMismatch,
    #[error("active indices must be strictly increasing and within the lattice")]
    BadActiveIndices,
    #[error("solver failed: {detail}")]
    SolverFailure { detail: String },
    #[error("sample {index} has zero magnitude")]
    ZeroMagnitudeSample { index: usize },
}

/// The weighted stacked system for a subset of lattice paths. Columns are
/// regenerated on demand from the basis description rather than stored.
#[derive(Debug, Clone)]
pub struct PathSystem {
    grid: FrequencyGrid,
    lattice: PathLattice,
    atten: AttenuationCoefficients,
    active: Vec<usize>,
    weights: Vec<f64>,
}

/// Real path gains aligned with the active indices of the system that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GainVector {
    active: Vec<usize>,
    gains: Vec<f64>,
}

impl GainVector {
    /// Assembles a gain vector from aligned indices and values.
    pub fn from_parts(active: Vec<usize>, gains: Vec<f64>) -> Self {
        assert_eq!(active.len(), gains.len());
        Self { active, gains }
    }

    /// Lattice indices, strictly increasing.
    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    /// Gain values aligned with [`Self::active_indices`].
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
}

impl PathSystem {
    /// The frequency grid the system is built on.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// The active lattice indices, strictly increasing.
    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    /// Per-frequency weights `1/|H(f_m)|^2`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The lattice the columns are drawn from.
    pub fn lattice(&self) -> &PathLattice {
        &self.lattice
    }

    /// The attenuation coefficients baked into the columns.
    pub fn attenuation(&self) -> &AttenuationCoefficients {
        &self.atten
    }

    /// The same system restricted to a subset of lattice indices.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self, WlsError> {
        let n = self.lattice.num_points();
        let increasing = indices.windows(2).all(|w| w[1] > w[0]);
        if !increasing || indices.iter().any(|&i| i >= n) || indices.is_empty() {
            return Err(WlsError::BadActiveIndices);
        }
        Ok(Self { active: indices.to_vec(), ..self.clone() })
    }

    /// Weighted residual norm `||W^(1/2) (h - P g)||` of a gain assignment,
    /// over the stacked system.
    pub fn weighted_residual_norm(&self, channel: &ChannelRecord, gains: &[f64]) -> f64 {
        assert_eq!(gains.len(), self.active.len());
        let mut fitted = vec![Complex64::new(0.0, 0.0); self.grid.num_samples()];
        accumulate_model(&self.grid, &self.atten, &self.lattice, &self.active, gains, &mut fitted);
        let mut acc = 0.0;
        for (m, (h, f)) in channel.samples().iter().zip(&fitted).enumerate() {
            acc += self.weights[m] * (h - f).norm_sqr();
        }
        // The conjugate stacking counts every sample twice.
        (2.0 * acc).sqrt()
    }
}

/// Assembles the weighted stacked system over the full lattice.
pub fn build_system(
    channel: &ChannelRecord,
    lattice: &PathLattice,
    atten: &AttenuationCoefficients,
) -> Result<PathSystem, WlsError> {
    if let Some(index) = channel.first_zero_sample() {
        return Err(WlsError::WeightOverflow { index });
    }
    let weights: Vec<f64> = channel.samples().iter().map(|s| 1.0 / s.norm_sqr()).collect();
    if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
        return Err(WlsError::WeightOverflow { index });
    }
    Ok(PathSystem {
        grid: *channel.grid(),
        lattice: lattice.clone(),
        atten: *atten,
        active: (0..lattice.num_points()).collect(),
        weights,
    })
}

/// Solves the weighted least-squares problem for real path gains.
///
/// Overdetermined systems go through the real normal equations; when the
/// active set exceeds the number of real constraints the minimum-norm
/// solution is returned instead.
pub fn solve_gains(system: &PathSystem, channel: &ChannelRecord) -> Result<GainVector, WlsError> {
    if channel.grid() != &system.grid {
        return Err(WlsError::GridMismatch);
    }
    let m = system.grid.num_samples();
    let rows = 2 * m;
    let k = system.active.len();

    let at = weighted_columns(&system.grid, &system.atten, &system.lattice, &system.active, &system.weights);
    let y = weighted_targets(channel, &system.weights);

    let gains = if k <= rows {
        solve_primal(&at, &y)?
    } else {
        solve_dual_min_norm(&at, &y)?
    };
    if gains.iter().any(|g| !g.is_finite()) {
        return Err(WlsError::SolverFailure { detail: "non-finite gains".into() });
    }
    Ok(GainVector { active: system.active.clone(), gains })
}

/// Root-mean-square error between a measured channel and a fitted response.
pub fn rmse(measured: &ChannelRecord, fitted: &[Complex64]) -> f64 {
    assert_eq!(measured.samples().len(), fitted.len(), "length mismatch");
    let m = fitted.len() as f64;
    let sum: f64 =
        measured.samples().iter().zip(fitted).map(|(h, f)| (h - f).norm_sqr()).sum();
    (sum / m).sqrt()
}

/// Normalized root-mean-square error; relative error per frequency sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nrmse(f64);

impl Nrmse {
    /// From the squared linear value.
    pub(crate) fn from_squared(sq: f64) -> Self {
        Self(sq.max(0.0).sqrt())
    }

    /// Linear value, nonnegative.
    pub fn linear(self) -> f64 {
        self.0
    }

    /// `20 log10` view; negative infinity for a perfect fit.
    pub fn db(self) -> f64 {
        if self.0 == 0.0 {
            f64::NEG_INFINITY
        } else {
            20.0 * self.0.log10()
        }
    }
}

/// Normalized RMSE between a measured channel and a fitted response.
pub fn nrmse(measured: &ChannelRecord, fitted: &[Complex64]) -> Result<Nrmse, WlsError> {
    assert_eq!(measured.samples().len(), fitted.len(), "length mismatch");
    if let Some(index) = measured.first_zero_sample() {
        return Err(WlsError::ZeroMagnitudeSample { index });
    }
    let m = fitted.len() as f64;
    let sum: f64 = measured
        .samples()
        .iter()
        .zip(fitted)
        .map(|(h, f)| (h - f).norm_sqr() / h.norm_sqr())
        .sum();
    Ok(Nrmse::from_squared(sum / m))
}

// ---------------------------------------------------------------------------
// Shared column machinery (also used by the decimation loop).
// ---------------------------------------------------------------------------

/// Fills one weighted stacked column for lattice length `d` into `out`
/// (length 2M): real parts in the first half, imaginary parts in the second.
pub(crate) fn fill_weighted_column(
    grid: &FrequencyGrid,
    atten: &AttenuationCoefficients,
    d: f64,
    sqrt_w: &[f64],
    out: &mut [f64],
) {
    let m = grid.num_samples();
    debug_assert_eq!(out.len(), 2 * m);
    let alpha = atten.a0 + atten.a1 * grid.f0();
    let mut amp = (-alpha * d).exp();
    let q = (-atten.a1 * grid.delta_f() * d).exp();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut rot = Complex64::from_polar(1.0, -two_pi * grid.f0() * d / grid.nu());
    let step = Complex64::from_polar(1.0, -two_pi * grid.delta_f() * d / grid.nu());
    let (re_half, im_half) = out.split_at_mut(m);
    for i in 0..m {
        let w = sqrt_w[i];
        re_half[i] = w * amp * rot.re;
        im_half[i] = w * amp * rot.im;
        amp *= q;
        rot *= step;
    }
}

/// Builds the weighted stacked columns for a set of lattice indices as the
/// rows of a `k x 2M` matrix.
pub(crate) fn weighted_columns(
    grid: &FrequencyGrid,
    atten: &AttenuationCoefficients,
    lattice: &PathLattice,
    active: &[usize],
    weights: &[f64],
) -> Array2<f64> {
    let m = grid.num_samples();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut at = Array2::<f64>::zeros((active.len(), 2 * m));
    for (row, &idx) in active.iter().enumerate() {
        let out = at.row_mut(row).into_slice().expect("contiguous row");
        fill_weighted_column(grid, atten, lattice.length(idx), &sqrt_w, out);
    }
    at
}

/// Weighted stacked target vector `[sqrt(w) Re H; sqrt(w) Im H]`.
pub(crate) fn weighted_targets(channel: &ChannelRecord, weights: &[f64]) -> Vec<f64> {
    let m = channel.samples().len();
    let mut y = vec![0.0; 2 * m];
    for (i, (h, w)) in channel.samples().iter().zip(weights).enumerate() {
        let sw = w.sqrt();
        y[i] = sw * h.re;
        y[m + i] = sw * h.im;
    }
    y
}

/// Adds `sum_i g_i * P(:, i)` for the given lattice indices onto `fitted`.
pub(crate) fn accumulate_model(
    grid: &FrequencyGrid,
    atten: &AttenuationCoefficients,
    lattice: &PathLattice,
    active: &[usize],
    gains: &[f64],
    fitted: &mut [Complex64],
) {
    let m = grid.num_samples();
    debug_assert_eq!(fitted.len(), m);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (&idx, &g) in active.iter().zip(gains) {
        let d = lattice.length(idx);
        let alpha = atten.a0 + atten.a1 * grid.f0();
        let mut amp = (-alpha * d).exp();
        let q = (-atten.a1 * grid.delta_f() * d).exp();
        let mut rot = Complex64::from_polar(1.0, -two_pi * grid.f0() * d / grid.nu());
        let step = Complex64::from_polar(1.0, -two_pi * grid.delta_f() * d / grid.nu());
        for f in fitted.iter_mut() {
            *f += g * amp * rot;
            amp *= q;
            rot *= step;
        }
    }
}

/// Overdetermined (or square) route: real normal equations with column
/// scaling; exact Cholesky first, eigen-truncated pseudo-inverse fallback
/// for small singular systems, escalating ridge for large ones.
fn solve_primal(at: &Array2<f64>, y: &[f64]) -> Result<Vec<f64>, WlsError> {
    let k = at.nrows();
    let mut scales = vec![1.0; k];
    let mut ats = at.clone();
    for i in 0..k {
        let norm = linalg::dot(at.row(i).to_slice().unwrap(), at.row(i).to_slice().unwrap()).sqrt();
        if norm > 1e-300 {
            scales[i] = 1.0 / norm;
            ats.row_mut(i).mapv_inplace(|v| v * scales[i]);
        }
    }
    let g = linalg::gram_upper(ats.view());
    let b: Vec<f64> = (0..k).map(|i| linalg::dot(ats.row(i).to_slice().unwrap(), y)).collect();

    let mut factor = g.clone();
    if linalg::cholesky_upper_in_place(&mut factor, k).is_ok() {
        let mut z = Vec::new();
        let mut sol = Vec::new();
        linalg::solve_transposed_upper(&factor, k, &b, &mut z);
        linalg::solve_upper(&factor, k, &z, &mut sol);
        return Ok(unscale(sol, &scales));
    }
    if k <= PINV_LIMIT {
        let mut full = g.clone();
        mirror_upper(&mut full);
        let sol = linalg::pinv_solve_sym(&full, &b, PINV_TOL);
        return Ok(unscale(sol, &scales));
    }
    // Large singular system: escalate a diagonal ridge.
    let mut ridge = 1e-10;
    while ridge <= 1e-4 {
        let mut factor = g.clone();
        linalg::add_ridge(&mut factor, k, ridge);
        if linalg::cholesky_upper_in_place(&mut factor, k).is_ok() {
            let mut z = Vec::new();
            let mut sol = Vec::new();
            linalg::solve_transposed_upper(&factor, k, &b, &mut z);
            linalg::solve_upper(&factor, k, &z, &mut sol);
            return Ok(unscale(sol, &scales));
        }
        ridge *= 100.0;
    }
    Err(WlsError::SolverFailure { detail: format!("normal matrix not factorizable up to ridge 1e-4, k = {k}") })
}

/// Underdetermined route: minimum-norm solution through the dual kernel
/// `K = A A^T`, with Jacobi row/column equilibration before factorization.
fn solve_dual_min_norm(at: &Array2<f64>, y: &[f64]) -> Result<Vec<f64>, WlsError> {
    let rows = at.ncols();
    let mut kernel = Array2::<f64>::zeros((rows, rows));
    ndarray::linalg::general_mat_mul(1.0, &at.t(), &at.view(), 0.0, &mut kernel.slice_mut(s![.., ..]));

    let mut d = vec![1.0; rows];
    for i in 0..rows {
        let v = kernel[[i, i]];
        if v > 1e-300 {
            d[i] = 1.0 / v.sqrt();
        }
    }
    let mut scaled = Array2::<f64>::zeros((rows, rows));
    for i in 0..rows {
        for j in 0..rows {
            scaled[[i, j]] = kernel[[i, j]] * d[i] * d[j];
        }
    }
    let b: Vec<f64> = (0..rows).map(|i| y[i] * d[i]).collect();

    let mut factor = scaled.clone();
    let lambda_scaled = if linalg::cholesky_upper_in_place(&mut factor, rows).is_ok() {
        let mut z = Vec::new();
        let mut sol = Vec::new();
        linalg::solve_transposed_upper(&factor, rows, &b, &mut z);
        linalg::solve_upper(&factor, rows, &z, &mut sol);
        sol
    } else if rows <= PINV_LIMIT {
        linalg::pinv_solve_sym(&scaled, &b, PINV_TOL)
    } else {
        let mut solved = None;
        let mut ridge = 1e-10;
        while ridge <= 1e-4 {
            let mut factor = scaled.clone();
            linalg::add_ridge(&mut factor, rows, ridge);
            if linalg::cholesky_upper_in_place(&mut factor, rows).is_ok() {
                let mut z = Vec::new();
                let mut sol = Vec::new();
                linalg::solve_transposed_upper(&factor, rows, &b, &mut z);
                linalg::solve_upper(&factor, rows, &z, &mut sol);
                solved = Some(sol);
                break;
            }
            ridge *= 100.0;
        }
        solved.ok_or_else(|| WlsError::SolverFailure {
            detail: format!("dual kernel not factorizable up to ridge 1e-4, rows = {rows}"),
        })?
    };
    let lambda: Vec<f64> = lambda_scaled.iter().zip(&d).map(|(l, di)| l * di).collect();
    let gains: Vec<f64> =
        (0..at.nrows()).map(|i| linalg::dot(at.row(i).to_slice().unwrap(), &lambda)).collect();
    Ok(gains)
}

fn unscale(mut sol: Vec<f64>, scales: &[f64]) -> Vec<f64> {
    for (g, s) in sol.iter_mut().zip(scales) {
        *g *= s;
    }
    sol
}

fn mirror_upper(g: &mut Array2<f64>) {
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
}
