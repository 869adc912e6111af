//! Discrete frequency/length geometry: the measurement frequency grid, the
//! maximum resolvable path length and the uniform path-length lattice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from grid and lattice construction.
#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("start frequency must be positive, got {0}")]
    NonPositiveStartFrequency(f64),
    #[error("frequency step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("grid needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("propagation speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("grid frequencies are not finite")]
    NonFiniteFrequency,
    #[error("maximum length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("path count must be at least 1")]
    EmptyLattice,
    #[error("path count rounds below 1 for this grid (got {0:.3})")]
    DegeneratePathCount(f64),
}

/// Uniform measurement frequency grid `f_m = f0 + m*delta_f`, `0 <= m < M`,
/// together with the cable propagation speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    f0: f64,
    delta_f: f64,
    m: usize,
    nu: f64,
}

impl FrequencyGrid {
    /// Builds a grid, validating positivity and finiteness.
    pub fn new(f0: f64, delta_f: f64, m: usize, nu: f64) -> Result<Self, GridError> {
        if !(f0 > 0.0) {
            return Err(GridError::NonPositiveStartFrequency(f0));
        }
        if !(delta_f > 0.0) {
            return Err(GridError::NonPositiveStep(delta_f));
        }
        if m < 2 {
            return Err(GridError::TooFewSamples(m));
        }
        if !(nu > 0.0) {
            return Err(GridError::NonPositiveSpeed(nu));
        }
        let f_max = f0 + (m as f64 - 1.0) * delta_f;
        if !f_max.is_finite() || f_max <= f0 {
            return Err(GridError::NonFiniteFrequency);
        }
        Ok(Self { f0, delta_f, m, nu })
    }

    /// Start frequency in Hz.
    pub fn f0(&self) -> f64 {
        self.f0
    }

    /// Frequency step in Hz.
    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    /// Number of frequency samples.
    pub fn num_samples(&self) -> usize {
        self.m
    }

    /// Propagation speed in m/s.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Highest grid frequency `f_{M-1}` in Hz.
    pub fn f_max(&self) -> f64 {
        self.f0 + (self.m as f64 - 1.0) * self.delta_f
    }

    /// Frequency of sample `m` in Hz.
    pub fn frequency(&self, m: usize) -> f64 {
        debug_assert!(m < self.m);
        self.f0 + m as f64 * self.delta_f
    }

    /// Iterator over all grid frequencies.
    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|m| self.frequency(m))
    }
}

/// Uniform path-length lattice `d_i = i*L/N`, `0 <= i < N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLattice {
    max_length: f64,
    n: usize,
}

impl PathLattice {
    /// Builds a lattice over `[0, max_length)` with `n` points.
    pub fn new(max_length: f64, n: usize) -> Result<Self, GridError> {
        if !(max_length > 0.0) || !max_length.is_finite() {
            return Err(GridError::NonPositiveLength(max_length));
        }
        if n < 1 {
            return Err(GridError::EmptyLattice);
        }
        Ok(Self { max_length, n })
    }

    /// Lattice for a grid: maximum length and matching path count.
    pub fn for_grid(grid: &FrequencyGrid) -> Result<Self, GridError> {
        let l = max_length(grid);
        Self::new(l, num_paths(grid, l)?)
    }

    /// Maximum path length `L` in meters.
    pub fn max_length(&self) -> f64 {
        self.max_length
    }

    /// Number of lattice points `N`.
    pub fn num_points(&self) -> usize {
        self.n
    }

    /// Lattice spacing `L/N` in meters.
    pub fn spacing(&self) -> f64 {
        self.max_length / self.n as f64
    }

    /// Length of lattice point `i` in meters.
    pub fn length(&self, i: usize) -> f64 {
        debug_assert!(i < self.n);
        i as f64 * self.max_length / self.n as f64
    }

    /// All lattice lengths, ascending from `d_0 = 0`.
    pub fn lengths(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.length(i)).collect()
    }

    /// Nearest lattice index for a length, or `None` outside the lattice.
    pub fn index_of(&self, length_m: f64) -> Option<usize> {
        if !length_m.is_finite() {
            return None;
        }
        let i = (length_m / self.spacing()).round();
        if i < 0.0 || i >= self.n as f64 {
            None
        } else {
            Some(i as usize)
        }
    }
}

/// Maximum path length supported by a grid: `L = (M-1)*nu / (f_max - f0)`,
/// equivalently `nu / delta_f`.
pub fn max_length(grid: &FrequencyGrid) -> f64 {
    (grid.num_samples() as f64 - 1.0) * grid.nu() / (grid.f_max() - grid.f0())
}

/// Path count closing the lattice constraints with equality:
/// `N = round(2*f_max*L/nu)`.
pub fn num_paths(grid: &FrequencyGrid, max_length: f64) -> Result<usize, GridError> {
    let n = (2.0 * grid.f_max() * max_length / grid.nu()).round();
    if n < 1.0 {
        return Err(GridError::DegeneratePathCount(n));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Grid used throughout the reference measurement campaign.
    pub(crate) fn reference_grid() -> FrequencyGrid {
        FrequencyGrid::new(1.0e6, 62.5978e3, 1262, 2.0e8).unwrap()
    }

    #[test]
    fn reference_grid_max_length_is_3195_m() {
        let grid = reference_grid();
        let l = max_length(&grid);
        assert_eq!(l.round(), 3195.0);
        assert!((l - 3195.0).abs() < 0.01, "L = {l}");
    }

    #[test]
    fn max_length_trivial_cases() {
        // (M-1) = 1 and a span numerically equal to nu give 1 m.
        let g = FrequencyGrid::new(0.1, 2.0e8, 2, 2.0e8).unwrap();
        assert_relative_eq!(max_length(&g), 1.0, max_relative = 1e-12);

        // Direct substitution: 100 * 2e8 / 5e7 = 400 m.
        let g = FrequencyGrid::new(1.0e6, 0.5e6, 101, 2.0e8).unwrap();
        assert_relative_eq!(max_length(&g), 400.0, max_relative = 1e-12);
    }

    #[test]
    fn reference_grid_num_paths_is_2554() {
        let grid = reference_grid();
        let l = max_length(&grid);
        assert_eq!(num_paths(&grid, l).unwrap(), 2554);
    }

    #[test]
    fn num_paths_direct_substitution() {
        // f_max numerically nu/2 and L = 10 give N = 10.
        let g = FrequencyGrid::new(0.5e8, 0.5e8, 2, 2.0e8).unwrap();
        assert_eq!(g.f_max(), 1.0e8);
        assert_eq!(num_paths(&g, 10.0).unwrap(), 10);
    }

    #[test]
    fn reference_lattice_spacing_near_1_25_m() {
        let grid = reference_grid();
        let lattice = PathLattice::for_grid(&grid).unwrap();
        assert_eq!(lattice.num_points(), 2554);
        assert!((lattice.spacing() - 1.2510).abs() < 5e-4, "spacing = {}", lattice.spacing());
        assert_relative_eq!(lattice.length(1), lattice.spacing(), max_relative = 1e-15);
    }

    #[test]
    fn lattice_trivial_cases() {
        let single = PathLattice::new(10.0, 1).unwrap();
        assert_eq!(single.lengths(), vec![0.0]);

        let four = PathLattice::new(4.0, 4).unwrap();
        assert_eq!(four.lengths(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn lattice_lengths_strictly_increasing_from_zero() {
        let lattice = PathLattice::for_grid(&reference_grid()).unwrap();
        let d = lattice.lengths();
        assert_eq!(d[0], 0.0);
        assert!(d.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn index_of_round_trips_and_rejects_outside() {
        let lattice = PathLattice::new(3195.0015, 2554).unwrap();
        for i in [0usize, 1, 7, 2553] {
            assert_eq!(lattice.index_of(lattice.length(i)), Some(i));
        }
        assert_eq!(lattice.index_of(-1.0), None);
        assert_eq!(lattice.index_of(4000.0), None);
        assert_eq!(lattice.index_of(f64::NAN), None);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(FrequencyGrid::new(0.0, 1.0, 4, 1.0).is_err());
        assert!(FrequencyGrid::new(1.0, 0.0, 4, 1.0).is_err());
        assert!(FrequencyGrid::new(1.0, 1.0, 1, 1.0).is_err());
        assert!(FrequencyGrid::new(1.0, 1.0, 4, 0.0).is_err());
        assert!(PathLattice::new(0.0, 4).is_err());
        assert!(PathLattice::new(1.0, 0).is_err());
    }

    #[test]
    fn dft_period_condition_holds_after_rounding() {
        // delta_f * L / nu = 1 to 1e-6 for a family of grids.
        for (f0, df, m) in [
            (1.0e6, 62.5978e3, 1262usize),
            (0.3e6, 25.0e3, 513),
            (2.0e6, 100.0e3, 801),
        ] {
            let g = FrequencyGrid::new(f0, df, m, 2.0e8).unwrap();
            let l = max_length(&g);
            let period = g.delta_f() * l / g.nu();
            assert!((period - 1.0).abs() < 1e-6, "period = {period}");
        }
    }

    #[test]
    fn anti_aliasing_up_to_rounding() {
        for (f0, df, m) in [
            (1.0e6, 62.5978e3, 1262usize),
            (0.5e6, 40.0e3, 700),
            (3.0e6, 80.0e3, 400),
        ] {
            let g = FrequencyGrid::new(f0, df, m, 2.0e8).unwrap();
            let l = max_length(&g);
            let n = num_paths(&g, l).unwrap() as f64;
            // N*delta_f >= 2*f_max - eps with eps from rounding N only.
            let eps = 0.5 * g.delta_f();
            assert!(n * g.delta_f() >= 2.0 * g.f_max() - eps);
        }
    }

    #[test]
    fn shortest_path_respects_half_wavelength() {
        for (f0, df, m) in [(1.0e6, 62.5978e3, 1262usize), (0.5e6, 40.0e3, 700)] {
            let g = FrequencyGrid::new(f0, df, m, 2.0e8).unwrap();
            let lat = PathLattice::for_grid(&g).unwrap();
            let lambda_min = g.nu() / g.f_max();
            let n = lat.num_points() as f64;
            assert!(lat.length(1) >= 0.5 * lambda_min * (1.0 - 1.0 / n) - 1e-12);
        }
    }
}
