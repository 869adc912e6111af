//! Channel frequency response records.

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::FrequencyGrid;

/// Errors from channel record construction.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("channel '{id}' has {got} samples but the grid has {expected}")]
    SampleCountMismatch { id: String, got: usize, expected: usize },
    #[error("channel '{id}' sample {index} is not finite")]
    NonFiniteSample { id: String, index: usize },
}

/// A measured or synthetic complex CFR on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecord {
    grid: FrequencyGrid,
    samples: Vec<Complex64>,
    id: String,
}

impl ChannelRecord {
    /// Builds a record, validating length and finiteness.
    pub fn new(
        id: impl Into<String>,
        grid: FrequencyGrid,
        samples: Vec<Complex64>,
    ) -> Result<Self, ChannelError> {
        let id = id.into();
        if samples.len() != grid.num_samples() {
            return Err(ChannelError::SampleCountMismatch {
                id,
                got: samples.len(),
                expected: grid.num_samples(),
            });
        }
        if let Some(index) = samples.iter().position(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(ChannelError::NonFiniteSample { id, index });
        }
        Ok(Self { grid, samples, id })
    }

    /// Opaque channel identifier.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// The frequency grid the samples live on.
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Complex response samples `H(f_m)`.
    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    /// Index of the first zero-magnitude sample, if any.
    pub fn first_zero_sample(&self) -> Option<usize> {
        self.samples.iter().position(|s| s.norm_sqr() == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> FrequencyGrid {
        FrequencyGrid::new(1.0e6, 1.0e5, 4, 2.0e8).unwrap()
    }

    #[test]
    fn rejects_wrong_length() {
        let err = ChannelRecord::new("ch", grid(), vec![Complex64::new(1.0, 0.0); 3]).unwrap_err();
        assert_eq!(err, ChannelError::SampleCountMismatch { id: "ch".into(), got: 3, expected: 4 });
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = vec![Complex64::new(1.0, 0.0); 4];
        s[2] = Complex64::new(f64::NAN, 0.0);
        let err = ChannelRecord::new("ch", grid(), s).unwrap_err();
        assert_eq!(err, ChannelError::NonFiniteSample { id: "ch".into(), index: 2 });
    }

    #[test]
    fn finds_zero_samples() {
        let mut s = vec![Complex64::new(1.0, 0.0); 4];
        assert_eq!(ChannelRecord::new("ch", grid(), s.clone()).unwrap().first_zero_sample(), None);
        s[1] = Complex64::new(0.0, 0.0);
        assert_eq!(ChannelRecord::new("ch", grid(), s).unwrap().first_zero_sample(), Some(1));
    }
}
