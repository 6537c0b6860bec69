use serde::{Deserialize, Serialize};

use super::TimeGrid;
use crate::{Error, Result};

/// Piecewise-constant coefficient signal `u(t)`: row `k` holds
/// `(u_1, …, u_J)` on the control interval `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleControl {
    intervals: usize,
    width: usize,
    coeffs: Vec<f64>,
}

impl EnsembleControl {
    pub fn zeros(intervals: usize, width: usize) -> Self {
        Self {
            intervals,
            width,
            coeffs: vec![0.0; intervals * width],
        }
    }

    pub fn zeros_on(grid: &TimeGrid, width: usize) -> Self {
        Self::zeros(grid.intervals(), width)
    }

    /// Same coefficient vector on every interval.
    pub fn constant(intervals: usize, value: &[f64]) -> Self {
        let coeffs = value
            .iter()
            .copied()
            .cycle()
            .take(intervals * value.len())
            .collect();
        Self {
            intervals,
            width: value.len(),
            coeffs,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("control rows have unequal lengths"));
        }
        Ok(Self {
            intervals: rows.len(),
            width,
            coeffs: rows.concat(),
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of coefficients per interval (the size of the feedback basis).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coeffs[k * self.width..(k + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coeffs.chunks(self.width.max(1)).take(self.intervals)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub(crate) fn check_against(&self, grid: &TimeGrid, basis_len: usize) -> Result<()> {
        Error::check_dim("control intervals", grid.intervals(), self.intervals)?;
        Error::check_dim("control width", basis_len, self.width)
    }
}
