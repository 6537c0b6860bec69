use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Control knots `0 = t_0 < … < t_K = T`, each interval split into a fixed
/// number of Euler–Maruyama substeps.
///
/// Substeps are addressed by a global step index `s ∈ 0..=K·substeps`; step
/// `s` starts at [`TimeGrid::step_time`]`(s)` and lies in control interval
/// `s / substeps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    knots: Vec<f64>,
    substeps: usize,
}

impl TimeGrid {
    pub fn from_knots(knots: Vec<f64>, substeps: usize) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("time grid needs at least two knots"));
        }
        if knots[0] != 0.0 {
            return Err(Error::invalid("time grid must start at t = 0"));
        }
        if knots.iter().any(|t| !t.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "knots must be finite and strictly increasing",
            ));
        }
        if substeps == 0 {
            return Err(Error::invalid("substeps_per_knot must be positive"));
        }
        Ok(Self { knots, substeps })
    }

    /// `intervals` equal control intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, intervals: usize, substeps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if intervals == 0 {
            return Err(Error::invalid("need at least one control interval"));
        }
        let mut knots: Vec<f64> = (0..intervals)
            .map(|k| horizon * k as f64 / intervals as f64)
            .collect();
        knots.push(horizon);
        Self::from_knots(knots, substeps)
    }

    /// Uniform grid with `per_unit` control intervals per unit of time.
    pub fn per_unit_time(horizon: f64, per_unit: usize, substeps: usize) -> Result<Self> {
        let intervals = (horizon * per_unit as f64).round() as usize;
        Self::uniform(horizon, intervals.max(1), substeps)
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("grid has knots")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot(&self, k: usize) -> f64 {
        self.knots[k]
    }

    /// Number of control intervals `K`.
    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn total_steps(&self) -> usize {
        self.intervals() * self.substeps
    }

    /// Global step index of knot `k`.
    pub fn knot_step(&self, k: usize) -> usize {
        k * self.substeps
    }

    pub fn interval_of_step(&self, step: usize) -> usize {
        (step / self.substeps).min(self.intervals() - 1)
    }

    pub fn step_time(&self, step: usize) -> f64 {
        let k = step / self.substeps;
        if k >= self.intervals() {
            return self.horizon();
        }
        let r = step % self.substeps;
        if r == 0 {
            self.knots[k]
        } else {
            self.knots[k] + r as f64 * self.interval_dt(k)
        }
    }

    /// Integration step length inside control interval `k`.
    pub fn interval_dt(&self, k: usize) -> f64 {
        (self.knots[k + 1] - self.knots[k]) / self.substeps as f64
    }

    pub fn step_dt(&self, step: usize) -> f64 {
        self.interval_dt(self.interval_of_step(step))
    }

    /// Step index whose start time equals `t`, up to rounding.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        let tol = 1e-9 * horizon.max(1.0);
        if !(t > -tol && t < horizon + tol) {
            return Err(Error::OffGrid(t));
        }
        // first knot strictly greater than t (within tolerance), minus one
        let k = self
            .knots
            .partition_point(|&knot| knot <= t + tol)
            .saturating_sub(1);
        if k >= self.intervals() {
            return Ok(self.total_steps());
        }
        let frac = (t - self.knots[k]) / self.interval_dt(k);
        let r = frac.round();
        if (frac - r).abs() > 1e-6 {
            return Err(Error::OffGrid(t));
        }
        Ok(self.knot_step(k) + r as usize)
    }

    pub fn knot_index(&self, t: f64) -> Result<usize> {
        let s = self.step_index(t)?;
        if s % self.substeps != 0 {
            return Err(Error::OffGrid(t));
        }
        Ok(s / self.substeps)
    }
}
