use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t_k = t0 + k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::input(format!("invalid grid: t0={t0}, dt={dt}")));
        }
        Ok(TimeGrid { t0, dt, steps })
    }

    /// Grid from 0 to `horizon` with step as close to `dt` as possible while
    /// landing exactly on the horizon.
    pub fn over(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon >= 0.0) {
            return Err(Error::input(format!("negative horizon {horizon}")));
        }
        let steps = (horizon / dt).round() as usize;
        if steps == 0 {
            return TimeGrid::new(0.0, dt, 0);
        }
        TimeGrid::new(0.0, horizon / steps as f64, steps)
    }

    /// Default step `min(1e-3, 0.05/c)` for a system contracting at rate `c`.
    pub fn default_dt(c: f64) -> f64 {
        1e-3_f64.min(0.05 / c)
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.t(self.steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.t(k))
    }

    /// Every `stride`-th point of this grid.
    pub fn coarsen(&self, stride: usize) -> Result<TimeGrid> {
        if stride == 0 || !self.steps.is_multiple_of(stride) {
            return Err(Error::input(format!(
                "record stride {stride} must divide step count {}",
                self.steps
            )));
        }
        TimeGrid::new(self.t0, self.dt * stride as f64, self.steps / stride)
    }

    /// Whether two grids describe the same points (up to 1e-12 relative in dt).
    pub fn aligned_with(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps
            && (self.t0 - other.t0).abs() <= 1e-12 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_accumulation_free() {
        let g = TimeGrid::new(0.5, 0.1, 1000).unwrap();
        assert_eq!(g.t(1000), 0.5 + 1000.0 * 0.1);
        assert_eq!(g.times().count(), 1001);
    }

    #[test]
    fn over_hits_horizon() {
        let g = TimeGrid::over(10.0, 1e-3).unwrap();
        assert_eq!(g.steps, 10_000);
        assert!((g.end() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn coarsen_requires_divisor() {
        let g = TimeGrid::new(0.0, 0.01, 100).unwrap();
        assert_eq!(g.coarsen(10).unwrap().steps, 10);
        assert!(g.coarsen(7).is_err());
    }

    #[test]
    fn default_dt_rule() {
        assert_eq!(TimeGrid::default_dt(1.0), 1e-3);
        assert_eq!(TimeGrid::default_dt(100.0), 5e-4);
    }
}
