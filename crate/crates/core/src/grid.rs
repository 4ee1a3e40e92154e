//! ODE timestep grids. Time runs from noise at `t = 0` to data at `t = 1`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimestepGrid {
    steps: Vec<f64>,
}

impl TimestepGrid {
    /// `t_i = i / n` for `i = 0..=n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("grid needs at least one step".into()));
        }
        let steps = (0..=n).map(|i| i as f64 / n as f64).collect();
        Ok(Self { steps })
    }

    /// Arbitrary strictly increasing grid inside `[0, 1]`.
    pub fn from_points(steps: Vec<f64>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Parameter("grid needs at least two points".into()));
        }
        if steps.iter().any(|t| !t.is_finite() || !(0.0..=1.0).contains(t)) {
            return Err(Error::Parameter("grid points must lie in [0, 1]".into()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("grid must be strictly increasing".into()));
        }
        Ok(Self { steps })
    }

    /// Number of integration steps `N`.
    pub fn n_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn points(&self) -> &[f64] {
        &self.steps
    }

    pub fn t(&self, i: usize) -> f64 {
        self.steps[i]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.steps[i + 1] - self.steps[i]
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.steps[0] && t <= self.steps[self.steps.len() - 1]
    }
}

/// Convenience for [`TimestepGrid::uniform`].
pub fn uniform_grid(n: usize) -> Result<TimestepGrid> {
    TimestepGrid::uniform(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_grids() {
        assert_eq!(uniform_grid(2).unwrap().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(uniform_grid(1).unwrap().points(), &[0.0, 1.0]);
        assert!(uniform_grid(0).is_err());
    }

    #[test]
    fn default_grid_transition_time() {
        let g = uniform_grid(25).unwrap();
        assert_eq!(g.points().len(), 26);
        assert!((g.t(17) - 0.68).abs() < 1e-15);
    }

    #[test]
    fn explicit_points_validated() {
        assert!(TimestepGrid::from_points(vec![0.0, 0.3, 1.0]).is_ok());
        assert!(TimestepGrid::from_points(vec![0.0, 0.3, 0.3]).is_err());
        assert!(TimestepGrid::from_points(vec![0.0, 1.5]).is_err());
        assert!(TimestepGrid::from_points(vec![0.5]).is_err());
    }

    proptest! {
        #[test]
        fn uniform_is_monotone(n in 1usize..2000) {
            let g = uniform_grid(n).unwrap();
            prop_assert_eq!(g.t(0), 0.0);
            prop_assert_eq!(g.t(n), 1.0);
            prop_assert!(g.points().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
