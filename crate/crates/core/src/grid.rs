//! The fixed analysis grid over the pendulum state space.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Regular grid of sampled states, theta-major ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_dot_min: f64,
    pub theta_dot_max: f64,
    pub n_theta: usize,
    pub n_theta_dot: usize,
}

impl Default for StateGrid {
    fn default() -> Self {
        StateGrid {
            theta_min: -std::f64::consts::PI,
            theta_max: std::f64::consts::PI,
            theta_dot_min: -5.0,
            theta_dot_max: 5.0,
            n_theta: 101,
            n_theta_dot: 101,
        }
    }
}

impl StateGrid {
    pub fn len(&self) -> usize {
        self.n_theta * self.n_theta_dot
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.theta_min + (self.theta_max - self.theta_min) * i as f64 / (self.n_theta - 1) as f64
    }

    pub fn theta_dot(&self, j: usize) -> f64 {
        self.theta_dot_min
            + (self.theta_dot_max - self.theta_dot_min) * j as f64 / (self.n_theta_dot - 1) as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_theta_dot + j
    }

    pub fn state(&self, idx: usize) -> (f64, f64) {
        (self.theta(idx / self.n_theta_dot), self.theta_dot(idx % self.n_theta_dot))
    }

    /// All grid states as rows `[theta, theta_dot]`.
    pub fn states(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), 2));
        for i in 0..self.n_theta {
            for j in 0..self.n_theta_dot {
                let k = self.index(i, j);
                out[[k, 0]] = self.theta(i);
                out[[k, 1]] = self.theta_dot(j);
            }
        }
        out
    }

    /// Nearest grid cell for a state, or `None` outside the grid window
    /// (beyond half a cell past the boundary).
    pub fn cell_of(&self, theta: f64, theta_dot: f64) -> Option<usize> {
        let i = nearest(theta, self.theta_min, self.theta_max, self.n_theta)?;
        let j = nearest(theta_dot, self.theta_dot_min, self.theta_dot_max, self.n_theta_dot)?;
        Some(self.index(i, j))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_theta < 2 || self.n_theta_dot < 2 {
            return Err("grid resolution must be at least 2 per axis".into());
        }
        if !(self.theta_min < self.theta_max && self.theta_dot_min < self.theta_dot_max) {
            return Err("grid ranges must be non-degenerate".into());
        }
        Ok(())
    }
}

fn nearest(x: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
    let step = (hi - lo) / (n - 1) as f64;
    let idx = ((x - lo) / step).round();
    if idx < -0.5 || idx > (n - 1) as f64 + 0.5 {
        return None;
    }
    Some(idx.clamp(0.0, (n - 1) as f64) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_grid_spans_analysis_window() {
        let g = StateGrid::default();
        assert_eq!(g.len(), 101 * 101);
        assert_abs_diff_eq!(g.theta(0), -std::f64::consts::PI);
        assert_abs_diff_eq!(g.theta(100), std::f64::consts::PI);
        assert_abs_diff_eq!(g.theta_dot(50), 0.0);
    }

    #[test]
    fn cell_of_roundtrips_grid_points() {
        let g = StateGrid {
            n_theta: 11,
            n_theta_dot: 7,
            ..StateGrid::default()
        };
        for i in 0..g.n_theta {
            for j in 0..g.n_theta_dot {
                assert_eq!(g.cell_of(g.theta(i), g.theta_dot(j)), Some(g.index(i, j)));
            }
        }
    }

    #[test]
    fn cell_of_rejects_states_outside_window() {
        let g = StateGrid::default();
        assert_eq!(g.cell_of(0.0, 5.6), None);
        assert_eq!(g.cell_of(0.0, -7.0), None);
        assert!(g.cell_of(0.0, 4.99).is_some());
    }
}
