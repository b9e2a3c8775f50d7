//! Time grids and reproducible Brownian increments.
//!
//! Increments for path `i` come from a ChaCha8 stream keyed by
//! `(master_seed, i)` and are drawn in `(step, component)` order, so every
//! entry is a pure function of `(master_seed, path_index, step, component)`
//! and paths can be produced by any worker in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t0 < t0 + dt < … < t_final`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_final: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_final.is_finite() && t_final > t0) {
            return Err(Error::InvalidArgument(format!(
                "time grid needs t0 < T, got [{t0}, {t_final}]"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(Self { t0, t_final, steps })
    }

    /// Grid whose step is at most `dt`.
    pub fn with_max_step(t0: f64, t_final: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let steps = ((t_final - t0) / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(t0, t_final, steps)
    }

    pub fn dt(&self) -> f64 {
        (self.t_final - self.t0) / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_final
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Grid with `factor` fine steps per coarse step.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.steps
            )));
        }
        Self::new(self.t0, self.t_final, self.steps / factor)
    }
}

/// Gaussian increments `dW[step][component] ~ N(0, dt)` for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    master_seed: u64,
    path_index: u64,
    grid: TimeGrid,
    k: usize,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn generate(master_seed: u64, path_index: u64, grid: TimeGrid, k: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(path_index);
        let scale = grid.dt().sqrt();
        let increments = (0..grid.steps * k)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            master_seed,
            path_index,
            grid,
            k,
            increments,
        }
    }

    /// Builds a path from explicit increments, row-major in `(step, component)`.
    pub fn from_increments(grid: TimeGrid, k: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.steps * k {
            return Err(Error::Dimension {
                context: "noise increments",
                expected: format!("{} values", grid.steps * k),
                got: format!("{} values", increments.len()),
            });
        }
        Ok(Self {
            master_seed: 0,
            path_index: 0,
            grid,
            k,
            increments,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.k..(step + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.increments
    }

    /// Sum of the fine increments in `[step·factor, (step+1)·factor)`, written into `out`.
    pub fn aggregated_increment(&self, factor: usize, step: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for fine in step * factor..(step + 1) * factor {
            for (o, w) in out.iter_mut().zip(self.increment(fine)) {
                *o += w;
            }
        }
    }

    /// The same Brownian path observed on a grid `factor` times coarser.
    pub fn aggregate(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let mut increments = vec![0.0; grid.steps * self.k];
        for (step, chunk) in increments.chunks_mut(self.k).enumerate() {
            self.aggregated_increment(factor, step, chunk);
        }
        Ok(Self {
            master_seed: self.master_seed,
            path_index: self.path_index,
            grid,
            k: self.k,
            increments,
        })
    }
}
