//! Rectangular self-organizing map trained with the online rule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kpi::OccupancyHistogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SomHyperParams {
    pub rows: usize,
    pub cols: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub radius_initial: f64,
    pub radius_final: f64,
    /// Half-width of the uniform init noise, in units of each feature's std.
    pub init_spread: f64,
    pub seed: u64,
}

impl Default for SomHyperParams {
    fn default() -> Self {
        SomHyperParams {
            rows: 20,
            cols: 20,
            epochs: 20,
            lr_initial: 0.5,
            lr_final: 0.01,
            radius_initial: 10.0,
            radius_final: 1.0,
            init_spread: 0.1,
            seed: 0,
        }
    }
}

impl SomHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("SOM grid must be non-empty".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("SOM epochs must be >= 1".into()));
        }
        let positive = [self.lr_initial, self.lr_final, self.radius_initial, self.radius_final];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("SOM learning rates and radii must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomModel {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    /// Row-major unit weights, `rows * cols * dim` values.
    pub weights: Vec<f64>,
    pub hyper: SomHyperParams,
    pub train_histogram: OccupancyHistogram,
}

/// Exponential interpolation from `a` to `b` as `frac` goes from 0 to 1.
fn decay(a: f64, b: f64, frac: f64) -> f64 {
    a * (b / a).powf(frac)
}

impl SomModel {
    pub fn n_units(&self) -> usize {
        self.rows * self.cols
    }

    pub fn unit(&self, i: usize, j: usize) -> &[f64] {
        let u = i * self.cols + j;
        &self.weights[u * self.dim..(u + 1) * self.dim]
    }

    fn bmu_index(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (u, w) in self.weights.chunks_exact(self.dim).enumerate() {
            let d: f64 = w.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = u;
            }
        }
        best
    }

    /// Best-matching unit `(row, col)`. Ties go to the lowest row-major index.
    pub fn bmu(&self, x: &[f64]) -> Result<(usize, usize)> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let u = self.bmu_index(x);
        Ok((u / self.cols, u % self.cols))
    }

    /// Normalized BMU hit counts over `samples`.
    pub fn occupancy<R: AsRef<[f64]>>(&self, samples: &[R]) -> Result<OccupancyHistogram> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("occupancy needs at least one sample".into()));
        }
        let mut counts = vec![0usize; self.n_units()];
        for x in samples {
            let (i, j) = self.bmu(x.as_ref())?;
            counts[i * self.cols + j] += 1;
        }
        Ok(OccupancyHistogram::from_counts(self.rows, self.cols, &counts))
    }
}

/// Trains a SOM on fully observed feature rows.
///
/// Units start as small uniform noise around the data mean. For every sample
/// the BMU and its Gaussian grid neighborhood move toward the sample; learning
/// rate and radius decay exponentially over all update steps. Sample order is
/// reshuffled every epoch from the seeded generator.
pub fn train_som<R: AsRef<[f64]>>(data: &[R], hyper: &SomHyperParams) -> Result<SomModel> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty SOM training set".into()));
    }
    let dim = data[0].as_ref().len();
    if dim == 0 || data.iter().any(|r| r.as_ref().len() != dim) {
        return Err(Error::InvalidInput("SOM rows must share one non-zero dimension".into()));
    }
    if data.iter().any(|r| r.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("SOM training data must be finite".into()));
    }

    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in data {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for r in data {
        for ((s, v), m) in std.iter_mut().zip(r.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in std.iter_mut() {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let n_units = hyper.rows * hyper.cols;
    let mut weights = Vec::with_capacity(n_units * dim);
    for _ in 0..n_units {
        for k in 0..dim {
            let u: f64 = rng.random_range(-1.0..1.0);
            weights.push(mean[k] + hyper.init_spread * std[k] * u);
        }
    }
    let mut model = SomModel {
        rows: hyper.rows,
        cols: hyper.cols,
        dim,
        weights,
        hyper: hyper.clone(),
        train_histogram: OccupancyHistogram::from_counts(hyper.rows, hyper.cols, &vec![0; n_units]),
    };

    let total_steps = hyper.epochs * data.len();
    let denom = (total_steps.max(2) - 1) as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let x = data[idx].as_ref();
            let frac = step as f64 / denom;
            let lr = decay(hyper.lr_initial, hyper.lr_final, frac);
            let radius = decay(hyper.radius_initial, hyper.radius_final, frac);
            let two_sigma2 = 2.0 * radius * radius;
            // beyond this squared grid distance the neighborhood weight is < 1e-6
            let cutoff = two_sigma2 * 13.8155;
            let b = model.bmu_index(x);
            let (bi, bj) = ((b / model.cols) as f64, (b % model.cols) as f64);
            for u in 0..n_units {
                let di = (u / model.cols) as f64 - bi;
                let dj = (u % model.cols) as f64 - bj;
                let g2 = di * di + dj * dj;
                if g2 > cutoff {
                    continue;
                }
                let h = lr * (-g2 / two_sigma2).exp();
                let w = &mut model.weights[u * dim..(u + 1) * dim];
                for (wk, xk) in w.iter_mut().zip(x) {
                    *wk += h * (xk - *wk);
                }
            }
            step += 1;
        }
    }
    model.train_histogram = model.occupancy(data)?;
    Ok(model)
}
