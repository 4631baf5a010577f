//! Ridge regression baselines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::harness::metrics::pcc;

/// Linear model fitted on standardised features.
#[derive(Clone, Debug)]
pub struct Ridge {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl Ridge {
    /// Closed-form fit; solves the dual system when there are more
    /// features than samples.
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::InvalidArgument("ridge needs matching nonempty x and y".into()));
        }
        let p = x[0].len();
        if p == 0 || x.iter().any(|r| r.len() != p) {
            return Err(Error::Shape("ragged ridge design matrix".into()));
        }
        let mut mean = vec![0.0; p];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; p];
        for r in x {
            for j in 0..p {
                scale[j] += (r[j] - mean[j]).powi(2) / n as f64;
            }
        }
        let scale: Vec<f64> = scale.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let xs = DMatrix::from_fn(n, p, |i, j| (x[i][j] - mean[j]) / scale[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
        let w = if p <= n {
            let a = xs.transpose() * &xs + DMatrix::identity(p, p) * lambda;
            let b = xs.transpose() * &yc;
            solve(a, b)?
        } else {
            let k = &xs * xs.transpose() + DMatrix::identity(n, n) * lambda;
            xs.transpose() * solve(k, yc)?
        };
        Ok(Self {
            mean,
            scale,
            weights: w.iter().copied().collect(),
            bias: ym,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) / s * w)
                .sum::<f64>()
    }

    /// Picks the penalty with the best PCC on the last fifth of the data,
    /// then refits on everything.
    pub fn fit_tuned(x: &[Vec<f64>], y: &[f64], grid: &[f64]) -> Result<(Self, f64)> {
        let cut = x.len() * 4 / 5;
        if cut < 2 || x.len() - cut < 2 {
            return Err(Error::InvalidArgument("too few samples to tune ridge".into()));
        }
        let mut best = (f64::NEG_INFINITY, grid[0]);
        for &lambda in grid {
            let m = Self::fit(&x[..cut], &y[..cut], lambda)?;
            let pred: Vec<f64> = x[cut..].iter().map(|r| m.predict(r)).collect();
            let r = pcc(&pred, &y[cut..]).unwrap_or(f64::NEG_INFINITY);
            if r > best.0 {
                best = (r, lambda);
            }
        }
        Ok((Self::fit(x, y, best.1)?, best.1))
    }
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::InvalidArgument("ridge system is not positive definite".into()))
}

/// Default penalty grid.
pub const LAMBDA_GRID: [f64; 9] = [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5];
