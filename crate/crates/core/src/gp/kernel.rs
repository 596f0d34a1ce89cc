//! Squared-exponential ARD kernel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of a single output dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    /// One per input dimension.
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>, noise_variance: f64) -> Self {
        Self { signal_variance, length_scales, noise_variance }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !ok(self.noise_variance) || !self.length_scales.iter().all(|l| ok(*l))
        {
            return Err(Error::InvalidInput(format!("kernel hyperparameters must be > 0: {self:?}")));
        }
        Ok(())
    }

    /// `k(a, b) = σ_f² exp(−½ Σ_d (a_d − b_d)² / ℓ_d²)`
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// Row-major copy of `inputs` with every column divided by its length scale.
pub(crate) fn scale_rows(inputs: &DMatrix<f64>, length_scales: &[f64]) -> Vec<f64> {
    let (n, d) = inputs.shape();
    let mut out = Vec::with_capacity(n * d);
    for r in 0..n {
        for c in 0..d {
            out.push(inputs[(r, c)] / length_scales[c]);
        }
    }
    out
}

/// Noise-free Gram matrix from pre-scaled rows.
pub(crate) fn gram(scaled: &[f64], d: usize, signal_variance: f64) -> DMatrix<f64> {
    let n = scaled.len() / d;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let zi = &scaled[i * d..(i + 1) * d];
        k[(i, i)] = signal_variance;
        for j in 0..i {
            let zj = &scaled[j * d..(j + 1) * d];
            let r2: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = signal_variance * (-0.5 * r2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}
