//! Type-II maximum likelihood for one output dimension.
//!
//! Parameters live in log space, `[log σ_f², log ℓ_1..ℓ_d, log σ_n²]`, and are
//! boxed relative to the data scale. Ascent is Adam with projection onto the
//! box, restarted from perturbed starting points; the best likelihood wins.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kernel::{gram, scale_rows, KernelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Hyperparameters are fitted on a seeded random subset of at most this
    /// many points; the posterior always uses the full dataset.
    pub max_points: usize,
    /// Box half-width in decades around the data scale.
    pub log10_box: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { restarts: 3, iterations: 60, learning_rate: 0.1, max_points: 200, log10_box: 3.0 }
    }
}

/// Log marginal likelihood and its gradient in log-parameter space.
///
/// Returns `None` when the kernel matrix cannot be factorised.
pub fn log_marginal_likelihood(
    inputs: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &KernelParams,
    jitter: f64,
) -> Option<(f64, DVector<f64>)> {
    let (n, d) = inputs.shape();
    let scaled = scale_rows(inputs, &params.length_scales);
    let kf = gram(&scaled, d, params.signal_variance);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += params.noise_variance + jitter;
    }
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !lml.is_finite() {
        return None;
    }
    // W = ααᵀ − K⁻¹, ∂L/∂θ = ½ tr(W ∂K/∂θ)
    let mut w = chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);

    let mut grad = DVector::zeros(d + 2);
    let mut g_sf = 0.0;
    let mut g_ls = vec![0.0; d];
    for j in 0..n {
        let zj = &scaled[j * d..(j + 1) * d];
        for i in 0..n {
            let wk = w[(i, j)] * kf[(i, j)];
            g_sf += wk;
            if i != j {
                let zi = &scaled[i * d..(i + 1) * d];
                for c in 0..d {
                    let diff = zi[c] - zj[c];
                    g_ls[c] += wk * diff * diff;
                }
            }
        }
    }
    grad[0] = 0.5 * g_sf;
    for c in 0..d {
        grad[1 + c] = 0.5 * g_ls[c];
    }
    grad[d + 1] = 0.5 * params.noise_variance * w.trace();
    Some((lml, grad))
}

fn to_log(p: &KernelParams) -> DVector<f64> {
    let d = p.length_scales.len();
    DVector::from_fn(d + 2, |i, _| {
        if i == 0 {
            p.signal_variance.ln()
        } else if i <= d {
            p.length_scales[i - 1].ln()
        } else {
            p.noise_variance.ln()
        }
    })
}

fn from_log(v: &DVector<f64>) -> KernelParams {
    let d = v.len() - 2;
    KernelParams {
        signal_variance: v[0].exp(),
        length_scales: (0..d).map(|i| v[1 + i].exp()).collect(),
        noise_variance: v[d + 1].exp(),
    }
}

/// Data-scaled starting point and log-space box for one output.
pub(crate) struct SearchSpace {
    pub start: KernelParams,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl SearchSpace {
    pub fn from_data(inputs: &DMatrix<f64>, y: &DVector<f64>, log10_box: f64) -> Self {
        let (n, d) = inputs.shape();
        let second_moment = (y.norm_squared() / n as f64).max(1e-12);
        let spreads: Vec<f64> = (0..d)
            .map(|c| {
                let col = inputs.column(c);
                let mean = col.mean();
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let start = KernelParams::new(second_moment, spreads.clone(), 1e-2 * second_moment);
        let w = log10_box * std::f64::consts::LN_10;
        let noise_lo = (1e-6 * second_moment).ln();
        let noise_hi = second_moment.ln();
        let lower = DVector::from_fn(d + 2, |i, _| match i {
            0 => second_moment.ln() - w,
            i if i <= d => spreads[i - 1].ln() - w,
            _ => noise_lo,
        });
        let upper = DVector::from_fn(d + 2, |i, _| match i {
            0 => second_moment.ln() + w,
            i if i <= d => spreads[i - 1].ln() + w,
            _ => noise_hi,
        });
        Self { start, lower, upper }
    }

    fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}

pub(crate) fn optimize_output(
    inputs: &DMatrix<f64>,
    y: &DVector<f64>,
    jitter: f64,
    opts: &OptimizeOptions,
    seed: u64,
) -> KernelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, y) = subsample(inputs, y, opts.max_points, &mut rng);
    let space = SearchSpace::from_data(&inputs, &y, opts.log10_box);
    let base = to_log(&space.start);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut x = base.clone();
        if restart > 0 {
            for v in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += z;
            }
        }
        space.project(&mut x);
        if let Some((val, point)) = adam_ascent(&inputs, &y, jitter, x, &space, opts) {
            if best.as_ref().map_or(true, |(b, _)| val > *b) {
                best = Some((val, point));
            }
        }
    }
    match best {
        Some((_, p)) => from_log(&p),
        None => {
            log::warn!("hyperparameter search failed, keeping heuristic start");
            space.start
        }
    }
}

fn adam_ascent(
    inputs: &DMatrix<f64>,
    y: &DVector<f64>,
    jitter: f64,
    start: DVector<f64>,
    space: &SearchSpace,
    opts: &OptimizeOptions,
) -> Option<(f64, DVector<f64>)> {
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let dim = start.len();
    let mut x = start;
    let mut m = DVector::<f64>::zeros(dim);
    let mut v = DVector::<f64>::zeros(dim);
    let mut lr = opts.learning_rate;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut last_good = x.clone();
    for it in 0..opts.iterations {
        let Some((val, grad)) = log_marginal_likelihood(inputs, y, &from_log(&x), jitter) else {
            x = last_good.clone();
            lr *= 0.5;
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| val > *b) {
            best = Some((val, x.clone()));
        }
        last_good = x.clone();
        let t = (it + 1) as i32;
        for i in 0..dim {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            x[i] += lr * mh / (vh.sqrt() + eps);
        }
        space.project(&mut x);
    }
    // the final iterate has not been scored yet
    if let Some((val, _)) = log_marginal_likelihood(inputs, y, &from_log(&x), jitter) {
        if best.as_ref().map_or(true, |(b, _)| val > *b) {
            best = Some((val, x));
        }
    }
    best
}

fn subsample(
    inputs: &DMatrix<f64>,
    y: &DVector<f64>,
    max_points: usize,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = inputs.nrows();
    if n <= max_points || max_points == 0 {
        return (inputs.clone(), y.clone());
    }
    let mut idx = rand::seq::index::sample(rng, n, max_points).into_vec();
    idx.sort_unstable();
    let sub_x = DMatrix::from_fn(idx.len(), inputs.ncols(), |r, c| inputs[(idx[r], c)]);
    let sub_y = DVector::from_fn(idx.len(), |r, _| y[idx[r]]);
    (sub_x, sub_y)
}
