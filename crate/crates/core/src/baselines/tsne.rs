//! Exact O(N²) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Iteration at which momentum switches from 0.5 to 0.8.
    pub momentum_switch: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            seed: 42,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_switch: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// KL(P || Q) at the final iteration.
    pub kl: f64,
    /// KL(P || Q) right after early exaggeration ends.
    pub kl_after_exaggeration: Option<f64>,
    /// Largest `|H(P_i) - ln(perplexity)|` over rows.
    pub max_entropy_error: f64,
    pub config: TsneConfig,
}

/// Entropy target tolerance for the per-row bandwidth search.
const ENTROPY_TOL: f64 = 1e-10;

fn squared_distances(data: &[Vec<f64>]) -> Vec<f64> {
    let n = data.len();
    let mut d = vec![0.0; n * n];
    par::for_each_row(&mut d, n, |i, row| {
        for (j, out) in row.iter_mut().enumerate() {
            *out = data[i].iter().zip(&data[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Conditional distribution of row `i` at precision `beta` and its entropy.
fn row_distribution(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // shift by the smallest off-diagonal distance; the entropy is invariant
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut dot = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let w = (-(d - dmin) * beta).exp();
        *o = w;
        sum += w;
        dot += (d - dmin) * w;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * dot / sum
}

/// Row-conditional affinities calibrated so each row's entropy equals
/// `ln(perplexity)`. Returns the row-major matrix and the largest entropy
/// error.
pub fn calibrate(dist: &[f64], n: usize, perplexity: f64) -> Result<(Vec<f64>, f64)> {
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = par::map_range(n, |i| {
        let d = &dist[i * n..(i + 1) * n];
        let mut row = vec![0.0; n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = row_distribution(d, i, beta, &mut row);
        for _ in 0..200 {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
            h = row_distribution(d, i, beta, &mut row);
        }
        (row, (h - target).abs())
    });
    let mut p = Vec::with_capacity(n * n);
    let mut errs = Vec::with_capacity(n);
    for (row, e) in rows {
        p.extend(row);
        errs.push(e);
    }
    let max_err = errs.iter().copied().fold(0.0, f64::max);
    if !max_err.is_finite() {
        return Err(Error::Numerical("perplexity calibration diverged".into()));
    }
    Ok((p, max_err))
}

fn kl_divergence(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(1e-300)).ln())
        .sum()
}

/// Student-t kernel matrix of the embedding and its off-diagonal sum.
fn kernel(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    par::for_each_row(num, n, |i, row| {
        for (j, out) in row.iter_mut().enumerate() {
            *out = if i == j {
                0.0
            } else {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                1.0 / (1.0 + dx * dx + dy * dy)
            };
        }
    });
    // row sums in index order keep the total independent of thread count
    let rows: Vec<f64> = par::map_range(n, |i| num[i * n..(i + 1) * n].iter().sum());
    rows.iter().sum()
}

/// Exact t-SNE of `data` into two dimensions.
pub fn tsne(data: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = data.len();
    if n < 4 {
        return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(cfg.perplexity > 1.0) || cfg.perplexity >= (n - 1) as f64 / 3.0 {
        return Err(Error::invalid(format!(
            "perplexity {} infeasible for {n} points (need 1 < perplexity < {:.3})",
            cfg.perplexity,
            (n - 1) as f64 / 3.0
        )));
    }
    let d = data[0].len();
    if data.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::invalid("t-SNE input must be finite with uniform dimension"));
    }

    let dist = squared_distances(data);
    let (cond, max_entropy_error) = calibrate(&dist, n, cfg.perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-2).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl_after = None;

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch { 0.5 } else { 0.8 };
        let z = kernel(&y, &mut num);
        if it == cfg.exaggeration_iters {
            kl_after = Some(kl_divergence(&p, &num, z));
        }
        let grad: Vec<[f64; 2]> = par::map_range(n, |i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                let nij = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - nij / z) * nij;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        });
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (update[i][a] > 0.0);
                gains[i][a] = if same_sign {
                    gains[i][a] * 0.8
                } else {
                    gains[i][a] + 0.2
                };
                gains[i][a] = gains[i][a].max(0.01);
                update[i][a] = momentum * update[i][a] - cfg.learning_rate * gains[i][a] * grad[i][a];
                y[i][a] += update[i][a];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        for v in &mut y {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
    }
    let z = kernel(&y, &mut num);
    Ok(TsneResult {
        kl: kl_divergence(&p, &num, z),
        kl_after_exaggeration: kl_after,
        coords: y,
        max_entropy_error,
        config: cfg.clone(),
    })
}
