use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::quantile_sorted;
use crate::error::{Error, Result};
use crate::infodyn::{PhasePoint, Trajectory};

pub const DEFAULT_GRID_POINTS: usize = 51;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub tau: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub e_mean: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub e_lo: Vec<f64>,
    pub e_hi: Vec<f64>,
    pub n: usize,
}

/// `m` evenly spaced points spanning `[0, 1]`.
pub fn tau_grid(m: usize) -> Vec<f64> {
    match m {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..m).map(|k| k as f64 / (m - 1) as f64).collect(),
    }
}

/// Linear interpolation of normalized `(u, e)` at each `tau`. Values outside
/// the trajectory's τ range take the nearest endpoint.
pub fn resample(points: &[PhasePoint], taus: &[f64]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "resampling needs at least 2 points, got {}",
            points.len()
        )));
    }
    Ok(taus
        .iter()
        .map(|&t| {
            let k = points.partition_point(|p| p.tau <= t).clamp(1, points.len() - 1);
            let (a, b) = (&points[k - 1], &points[k]);
            let span = b.tau - a.tau;
            let w = if span > 0.0 {
                ((t - a.tau) / span).clamp(0.0, 1.0)
            } else {
                1.0
            };
            (a.u + w * (b.u - a.u), a.e + w * (b.e - a.e))
        })
        .collect())
}

fn resample_all(cohort: &[Trajectory], taus: &[f64]) -> Result<Vec<Vec<(f64, f64)>>> {
    if cohort.is_empty() {
        return Err(Error::Empty("cohort has no trajectories".into()));
    }
    cohort
        .iter()
        .map(|t| {
            resample(&t.points, taus).map_err(|e| Error::InvalidTrace {
                id: t.trace_id.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn pointwise_mean(curves: &[Vec<(f64, f64)>], pick: impl Iterator<Item = usize> + Clone, m: usize) -> Vec<(f64, f64)> {
    let n = pick.clone().count() as f64;
    (0..m)
        .map(|k| {
            let (su, se) = pick
                .clone()
                .fold((0.0, 0.0), |(su, se), i| (su + curves[i][k].0, se + curves[i][k].1));
            (su / n, se / n)
        })
        .collect()
}

/// Pointwise mean of the cohort on `taus`, without a band.
pub fn mean_curve(cohort: &[Trajectory], taus: &[f64]) -> Result<Vec<(f64, f64)>> {
    let curves = resample_all(cohort, taus)?;
    Ok(pointwise_mean(&curves, 0..curves.len(), taus.len()))
}

/// Mean trajectory on an `m`-point τ grid with a 95% percentile bootstrap
/// band. Resample `b` draws from `derive_seed(seed, b)`.
pub fn mean_trajectory(cohort: &[Trajectory], m: usize, bootstrap_n: usize, seed: u64) -> Result<MeanTrajectory> {
    if m < 2 {
        return Err(Error::invalid("τ grid needs at least 2 points"));
    }
    let taus = tau_grid(m);
    let curves = resample_all(cohort, &taus)?;
    let n = curves.len();
    let mean = pointwise_mean(&curves, 0..n, m);

    let boots: Vec<Vec<(f64, f64)>> = crate::par::map_range(bootstrap_n, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::par::derive_seed(seed, b as u64));
        let draw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        pointwise_mean(&curves, draw.into_iter(), m)
    });

    let mut out = MeanTrajectory {
        tau: taus,
        u_mean: mean.iter().map(|p| p.0).collect(),
        e_mean: mean.iter().map(|p| p.1).collect(),
        u_lo: Vec::with_capacity(m),
        u_hi: Vec::with_capacity(m),
        e_lo: Vec::with_capacity(m),
        e_hi: Vec::with_capacity(m),
        n,
    };
    for k in 0..m {
        let (mu, me) = mean[k];
        if boots.is_empty() {
            out.u_lo.push(mu);
            out.u_hi.push(mu);
            out.e_lo.push(me);
            out.e_hi.push(me);
            continue;
        }
        let mut us: Vec<f64> = boots.iter().map(|c| c[k].0).collect();
        let mut es: Vec<f64> = boots.iter().map(|c| c[k].1).collect();
        us.sort_by(f64::total_cmp);
        es.sort_by(f64::total_cmp);
        // the band must contain the mean even when the percentile misses it by rounding
        out.u_lo.push(quantile_sorted(&us, 0.025).min(mu));
        out.u_hi.push(quantile_sorted(&us, 0.975).max(mu));
        out.e_lo.push(quantile_sorted(&es, 0.025).min(me));
        out.e_hi.push(quantile_sorted(&es, 0.975).max(me));
    }
    Ok(out)
}

fn cosine(a: (f64, f64), b: (f64, f64)) -> Option<f64> {
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine between the velocity vectors of the two cohorts' mean
/// trajectories, over grid segments whose midpoint lies in `window`.
/// Segments where either velocity is zero are skipped.
pub fn cohort_cosine(a: &[Trajectory], b: &[Trajectory], window: (f64, f64), m: usize) -> Result<f64> {
    let (lo, hi) = window;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::invalid(format!("τ window [{lo}, {hi}] is not inside [0, 1]")));
    }
    if m < 2 {
        return Err(Error::invalid("τ grid needs at least 2 points"));
    }
    let taus = tau_grid(m);
    let ma = mean_curve(a, &taus)?;
    let mb = mean_curve(b, &taus)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..m - 1 {
        let mid = 0.5 * (taus[k] + taus[k + 1]);
        if mid < lo || mid > hi {
            continue;
        }
        let dt = taus[k + 1] - taus[k];
        let va = ((ma[k + 1].0 - ma[k].0) / dt, (ma[k + 1].1 - ma[k].1) / dt);
        let vb = ((mb[k + 1].0 - mb[k].0) / dt, (mb[k + 1].1 - mb[k].1) / dt);
        if let Some(c) = cosine(va, vb) {
            sum += c;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Numerical(
            "mean velocity is zero at every grid point in the window".into(),
        ));
    }
    Ok(sum / count as f64)
}
