use serde::{Deserialize, Serialize};

use super::VelocitySample;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_SAMPLES: usize = 10;

/// Reconstructed potential `U(u)` of the separable Hamiltonian
/// `H = e^2/2 + U(u)`, on bin centers. Gauge: `U = 0` at the first retained
/// bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialProfile {
    pub centers: Vec<f64>,
    pub potential: Vec<Option<f64>>,
    pub slope: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl PotentialProfile {
    /// Profile sampled from a known potential at the given knots.
    pub fn from_fn(centers: Vec<f64>, u: impl Fn(f64) -> f64, du: impl Fn(f64) -> f64) -> Self {
        let potential = centers.iter().map(|&c| Some(u(c))).collect();
        let slope = centers.iter().map(|&c| Some(du(c))).collect();
        let counts = vec![0; centers.len()];
        PotentialProfile {
            centers,
            potential,
            slope,
            counts,
        }
    }

    fn knots(&self) -> Vec<(f64, f64)> {
        self.centers
            .iter()
            .zip(&self.potential)
            .filter_map(|(&c, u)| u.map(|u| (c, u)))
            .collect()
    }

    /// Range of `u` covered by retained bins.
    pub fn range(&self) -> Option<(f64, f64)> {
        let k = self.knots();
        Some((k.first()?.0, k.last()?.0))
    }

    /// Linear interpolation of `U` between retained knots.
    pub fn eval(&self, u: f64) -> Result<f64> {
        let knots = self.knots();
        let (lo, hi) = match (knots.first(), knots.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => return Err(Error::Empty("potential has no retained bins".into())),
        };
        if !(lo..=hi).contains(&u) {
            return Err(Error::invalid(format!(
                "u = {u} outside reconstructed range [{lo}, {hi}]"
            )));
        }
        if knots.len() == 1 {
            return Ok(knots[0].1);
        }
        let k = knots.partition_point(|&(c, _)| c <= u).clamp(1, knots.len() - 1);
        let ((x0, y0), (x1, y1)) = (knots[k - 1], knots[k]);
        let w = (u - x0) / (x1 - x0);
        Ok(y0 + w * (y1 - y0))
    }
}

/// Estimates `U'(u_k) = -mean(de/dtau)` per u-bin over `[0, 1]` and
/// integrates it by the cumulative trapezoid rule across retained bins.
pub fn reconstruct_potential(samples: &[VelocitySample], bins: usize, min_samples: usize) -> Result<PotentialProfile> {
    if bins == 0 {
        return Err(Error::invalid("need at least one u bin"));
    }
    let width = 1.0 / bins as f64;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    // sort for order-independent sums
    let mut keyed: Vec<(usize, f64)> = samples
        .iter()
        .filter(|s| (0.0..=1.0).contains(&s.u))
        .map(|s| (((s.u / width) as usize).min(bins - 1), s.v2))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for (k, v2) in keyed {
        sums[k] += v2;
        counts[k] += 1;
    }
    let centers: Vec<f64> = (0..bins).map(|k| (k as f64 + 0.5) * width).collect();
    let slope: Vec<Option<f64>> = (0..bins)
        .map(|k| (counts[k] >= min_samples.max(1)).then(|| -sums[k] / counts[k] as f64))
        .collect();

    let mut potential = vec![None; bins];
    let mut prev: Option<(f64, f64, f64)> = None; // (center, U, U')
    for k in 0..bins {
        let Some(s) = slope[k] else { continue };
        let u = match prev {
            None => 0.0,
            Some((c0, u0, s0)) => u0 + 0.5 * (s0 + s) * (centers[k] - c0),
        };
        potential[k] = Some(u);
        prev = Some((centers[k], u, s));
    }
    if prev.is_none() {
        return Err(Error::Empty(format!("no u bin has at least {min_samples} samples")));
    }
    Ok(PotentialProfile {
        centers,
        potential,
        slope,
        counts,
    })
}

/// `H = e^2 / 2 + U(u)` with `U` interpolated from the profile.
pub fn hamiltonian_energy(u: f64, e: f64, profile: &PotentialProfile) -> Result<f64> {
    Ok(0.5 * e * e + profile.eval(u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(u: f64, v2: f64) -> VelocitySample {
        VelocitySample {
            u,
            e: 0.5,
            v1: 0.0,
            v2,
            tau: 0.0,
            step_index: 0,
        }
    }

    #[test]
    fn flat_potential() {
        let samples: Vec<_> = (0..200).map(|k| s(k as f64 / 200.0, 0.0)).collect();
        let p = reconstruct_potential(&samples, 10, 10).unwrap();
        assert!(p.potential.iter().all(|u| *u == Some(0.0)));
    }

    #[test]
    fn single_bin_is_gauge_only() {
        let samples: Vec<_> = (0..12).map(|_| s(0.42, -0.3)).collect();
        let p = reconstruct_potential(&samples, 10, 10).unwrap();
        let kept: Vec<_> = p.potential.iter().flatten().collect();
        assert_eq!(kept, vec![&0.0]);
        assert_abs_diff_eq!(p.slope[4].unwrap(), 0.3);
        assert!(reconstruct_potential(&samples, 10, 20).is_err());
    }

    #[test]
    fn energy_examples() {
        let knots: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let p = PotentialProfile::from_fn(knots, |u| 0.5 * u * u, |u| u);
        assert_eq!(hamiltonian_energy(0.0, 0.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(hamiltonian_energy(0.6, 0.8, &p).unwrap(), 0.5, epsilon = 1e-12);
        assert!(hamiltonian_energy(1.2, 0.0, &p).is_err());
    }

    #[test]
    fn missing_bins_are_bridged() {
        let mut samples: Vec<_> = (0..20).map(|_| s(0.05, -0.1)).collect();
        samples.extend((0..20).map(|_| s(0.35, -0.3)));
        let p = reconstruct_potential(&samples, 10, 10).unwrap();
        assert!(p.potential[1].is_none());
        // trapezoid from 0.05 to 0.35 with slopes 0.1 and 0.3
        assert_abs_diff_eq!(p.potential[3].unwrap(), 0.5 * (0.1 + 0.3) * 0.3, epsilon = 1e-12);
    }
}
