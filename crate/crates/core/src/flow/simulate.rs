use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infodyn::{EntropyMode, PhasePoint, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub dtau: f64,
    pub steps: usize,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to `u` and `e` after
    /// integration.
    pub noise_level: f64,
}

/// Velocity-Verlet integration of `du/dtau = e`, `de/dtau = -U'(u)`.
/// Returns `steps + 1` states including the initial one.
pub fn leapfrog(force: impl Fn(f64) -> f64, x0: (f64, f64), dtau: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    if !(dtau > 0.0) || !dtau.is_finite() {
        return Err(Error::invalid(format!("dτ must be positive, got {dtau}")));
    }
    let slope = |u: f64| {
        let g = force(u);
        if g.is_finite() {
            Ok(g)
        } else {
            Err(Error::Numerical(format!("non-finite U'({u})")))
        }
    };
    let (mut u, mut e) = x0;
    let mut g = slope(u)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((u, e));
    for _ in 0..steps {
        let half = e - 0.5 * dtau * g;
        u += dtau * half;
        g = slope(u)?;
        e = half - 0.5 * dtau * g;
        out.push((u, e));
    }
    Ok(out)
}

/// Synthetic phase-space trajectory under the separable Hamiltonian
/// `H = e^2/2 + U(u)`. Points carry `tau = k * dtau`; raw and normalized
/// coordinates are equal. Noise, when requested, is seeded and added after
/// integration.
pub fn simulate_trajectory(
    force: impl Fn(f64) -> f64,
    x0: (f64, f64),
    params: &SimulationParams,
) -> Result<Trajectory> {
    if params.steps < 2 {
        return Err(Error::invalid("simulation needs at least 2 steps"));
    }
    let mut states = leapfrog(force, x0, params.dtau, params.steps)?;
    if params.noise_level > 0.0 {
        let normal = Normal::new(0.0, params.noise_level).map_err(|e| Error::invalid(format!("noise level: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for (u, e) in &mut states {
            *u += normal.sample(&mut rng);
            *e += normal.sample(&mut rng);
        }
    }
    let points = states
        .into_iter()
        .enumerate()
        .map(|(k, (u, e))| PhasePoint {
            step_index: k as i64 + 1,
            tau: k as f64 * params.dtau,
            u_raw: u,
            e_raw: e,
            u,
            e,
            origin: false,
        })
        .collect();
    Ok(Trajectory {
        trace_id: format!("sim-{}", params.seed),
        points,
        entropy_mode: EntropyMode::Realized,
    })
}

/// Simulates one trajectory per initial condition in parallel. Trajectory `k`
/// uses seed `derive_seed(params.seed, k)`.
pub fn simulate_ensemble<F>(force: F, initial: &[(f64, f64)], params: &SimulationParams) -> Result<Vec<Trajectory>>
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    let indexed: Vec<(usize, (f64, f64))> = initial.iter().copied().enumerate().collect();
    crate::par::map(&indexed, |&(k, x0)| {
        let p = SimulationParams {
            seed: crate::par::derive_seed(params.seed, k as u64),
            ..*params
        };
        let mut t = simulate_trajectory(&force, x0, &p)?;
        t.trace_id = format!("sim-{k:05}");
        Ok(t)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(dtau: f64, steps: usize) -> SimulationParams {
        SimulationParams {
            dtau,
            steps,
            seed: 1,
            noise_level: 0.0,
        }
    }

    #[test]
    fn harmonic_oscillator_returns_after_one_period() {
        let t = simulate_trajectory(|u| u, (1.0, 0.0), &params(1e-3, 6284)).unwrap();
        let last = t.points.last().unwrap();
        assert!((last.u - 1.0).abs() < 1e-3 && last.e.abs() < 1e-3, "{last:?}");
    }

    #[test]
    fn free_motion_is_a_straight_line() {
        let t = simulate_trajectory(|_| 0.0, (0.2, 0.1), &params(1e-2, 100)).unwrap();
        for p in &t.points {
            assert_abs_diff_eq!(p.u, 0.2 + 0.1 * p.tau, epsilon = 1e-12);
            assert_eq!(p.e, 0.1);
        }
    }

    #[test]
    fn energy_drift_is_small() {
        let t = simulate_trajectory(|u| u, (0.3, 0.7), &params(1e-3, 1000)).unwrap();
        let h = |p: &PhasePoint| 0.5 * p.e * p.e + 0.5 * p.u * p.u;
        let h0 = h(&t.points[0]);
        let drift = t.points.iter().map(|p| (h(p) - h0).abs() / h0).fold(0.0, f64::max);
        assert!(drift < 1e-4, "{drift}");
    }

    #[test]
    fn non_finite_force_fails() {
        let err = simulate_trajectory(|u| 1.0 / (u - 0.5), (0.5, 0.0), &params(1e-3, 10));
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert!(simulate_trajectory(|u| u, (0.0, 0.0), &params(0.0, 10)).is_err());
        assert!(simulate_trajectory(|u| u, (0.0, 0.0), &params(0.1, 1)).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let p = SimulationParams {
            noise_level: 0.01,
            ..params(1e-2, 50)
        };
        let a = simulate_trajectory(|u| u, (0.5, 0.0), &p).unwrap();
        let b = simulate_trajectory(|u| u, (0.5, 0.0), &p).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(|u| u, (0.5, 0.0), &SimulationParams { seed: 2, ..p }).unwrap();
        assert_ne!(a, c);
    }
}
