//! Empirical information flow field on the unit square.
//!
//! Consecutive phase points give segment velocities `(du/dtau, de/dtau)`
//! located at the segment midpoint. Samples are binned on a uniform `nx x ny`
//! grid over `[0, 1]^2`; each cell keeps the arithmetic mean velocity plus an
//! estimate of the velocity at the cell center (see [`CellEstimator`]), which
//! is what the divergence stencil consumes.

mod divergence;
mod potential;
mod simulate;

pub use divergence::{discrete_divergence, liouville_report, DivergenceMap, LiouvilleReport};
pub use potential::{hamiltonian_energy, reconstruct_potential, PotentialProfile, DEFAULT_MIN_SAMPLES};
pub use simulate::{leapfrog, simulate_ensemble, simulate_trajectory, SimulationParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infodyn::{PhasePoint, Trajectory};

pub const DEFAULT_GRID: usize = 20;
pub const DEFAULT_MIN_COUNT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            nx: DEFAULT_GRID,
            ny: DEFAULT_GRID,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::invalid(format!(
                "grid {nx}x{ny}: both dimensions must be at least 3"
            )));
        }
        Ok(Grid { nx, ny })
    }

    pub fn du(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn de(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index with `i` (u direction) fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.du(), (j as f64 + 0.5) * self.de())
    }

    /// Cell containing `(u, e)`; the upper domain edge belongs to the last
    /// cell. Points outside `[0, 1]^2` have no cell.
    pub fn cell_of(&self, u: f64, e: f64) -> Option<(usize, usize)> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&e) {
            return None;
        }
        let i = ((u * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((e * self.ny as f64) as usize).min(self.ny - 1);
        Some((i, j))
    }
}

/// A segment velocity located at the segment midpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub u: f64,
    pub e: f64,
    pub v1: f64,
    pub v2: f64,
    /// Midpoint of the segment in tau.
    pub tau: f64,
    /// Step index at the end of the segment.
    pub step_index: i64,
}

/// Finite-difference velocities between consecutive points, skipping any
/// segment that starts at an origin-flagged point.
pub fn segment_velocities(points: &[PhasePoint]) -> Result<Vec<VelocitySample>> {
    let usable = points.iter().filter(|p| !p.origin).count();
    if usable < 2 {
        return Err(Error::invalid(format!(
            "trajectory has {usable} usable points, need at least 2"
        )));
    }
    let mut out = Vec::with_capacity(points.len() - 1);
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.origin {
            continue;
        }
        let dt = b.tau - a.tau;
        if dt == 0.0 {
            return Err(Error::invalid(format!(
                "zero τ increment between steps {} and {}",
                a.step_index, b.step_index
            )));
        }
        out.push(VelocitySample {
            u: 0.5 * (a.u + b.u),
            e: 0.5 * (a.e + b.e),
            v1: (b.u - a.u) / dt,
            v2: (b.e - a.e) / dt,
            tau: 0.5 * (a.tau + b.tau),
            step_index: b.step_index,
        });
    }
    Ok(out)
}

/// Velocity samples of many trajectories, concatenated in input order.
/// Trajectories too short to yield a segment contribute nothing.
pub fn corpus_velocities(trajectories: &[Trajectory]) -> Vec<VelocitySample> {
    crate::par::map(trajectories, |t| segment_velocities(&t.points).unwrap_or_default())
        .into_iter()
        .flatten()
        .collect()
}

/// How a cell's velocity at its center is estimated from its samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellEstimator {
    /// Arithmetic mean of the cell's samples.
    Mean,
    /// Least-squares affine fit `v = a + B (x - c)` evaluated at the cell
    /// center `c`. Removes the first-order bias of the mean when samples are
    /// not centered in the cell; falls back to the mean for small or
    /// degenerate sample clouds.
    #[default]
    Affine,
}

impl std::str::FromStr for CellEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(CellEstimator::Mean),
            "affine" => Ok(CellEstimator::Affine),
            _ => Err(Error::invalid(format!("unknown cell estimator {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldOptions {
    pub estimator: CellEstimator,
    /// Cells with fewer samples count as empty for the divergence.
    pub min_count: usize,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            estimator: CellEstimator::Affine,
            min_count: DEFAULT_MIN_COUNT,
        }
    }
}

/// Smallest sample count for the affine fit.
const AFFINE_MIN_SAMPLES: usize = 6;
/// Required spread of the sample cloud, relative to a uniformly filled cell.
const AFFINE_MIN_SPREAD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub count: usize,
    pub v1_mean: f64,
    pub v2_mean: f64,
    pub density: f64,
    pub u_mean: f64,
    pub e_mean: f64,
    /// Velocity estimate at the cell center.
    pub v1_center: f64,
    pub v2_center: f64,
}

/// Raw per-cell sums, relative to the cell center. Mergeable across shards.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct CellSums {
    n: usize,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
    v1: f64,
    v2: f64,
    xv1: f64,
    yv1: f64,
    xv2: f64,
    yv2: f64,
}

impl CellSums {
    fn add(&mut self, x: f64, y: f64, v1: f64, v2: f64) {
        self.n += 1;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.xy += x * y;
        self.yy += y * y;
        self.v1 += v1;
        self.v2 += v2;
        self.xv1 += x * v1;
        self.yv1 += y * v1;
        self.xv2 += x * v2;
        self.yv2 += y * v2;
    }

    fn merge(&mut self, o: &CellSums) {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.xy += o.xy;
        self.yy += o.yy;
        self.v1 += o.v1;
        self.v2 += o.v2;
        self.xv1 += o.xv1;
        self.yv1 += o.yv1;
        self.xv2 += o.xv2;
        self.yv2 += o.yv2;
    }

    fn finish(&self, grid: &Grid, i: usize, j: usize, total: usize, est: CellEstimator) -> CellStats {
        if self.n == 0 {
            return CellStats::default();
        }
        let n = self.n as f64;
        let (uc, ec) = grid.center(i, j);
        let (mx, my) = (self.x / n, self.y / n);
        let (m1, m2) = (self.v1 / n, self.v2 / n);
        let mut stats = CellStats {
            count: self.n,
            v1_mean: m1,
            v2_mean: m2,
            density: n / total as f64,
            u_mean: uc + mx,
            e_mean: ec + my,
            v1_center: m1,
            v2_center: m2,
        };
        if est == CellEstimator::Affine && self.n >= AFFINE_MIN_SAMPLES {
            let sxx = self.xx / n - mx * mx;
            let sxy = self.xy / n - mx * my;
            let syy = self.yy / n - my * my;
            let det = sxx * syy - sxy * sxy;
            let uniform = (grid.du() * grid.du() / 12.0) * (grid.de() * grid.de() / 12.0);
            if det > AFFINE_MIN_SPREAD * uniform {
                let solve = |sxv: f64, syv: f64| {
                    let b = (syy * sxv - sxy * syv) / det;
                    let c = (sxx * syv - sxy * sxv) / det;
                    (b, c)
                };
                let (b1, c1) = solve(self.xv1 / n - mx * m1, self.yv1 / n - my * m1);
                let (b2, c2) = solve(self.xv2 / n - mx * m2, self.yv2 / n - my * m2);
                stats.v1_center = m1 - b1 * mx - c1 * my;
                stats.v2_center = m2 - b2 * mx - c2 * my;
            }
        }
        stats
    }
}

/// Shard-level accumulator; [`FieldAccumulator::merge`] combines shards.
#[derive(Clone, Debug)]
pub struct FieldAccumulator {
    grid: Grid,
    sums: Vec<CellSums>,
    /// Samples outside the unit square.
    pub dropped: usize,
}

impl FieldAccumulator {
    pub fn new(grid: Grid) -> Self {
        FieldAccumulator {
            grid,
            sums: vec![CellSums::default(); grid.len()],
            dropped: 0,
        }
    }

    /// Adds samples after sorting them into a canonical order, so the
    /// floating-point sums do not depend on input order.
    pub fn add_samples(&mut self, samples: &[VelocitySample]) {
        let mut keyed: Vec<(usize, &VelocitySample)> = Vec::with_capacity(samples.len());
        for s in samples {
            match self.grid.cell_of(s.u, s.e) {
                Some((i, j)) => keyed.push((self.grid.index(i, j), s)),
                None => self.dropped += 1,
            }
        }
        keyed.sort_by(|(ka, a), (kb, b)| {
            ka.cmp(kb)
                .then(a.u.total_cmp(&b.u))
                .then(a.e.total_cmp(&b.e))
                .then(a.v1.total_cmp(&b.v1))
                .then(a.v2.total_cmp(&b.v2))
        });
        for (k, s) in keyed {
            let (i, j) = (k % self.grid.nx, k / self.grid.nx);
            let (uc, ec) = self.grid.center(i, j);
            self.sums[k].add(s.u - uc, s.e - ec, s.v1, s.v2);
        }
    }

    pub fn merge(&mut self, other: &FieldAccumulator) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::invalid("cannot merge accumulators on different grids"));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        self.dropped += other.dropped;
        Ok(())
    }

    pub fn finish(&self, opts: FieldOptions) -> Result<FlowField> {
        let total: usize = self.sums.iter().map(|s| s.n).sum();
        if total == 0 {
            return Err(Error::Empty("no velocity samples inside the unit square".into()));
        }
        let g = self.grid;
        let cells = (0..g.len())
            .map(|k| self.sums[k].finish(&g, k % g.nx, k / g.nx, total, opts.estimator))
            .collect();
        Ok(FlowField {
            grid: g,
            cells,
            min_count: opts.min_count,
            dropped: self.dropped,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub grid: Grid,
    /// Row-major cells, see [`Grid::index`].
    pub cells: Vec<CellStats>,
    pub min_count: usize,
    pub dropped: usize,
}

impl FlowField {
    pub fn cell(&self, i: usize, j: usize) -> &CellStats {
        &self.cells[self.grid.index(i, j)]
    }

    /// Whether the cell has enough samples to take part in the divergence.
    pub fn is_populated(&self, i: usize, j: usize) -> bool {
        let c = self.cell(i, j);
        c.count > 0 && c.count >= self.min_count
    }

    /// Field sampled from a function at cell centers, one unit of weight per
    /// cell. Used for analytic checks of the stencil.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let n = grid.len();
        let cells = (0..n)
            .map(|k| {
                let (u, e) = grid.center(k % grid.nx, k / grid.nx);
                let (v1, v2) = f(u, e);
                CellStats {
                    count: 1,
                    v1_mean: v1,
                    v2_mean: v2,
                    density: 1.0 / n as f64,
                    u_mean: u,
                    e_mean: e,
                    v1_center: v1,
                    v2_center: v2,
                }
            })
            .collect();
        FlowField {
            grid,
            cells,
            min_count: 1,
            dropped: 0,
        }
    }

    /// Mean speed `|v_mean|` over non-empty cells.
    pub fn mean_speed(&self) -> f64 {
        let speeds: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.count > 0)
            .map(|c| c.v1_mean.hypot(c.v2_mean))
            .collect();
        if speeds.is_empty() {
            0.0
        } else {
            speeds.iter().sum::<f64>() / speeds.len() as f64
        }
    }

    pub fn non_empty(&self) -> usize {
        self.cells.iter().filter(|c| c.count > 0).count()
    }
}

/// Bins velocity samples and finishes the per-cell statistics.
pub fn accumulate_field(samples: &[VelocitySample], grid: Grid, opts: FieldOptions) -> Result<FlowField> {
    if samples.is_empty() {
        return Err(Error::Empty("no velocity samples".into()));
    }
    let mut acc = FieldAccumulator::new(grid);
    acc.add_samples(samples);
    acc.finish(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(tau: f64, u: f64, e: f64) -> PhasePoint {
        PhasePoint {
            step_index: 0,
            tau,
            u_raw: u,
            e_raw: e,
            u,
            e,
            origin: false,
        }
    }

    fn sample(u: f64, e: f64, v1: f64, v2: f64) -> VelocitySample {
        VelocitySample {
            u,
            e,
            v1,
            v2,
            tau: 0.0,
            step_index: 0,
        }
    }

    #[test]
    fn single_segment_velocity() {
        let s = segment_velocities(&[pt(0.0, 0.8, 0.1), pt(1.0, 0.2, 0.5)]).unwrap();
        assert_eq!(s.len(), 1);
        assert_abs_diff_eq!(s[0].u, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].e, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].v1, -0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].v2, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn collinear_points_share_velocity() {
        let s = segment_velocities(&[pt(0.0, 0.0, 0.0), pt(0.5, 0.25, 0.1), pt(1.0, 0.5, 0.2)]).unwrap();
        assert_eq!(s.len(), 2);
        assert_abs_diff_eq!(s[0].v1, s[1].v1, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].v2, s[1].v2, epsilon = 1e-15);
    }

    #[test]
    fn duplicate_tau_rejected() {
        let err = segment_velocities(&[pt(0.5, 0.0, 0.0), pt(0.5, 0.1, 0.1)]).unwrap_err();
        assert!(err.to_string().contains("zero τ increment"));
    }

    #[test]
    fn origin_segment_is_skipped() {
        let mut pts = vec![pt(0.0, 0.1, 0.0), pt(0.5, 0.2, 0.1), pt(1.0, 0.3, 0.1)];
        pts[0].origin = true;
        assert_eq!(segment_velocities(&pts).unwrap().len(), 1);
        assert!(segment_velocities(&pts[..2]).is_err());
    }

    #[test]
    fn cell_mean_of_two_samples() {
        let g = Grid::new(4, 4).unwrap();
        let f = accumulate_field(
            &[sample(0.1, 0.1, 1.0, 0.0), sample(0.12, 0.15, 0.0, 1.0)],
            g,
            FieldOptions::default(),
        )
        .unwrap();
        let c = f.cell(0, 0);
        assert_eq!(c.count, 2);
        assert_eq!((c.v1_mean, c.v2_mean), (0.5, 0.5));
        assert_eq!(c.density, 1.0);
    }

    #[test]
    fn distinct_cells_share_density() {
        let g = Grid::new(4, 4).unwrap();
        let samples = [
            sample(0.1, 0.1, 1.0, 0.0),
            sample(0.6, 0.1, 1.0, 0.0),
            sample(0.9, 0.9, 1.0, 0.0),
        ];
        let f = accumulate_field(&samples, g, FieldOptions::default()).unwrap();
        let populated: Vec<&CellStats> = f.cells.iter().filter(|c| c.count > 0).collect();
        assert_eq!(populated.len(), 3);
        for c in &populated {
            assert_eq!(c.count, 1);
            assert_abs_diff_eq!(c.density, 1.0 / 3.0);
        }
        let total: f64 = f.cells.iter().map(|c| c.density).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn permuted_input_gives_identical_field() {
        let mut samples: Vec<VelocitySample> = (0..500)
            .map(|k| {
                let x = (k as f64 * 0.618_033_988_7).fract();
                let y = (k as f64 * 0.754_877_666_2).fract();
                sample(x, y, y - 0.5, 0.5 - x)
            })
            .collect();
        let g = Grid::new(5, 5).unwrap();
        let a = accumulate_field(&samples, g, FieldOptions::default()).unwrap();
        samples.reverse();
        samples.rotate_left(137);
        let b = accumulate_field(&samples, g, FieldOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn affine_estimator_recovers_linear_field_at_center() {
        // off-center samples of V = (e, -u)
        let g = Grid::new(10, 10).unwrap();
        let samples: Vec<VelocitySample> = (0..40)
            .map(|k| {
                let x = 0.51 + 0.03 * (k as f64 * 0.618_033_988_7).fract();
                let y = 0.31 + 0.05 * (k as f64 * 0.381_966_011_3).fract();
                sample(x, y, y, -x)
            })
            .collect();
        let f = accumulate_field(&samples, g, FieldOptions::default()).unwrap();
        let c = f.cell(5, 3);
        let (uc, ec) = g.center(5, 3);
        assert_abs_diff_eq!(c.v1_center, ec, epsilon = 1e-12);
        assert_abs_diff_eq!(c.v2_center, -uc, epsilon = 1e-12);
        assert!((c.v1_mean - ec).abs() > 1e-3);
    }

    #[test]
    fn shard_merge_matches_pooled_within_rounding() {
        let samples: Vec<VelocitySample> = (0..300)
            .map(|k| {
                let x = (k as f64 * 0.618_033_988_7).fract();
                let y = (k as f64 * 0.754_877_666_2).fract();
                sample(x, y, x * y, x - y)
            })
            .collect();
        let g = Grid::new(4, 4).unwrap();
        let pooled = accumulate_field(&samples, g, FieldOptions::default()).unwrap();
        let mut a = FieldAccumulator::new(g);
        a.add_samples(&samples[..120]);
        let mut b = FieldAccumulator::new(g);
        b.add_samples(&samples[120..]);
        a.merge(&b).unwrap();
        let merged = a.finish(FieldOptions::default()).unwrap();
        for (p, m) in pooled.cells.iter().zip(&merged.cells) {
            assert_eq!(p.count, m.count);
            assert_abs_diff_eq!(p.v1_mean, m.v1_mean, epsilon = 1e-12);
            assert_abs_diff_eq!(p.v2_center, m.v2_center, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_and_outside_samples() {
        let g = Grid::new(3, 3).unwrap();
        assert!(accumulate_field(&[], g, FieldOptions::default()).is_err());
        assert!(accumulate_field(&[sample(1.5, 0.5, 1.0, 1.0)], g, FieldOptions::default()).is_err());
        assert!(Grid::new(2, 5).is_err());
        assert_eq!(g.cell_of(1.0, 1.0), Some((2, 2)));
    }
}
