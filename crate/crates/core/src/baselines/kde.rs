use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `sigma * n^(-1/6)` with `sigma` the pooled per-axis standard deviation.
    #[default]
    Scott,
    Fixed(f64),
}

/// Evaluation grid. Without explicit bounds the grid spans the data
/// bounding box padded by `padding` bandwidths on every side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeSpec {
    pub nx: usize,
    pub ny: usize,
    pub bounds: Option<[f64; 4]>,
    pub padding: f64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            nx: 100,
            ny: 100,
            bounds: None,
            padding: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major densities at cell centers, index `j * nx + i`.
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n: usize,
}

impl LandscapeGrid {
    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.x_max - self.x_min) / self.nx as f64,
            (self.y_max - self.y_min) / self.ny as f64,
        )
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (self.x_min + (i as f64 + 0.5) * dx, self.y_min + (j as f64 + 0.5) * dy)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.density[j * self.nx + i]
    }

    /// Riemann sum of density times cell area.
    pub fn mass(&self) -> f64 {
        let (dx, dy) = self.cell_size();
        self.density.iter().sum::<f64>() * dx * dy
    }
}

pub fn scott_bandwidth(points: &[[f64; 2]]) -> Result<f64> {
    let n = points.len() as f64;
    let var = |a: usize| {
        let m = points.iter().map(|p| p[a]).sum::<f64>() / n;
        points.iter().map(|p| (p[a] - m) * (p[a] - m)).sum::<f64>() / (n - 1.0).max(1.0)
    };
    let sigma = (0.5 * (var(0) + var(1))).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::invalid(
            "point cloud has zero variance; Scott's rule needs an explicit bandwidth",
        ));
    }
    Ok(sigma * n.powf(-1.0 / 6.0))
}

/// Isotropic Gaussian KDE evaluated at cell centers.
pub fn kde_landscape(points: &[[f64; 2]], bandwidth: Bandwidth, spec: LandscapeSpec) -> Result<LandscapeGrid> {
    if points.is_empty() {
        return Err(Error::Empty("KDE needs at least one point".into()));
    }
    if spec.nx == 0 || spec.ny == 0 {
        return Err(Error::invalid("landscape grid must have cells"));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid("KDE points must be finite"));
    }
    let h = match bandwidth {
        Bandwidth::Scott => scott_bandwidth(points)?,
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
    };
    let [x_min, x_max, y_min, y_max] = match spec.bounds {
        Some(b) => b,
        None => {
            let pad = spec.padding * h;
            let fold = |a: usize, f: fn(f64, f64) -> f64, init: f64| points.iter().map(|p| p[a]).fold(init, f);
            [
                fold(0, f64::min, f64::INFINITY) - pad,
                fold(0, f64::max, f64::NEG_INFINITY) + pad,
                fold(1, f64::min, f64::INFINITY) - pad,
                fold(1, f64::max, f64::NEG_INFINITY) + pad,
            ]
        }
    };
    if !(x_max > x_min && y_max > y_min) {
        return Err(Error::invalid("landscape bounds are empty"));
    }
    let mut grid = LandscapeGrid {
        x_min,
        x_max,
        y_min,
        y_max,
        nx: spec.nx,
        ny: spec.ny,
        density: vec![0.0; spec.nx * spec.ny],
        bandwidth: h,
        n: points.len(),
    };
    let norm = 1.0 / (points.len() as f64 * 2.0 * PI * h * h);
    let (dx, dy) = grid.cell_size();
    par::for_each_row(&mut grid.density, spec.nx, |j, row| {
        let y = y_min + (j as f64 + 0.5) * dy;
        for (i, out) in row.iter_mut().enumerate() {
            let x = x_min + (i as f64 + 0.5) * dx;
            let s: f64 = points
                .iter()
                .map(|p| {
                    let r2 = (x - p[0]) * (x - p[0]) + (y - p[1]) * (y - p[1]);
                    (-0.5 * r2 / (h * h)).exp()
                })
                .sum();
            *out = s * norm;
        }
    });
    Ok(grid)
}
