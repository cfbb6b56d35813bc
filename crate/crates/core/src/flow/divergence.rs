use serde::{Deserialize, Serialize};

use super::{FlowField, Grid};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceMap {
    pub grid: Grid,
    /// Row-major; `None` where the stencil is undefined.
    pub values: Vec<Option<f64>>,
}

impl DivergenceMap {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[self.grid.index(i, j)]
    }

    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().filter_map(|v| *v)
    }
}

/// Central-difference divergence of the cell-center velocities:
///
/// `div_ij = (v1[i+1,j] - v1[i-1,j]) / (2 du) + (v2[i,j+1] - v2[i,j-1]) / (2 de)`
///
/// On a uniform grid this is the midpoint-rule edge-flux balance with edge
/// values taken as averages of adjacent cells. Defined only on interior cells
/// whose four neighbours are populated.
pub fn discrete_divergence(field: &FlowField) -> Result<DivergenceMap> {
    let g = field.grid;
    if g.nx < 3 || g.ny < 3 {
        return Err(Error::invalid("divergence needs at least a 3x3 grid"));
    }
    let (two_du, two_de) = (2.0 * g.du(), 2.0 * g.de());
    let mut values = vec![None; g.len()];
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            let neighbours = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)];
            if !neighbours.iter().all(|&(a, b)| field.is_populated(a, b)) {
                continue;
            }
            let d1 = (field.cell(i + 1, j).v1_center - field.cell(i - 1, j).v1_center) / two_du;
            let d2 = (field.cell(i, j + 1).v2_center - field.cell(i, j - 1).v2_center) / two_de;
            values[g.index(i, j)] = Some(d1 + d2);
        }
    }
    if values.iter().all(Option::is_none) {
        return Err(Error::Empty("no interior cell has four populated neighbours".into()));
    }
    Ok(DivergenceMap { grid: g, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleReport {
    pub mean_abs: f64,
    pub max_abs: f64,
    pub fraction_below_tolerance: f64,
    pub tolerance: f64,
    pub defined_cells: usize,
}

/// Summary of `|div|` over defined cells.
pub fn liouville_report(map: &DivergenceMap, tolerance: f64) -> LiouvilleReport {
    let abs: Vec<f64> = map.defined().map(f64::abs).collect();
    let n = abs.len();
    if n == 0 {
        return LiouvilleReport {
            mean_abs: 0.0,
            max_abs: 0.0,
            fraction_below_tolerance: 0.0,
            tolerance,
            defined_cells: 0,
        };
    }
    LiouvilleReport {
        mean_abs: abs.iter().sum::<f64>() / n as f64,
        max_abs: abs.iter().cloned().fold(0.0, f64::max),
        fraction_below_tolerance: abs.iter().filter(|&&a| a < tolerance).count() as f64 / n as f64,
        tolerance,
        defined_cells: n,
    }
}
